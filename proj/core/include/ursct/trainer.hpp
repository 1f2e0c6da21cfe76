#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ursct/checkpoint.hpp"
#include "ursct/losses.hpp"
#include "ursct/model.hpp"
#include "ursct/optim.hpp"

namespace ursct {

enum class Schedule { cosine, constant };
Schedule schedule_from_string(const std::string& s);
std::string to_string(Schedule s);

// Whether the learning-rate schedule advances per epoch or per optimizer step.
enum class LrStep { epoch, iter };
LrStep lr_step_from_string(const std::string& s);
std::string to_string(LrStep s);

struct TrainConfig {
    ModelConfig model;
    LossConfig loss;
    AdamConfig adam;
    std::int64_t batch_size = 8;
    std::int64_t epochs = 800;
    std::int64_t warmup_epochs = 3;
    std::int64_t checkpoint_every = 100;  // epochs between periodic snapshots; 0 = final only
    std::uint64_t seed = 0;
    Schedule schedule = Schedule::cosine;
    LrStep lr_step = LrStep::epoch;
    bool hflip = false;  // optional horizontal-flip augmentation
    std::string raw_dir, ref_dir, out_dir;
    void validate() const;
};

struct TrainResult {
    double first_step_loss = 0;
    double final_loss = 0;
    std::uint64_t steps = 0;
    std::string final_checkpoint;  // <out_dir>/last.ckpt
};

// Copies checkpoint tensors into the model registry by name; shape or name
// mismatches are FormatErrors.
void apply_parameters(URSCTModel<float>& model,
                      const std::vector<std::pair<std::string, Tensor<float>>>& tensors);

// Rebuilds a ready-to-run model purely from a checkpoint (config snapshot +
// weights); no external config file involved.
URSCTModel<float> model_from_checkpoint(const CheckpointState& state);

// Full training loop: per-epoch shuffled batches, forward/total_loss/backward/
// Adam at the scheduled lr, per-epoch CSV log (epoch,lr,L_C,L_gd,L_M,L_sum)
// in out_dir, periodic ckpt_epoch<N>.bin snapshots plus last.ckpt. Resuming
// restores parameters, moments, RNG, and counters so the remaining epochs
// replay exactly as an uninterrupted run.
TrainResult train(const TrainConfig& cfg, const std::optional<std::string>& resume_from = {});

struct AblationRow {
    std::string section;  // "module" | "loss" | "reference_full_scale"
    std::string cell;
    double psnr;
    double ssim;
};

struct AblationTable {
    std::vector<AblationRow> rows;
};

// Trains the three attention variants under the full objective and the three
// nested loss sets under conv_type1, all from the same seed and data, then
// scores each cell on its training set. Writes <out_dir>/ablation.csv with
// the measured cells plus the published full-scale numbers as reference rows.
AblationTable ablate(const TrainConfig& base, const std::string& out_dir);

}  // namespace ursct
