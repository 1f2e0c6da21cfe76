#include "ursct/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ursct/checkpoint.hpp"
#include "ursct/config.hpp"
#include "ursct/data.hpp"
#include "ursct/errors.hpp"
#include "ursct/metrics.hpp"

namespace fs = std::filesystem;

namespace ursct {

Schedule schedule_from_string(const std::string& s) {
    if (s == "cosine") return Schedule::cosine;
    if (s == "constant") return Schedule::constant;
    throw ConfigError("unknown schedule '" + s + "' (expected cosine|constant)");
}

std::string to_string(Schedule s) { return s == Schedule::cosine ? "cosine" : "constant"; }

LrStep lr_step_from_string(const std::string& s) {
    if (s == "epoch") return LrStep::epoch;
    if (s == "iter") return LrStep::iter;
    throw ConfigError("unknown lr_step '" + s + "' (expected epoch|iter)");
}

std::string to_string(LrStep s) { return s == LrStep::epoch ? "epoch" : "iter"; }

void TrainConfig::validate() const {
    model.validate();
    loss.validate();
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (warmup_epochs < 0) throw ConfigError("train.warmup_epochs must be >= 0");
    if (epochs > 0 && warmup_epochs >= epochs) {
        throw ConfigError("train.warmup_epochs must be < train.epochs");
    }
    if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
    if (adam.min_lr < 0) throw ConfigError("train.min_lr must be >= 0");
    if (adam.lr0 <= adam.min_lr) throw ConfigError("train.lr0 must be > train.min_lr");
    if (adam.beta1 < 0 || adam.beta1 >= 1 || adam.beta2 < 0 || adam.beta2 >= 1) {
        throw ConfigError("train.beta1/beta2 must lie in [0,1)");
    }
    if (adam.eps <= 0) throw ConfigError("train.adam_eps must be > 0");
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void flip_batch_item(Tensor<float>& batch, std::int64_t item) {
    float* d = batch.mutable_data().data();
    const std::int64_t c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    float* base = d + item * c * h * w;
    for (std::int64_t ch = 0; ch < c; ++ch) {
        for (std::int64_t y = 0; y < h; ++y) {
            float* row = base + (ch * h + y) * w;
            std::reverse(row, row + w);
        }
    }
}

CheckpointState make_state(const URSCTModel<float>& model, const Adam<float>& adam,
                           std::uint64_t step, std::uint64_t epoch, const Rng& rng,
                           const TrainConfig& cfg) {
    CheckpointState state;
    state.tensors = model.params();
    state.moments = adam.moment_tensors();
    state.step = step;
    state.epoch = epoch;
    state.rng_state = rng.serialize();
    state.config_snapshot = snapshot_config(cfg);
    return state;
}

}  // namespace

void apply_parameters(URSCTModel<float>& model,
                      const std::vector<std::pair<std::string, Tensor<float>>>& tensors) {
    if (tensors.size() != model.params().size()) {
        throw FormatError("checkpoint holds " + std::to_string(tensors.size()) +
                          " tensors, model has " + std::to_string(model.params().size()));
    }
    for (const auto& [name, t] : tensors) {
        auto& p = model.param(name);  // throws on unknown name
        if (p.shape() != t.shape()) {
            throw FormatError("checkpoint tensor '" + name + "' has shape " +
                              shape_str(t.shape()) + ", model expects " + shape_str(p.shape()));
        }
        p.payload()->values.assign(t.data().begin(), t.data().end());
    }
}

URSCTModel<float> model_from_checkpoint(const CheckpointState& state) {
    auto model_cfg = make_model_config(state.config_snapshot);
    Rng init(0);  // weights are overwritten below
    URSCTModel<float> model(model_cfg, init);
    apply_parameters(model, state.tensors);
    return model;
}

TrainResult train(const TrainConfig& cfg, const std::optional<std::string>& resume_from) {
    cfg.validate();
    if (cfg.raw_dir.empty() || cfg.ref_dir.empty() || cfg.out_dir.empty()) {
        throw ConfigError("training needs data.raw_dir, data.ref_dir and data.out_dir");
    }
    fs::create_directories(cfg.out_dir);

    auto index = scan_paired_dataset(cfg.raw_dir, cfg.ref_dir, cfg.model.image_h,
                                     cfg.model.image_w, /*require_reference=*/true);
    auto pairs = load_all(index);

    Rng init_rng(Rng::mix(cfg.seed, 1));
    URSCTModel<float> model(cfg.model, init_rng);
    Adam<float> adam(model.params(), cfg.adam);
    Rng live_rng(Rng::mix(cfg.seed, 2));

    std::uint64_t start_epoch = 0;
    std::uint64_t step = 0;
    if (resume_from) {
        auto state = load_checkpoint(*resume_from);
        apply_parameters(model, state.tensors);
        adam.load_moments(state.moments);
        adam.set_t(static_cast<std::int64_t>(state.step));
        step = state.step;
        start_epoch = state.epoch;
        live_rng.deserialize(state.rng_state);
    }

    const std::string log_path = cfg.out_dir + "/train_log.csv";
    std::ofstream log(log_path, resume_from ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot write training log '" + log_path + "'");
    if (!resume_from) log << "epoch,lr,L_C,L_gd,L_M,L_sum\n";

    const std::string last_path = cfg.out_dir + "/last.ckpt";
    const auto epochs = static_cast<std::uint64_t>(cfg.epochs);
    const double steps_per_epoch =
        std::ceil(static_cast<double>(pairs.size()) / static_cast<double>(cfg.batch_size));

    TrainResult result;
    bool first_recorded = step > 0;
    double final_loss = 0;

    for (std::uint64_t epoch = start_epoch + 1; epoch <= epochs; ++epoch) {
        auto batches = make_batches(pairs, cfg.batch_size, /*shuffle=*/true,
                                    Rng::mix(cfg.seed, 1000 + epoch));
        double sum_c = 0, sum_gd = 0, sum_m = 0, sum_total = 0;
        double row_lr = 0;
        for (auto& batch : batches) {
            if (cfg.hflip) {
                for (std::int64_t i = 0; i < batch.raw.dim(0); ++i) {
                    if (live_rng.uniform() < 0.5) {
                        flip_batch_item(batch.raw, i);
                        flip_batch_item(batch.reference, i);
                    }
                }
            }
            double lr = cfg.adam.lr0;
            if (cfg.schedule == Schedule::cosine) {
                const double e = cfg.lr_step == LrStep::epoch
                                     ? static_cast<double>(epoch)
                                     : static_cast<double>(step + 1) / steps_per_epoch;
                lr = lr_schedule(e, static_cast<double>(epochs),
                                 static_cast<double>(cfg.warmup_epochs), cfg.adam.lr0,
                                 cfg.adam.min_lr);
            }
            row_lr = lr;

            model.zero_grads();
            GradTape<float> tape;
            LossReport<float> report;
            {
                GradTape<float>::Scope scope(tape);
                auto out = model.forward(batch.raw, /*training=*/true, &live_rng);
                report = total_loss(out, batch.reference, cfg.loss);
                tape.backward(report.l_sum);
            }
            const double l_sum = report.l_sum.item();
            if (!std::isfinite(l_sum)) {
                throw NumericError("non-finite loss at step " + std::to_string(step + 1));
            }
            adam.step(lr);
            ++step;
            if (!first_recorded) {
                result.first_step_loss = l_sum;
                first_recorded = true;
            }
            final_loss = l_sum;
            sum_c += report.l_c.item();
            sum_gd += report.l_gd.item();
            sum_m += report.l_m.item();
            sum_total += l_sum;
        }
        const auto nb = static_cast<double>(batches.size());
        log << epoch << ',' << fmt(row_lr) << ',' << fmt(sum_c / nb) << ',' << fmt(sum_gd / nb)
            << ',' << fmt(sum_m / nb) << ',' << fmt(sum_total / nb) << '\n';
        log.flush();

        if (cfg.checkpoint_every > 0 &&
            epoch % static_cast<std::uint64_t>(cfg.checkpoint_every) == 0) {
            const auto state = make_state(model, adam, step, epoch, live_rng, cfg);
            save_checkpoint(state, cfg.out_dir + "/ckpt_epoch" + std::to_string(epoch) + ".bin");
            save_checkpoint(state, last_path);
        }
    }

    save_checkpoint(make_state(model, adam, step, epochs, live_rng, cfg), last_path);
    result.final_loss = final_loss;
    result.steps = step;
    result.final_checkpoint = last_path;
    return result;
}

namespace {

AblationRow score_cell(const std::string& section, const std::string& cell,
                       const TrainConfig& cfg) {
    auto result = train(cfg);
    auto state = load_checkpoint(result.final_checkpoint);
    auto model = model_from_checkpoint(state);
    const auto& mc = model.config();

    auto index = scan_paired_dataset(cfg.raw_dir, cfg.ref_dir, mc.image_h, mc.image_w,
                                     /*require_reference=*/true);
    auto enhancer = [&model, &mc](const Tensor<float>& raw) {
        auto out = model.forward(reshape(raw, {1, 3, mc.image_h, mc.image_w}), false, nullptr);
        return reshape(out, {3, mc.image_h, mc.image_w});
    };
    EvalOptions opts;
    opts.full_reference = true;
    opts.msssim_levels = cfg.loss.msssim_levels;
    auto report = evaluate_dataset(index, enhancer, opts);
    return AblationRow{section, cell, *report.mean.psnr, *report.mean.ssim};
}

}  // namespace

AblationTable ablate(const TrainConfig& base, const std::string& out_dir) {
    fs::create_directories(out_dir);
    AblationTable table;

    for (auto variant : {Variant::origin, Variant::conv_type1, Variant::conv_type2}) {
        TrainConfig cfg = base;
        cfg.model.variant = variant;
        cfg.loss.use_gradient = true;
        cfg.loss.use_msssim = true;
        cfg.out_dir = out_dir + "/module_" + to_string(variant);
        table.rows.push_back(score_cell("module", to_string(variant), cfg));
    }

    struct LossSet {
        const char* name;
        bool use_gradient, use_msssim;
    };
    const LossSet sets[] = {
        {"L_C", false, false},
        {"L_C+L_M", false, true},
        {"L_C+L_gd+L_M", true, true},
    };
    for (const auto& set : sets) {
        TrainConfig cfg = base;
        cfg.model.variant = Variant::conv_type1;
        cfg.loss.use_gradient = set.use_gradient;
        cfg.loss.use_msssim = set.use_msssim;
        cfg.out_dir = out_dir + "/loss_" + set.name;
        table.rows.push_back(score_cell("loss", set.name, cfg));
    }

    // Published full-scale results, for context only — desk-scale cells are
    // not expected to reach them.
    table.rows.push_back({"reference_full_scale", "origin", 20.90, 0.857});
    table.rows.push_back({"reference_full_scale", "conv_type1", 22.32, 0.871});
    table.rows.push_back({"reference_full_scale", "conv_type2", 21.46, 0.863});
    table.rows.push_back({"reference_full_scale", "L_C", 21.35, 0.850});
    table.rows.push_back({"reference_full_scale", "L_C+L_M", 21.74, 0.857});
    table.rows.push_back({"reference_full_scale", "L_C+L_gd+L_M", 22.32, 0.862});

    const std::string csv_path = out_dir + "/ablation.csv";
    std::ofstream csv(csv_path, std::ios::binary);
    if (!csv) throw IoError("cannot write '" + csv_path + "'");
    csv << "section,cell,psnr,ssim\n";
    for (const auto& row : table.rows) {
        char buf[80];
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f", row.psnr, row.ssim);
        csv << row.section << ',' << row.cell << ',' << buf << '\n';
    }
    return table;
}

}  // namespace ursct
