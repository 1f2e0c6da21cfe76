#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ursct/tensor.hpp"

namespace ursct {

struct AdamConfig {
    double lr0 = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double min_lr = 1e-6;
};

// Warmup/cosine decay over epoch positions e in [0, epochs]: a linear ramp
// 0 -> lr0 on [0, warmup), then
// min_lr + 0.5*(lr0-min_lr)*(1+cos(pi*(e-warmup)/(epochs-warmup))).
// Exact lr0 at e == warmup and exact min_lr at e == epochs.
double lr_schedule(double e, double epochs, double warmup, double lr0, double min_lr);

// Bias-corrected Adam without weight decay over a named parameter registry.
// Parameter handles share storage with the model, so updates apply in place.
template <typename T>
class Adam {
public:
    Adam(std::vector<std::pair<std::string, Tensor<T>>> params, AdamConfig cfg);

    // One update from the gradients currently on the parameters. Throws
    // NumericError naming the parameter on a non-finite gradient and Error if
    // a parameter has no gradient at all.
    void step(double lr);

    std::int64_t t() const { return t_; }
    void set_t(std::int64_t t) { t_ = t; }

    // Moments as named tensors ("<param>.m", "<param>.v") for checkpointing.
    std::vector<std::pair<std::string, Tensor<T>>> moment_tensors() const;
    void load_moments(const std::vector<std::pair<std::string, Tensor<T>>>& moments);

private:
    // Moments are kept at parameter precision so checkpoints capture the
    // exact optimizer state.
    struct Slot {
        std::string name;
        Tensor<T> param;
        std::vector<T> m, v;
    };
    std::vector<Slot> slots_;
    AdamConfig cfg_;
    std::int64_t t_ = 0;
};

}  // namespace ursct
