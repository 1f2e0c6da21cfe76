#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ursct/tensor.hpp"

namespace ursct {

struct FdReport {
    double max_rel_err = 0.0;
    std::int64_t coords = 0;  // coordinates probed
};

// Compares analytic gradients of `loss_fn` (a scalar built from the leaves,
// re-runnable at will) against central finite differences. Relative error is
// |analytic - numeric| / max(1, |analytic| + |numeric|). When
// max_coords_per_leaf >= 0, that many coordinates per leaf are sampled with
// `rng`; otherwise every coordinate is probed.
FdReport finite_diff_check(const std::function<Tensor<double>()>& loss_fn,
                           std::vector<Tensor<double>> leaves, double h = 1e-5,
                           std::int64_t max_coords_per_leaf = -1, Rng* rng = nullptr);

struct GradCheckCase {
    std::string name;
    double max_rel_err = 0.0;
    double tol = 0.0;
    bool pass = false;
};

// Builtin suites (double precision). Each returns one row per probed graph.
std::vector<GradCheckCase> gradcheck_tensor_ops(std::uint64_t seed);
std::vector<GradCheckCase> gradcheck_losses(std::uint64_t seed);
std::vector<GradCheckCase> gradcheck_model(std::uint64_t seed);

}  // namespace ursct
