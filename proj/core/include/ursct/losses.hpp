#pragma once

#include <utility>

#include "ursct/ops.hpp"

namespace ursct {

struct LossWeights {
    double w1 = 1.0;       // Charbonnier
    double w2 = 1.0;       // gradient
    double w3 = 2.0;       // MS-SSIM
    double epsilon = 1e-3; // Charbonnier smoothing
};

// Operator behind the gradient loss: plain forward differences (default) or
// 3x3 Sobel responses.
enum class GradientOp { forward_diff, sobel };

GradientOp gradient_op_from_string(const std::string& s);
std::string to_string(GradientOp op);

struct LossConfig {
    LossWeights weights;
    // Dyadic MS-SSIM scales; scale i needs floor(min(H,W)/2^(i)) >= 11.
    // 5 scales use the canonical weights; fewer use the leading weights
    // renormalized to sum 1.
    int msssim_levels = 5;
    GradientOp gradient_op = GradientOp::forward_diff;
    // Ablation switches; a disabled component is reported as 0.
    bool use_gradient = true;
    bool use_msssim = true;
    void validate() const;
};

template <typename T>
struct LossReport {
    Tensor<T> l_c, l_gd, l_m, l_sum;  // scalars
};

// mean sqrt((xhat - x)^2 + eps^2); smooth L1 surrogate.
template <typename T>
Tensor<T> charbonnier(const Tensor<T>& xhat, const Tensor<T>& x, T eps);

// Forward-difference maps on [B,C,H,W]: Gx(i,j) = I(i,j+1) - I(i,j) with a
// zero last column, Gy analogous on rows.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> gradient_map(const Tensor<T>& img);

// Mean L1 distance between gradient maps, averaged over both directions.
template <typename T>
Tensor<T> gradient_loss(const Tensor<T>& xhat, const Tensor<T>& x,
                        GradientOp op = GradientOp::forward_diff);

// 1 - MS-SSIM over `levels` dyadic scales (Gaussian 11/1.5, K1=0.01, K2=0.03,
// range 1). Raises ConfigError, suggesting fewer levels, when the image is
// too small for the requested pyramid.
template <typename T>
Tensor<T> ms_ssim_loss(const Tensor<T>& xhat, const Tensor<T>& x, int levels = 5);

// w1*charbonnier + w2*gradient + w3*ms_ssim, components kept for logging.
template <typename T>
LossReport<T> total_loss(const Tensor<T>& xhat, const Tensor<T>& x, const LossConfig& cfg);

}  // namespace ursct
