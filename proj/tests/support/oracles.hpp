#pragma once

// Independent reference implementations used to anchor the library's numeric
// results. Everything here is written as plain scalar loops over std::vector
// buffers, on purpose: no code is shared with the library beyond the Tensor
// accessors, so an agreement between the two is meaningful evidence.

#include <optional>
#include <vector>

#include "ursct/tensor.hpp"

namespace oracle {

// Scaled dot-product window attention, one pair at a time.
// q,k,v: [Nw,U,T2,cu]; bias: [U,T2,T2]; mask (optional): [N,T2,T2] applied to
// window w as mask[w % N]. Returns head-merged [Nw,T2,U*cu].
ursct::Tensor<double> attention(const ursct::Tensor<double>& q, const ursct::Tensor<double>& k,
                                const ursct::Tensor<double>& v, const ursct::Tensor<double>& bias,
                                const std::optional<ursct::Tensor<double>>& mask, double scale);

// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1=0.01, K2=0.03,
// range 1) on the BT.601 luminance plane of [3,H,W] images in [0,1].
double ssim(const ursct::Tensor<float>& a, const ursct::Tensor<float>& b);

// Multi-scale SSIM: per level the mean contrast-structure term over valid
// Gaussian windows (clamped at 0), raised to the canonical level weight
// (leading weights renormalized when levels < 5), with the luminance term
// entering at the coarsest level; 2x2 mean-pool between levels. The [3,H,W]
// form mirrors the metric entry point, the [B,C,H,W] form the loss.
double ms_ssim(const ursct::Tensor<float>& a, const ursct::Tensor<float>& b, int levels);
double ms_ssim4(const ursct::Tensor<double>& a, const ursct::Tensor<double>& b, int levels);

// Underwater image quality measure and its components on a [3,H,W] image in
// [0,1] (internally rescaled to 0..255): UICM from alpha-trimmed (0.1)
// opponent-channel statistics, UISM from Sobel-weighted EME over 8x8 blocks,
// UIConM from log-AMEE over joint-RGB 8x8 blocks; partial blocks dropped.
double uicm(const ursct::Tensor<float>& img);
double uism(const ursct::Tensor<float>& img);
double uiconm(const ursct::Tensor<float>& img);
double uiqm(const ursct::Tensor<float>& img);

// 0.4680*sigma_chroma + 0.2745*(p99 - p1 of L) + 0.2576*mean(chroma/L) in
// CIELab (sRGB -> linear -> XYZ D65), all of L,a,b scaled by 1/100;
// percentiles linearly interpolated; zero-L pixels contribute 0 saturation.
double uciqe(const ursct::Tensor<float>& img);

}  // namespace oracle
