#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ursct/data.hpp"
#include "ursct/tensor.hpp"

namespace ursct {

enum class SsimMode { luminance, rgb_mean };
SsimMode ssim_mode_from_string(const std::string& s);
std::string to_string(SsimMode mode);

// Peak signal-to-noise ratio in dB for images in [0,1]; identical images are
// capped at 99.0 dB.
double psnr(const Tensor<float>& a, const Tensor<float>& b);

// Mean local SSIM over an 11-tap Gaussian window (sigma 1.5, K1=0.01,
// K2=0.03, range 1), valid positions only. Computed on BT.601 luminance by
// default, or averaged over the three channels in rgb_mean mode.
double ssim(const Tensor<float>& a, const Tensor<float>& b,
            SsimMode mode = SsimMode::luminance);

// 1 - ms_ssim_loss at the given pyramid depth.
double ms_ssim_metric(const Tensor<float>& a, const Tensor<float>& b, int levels = 5);

// No-reference underwater scores. Components follow their original
// definitions with pixel values on the 0..255 scale.
double uicm(const Tensor<float>& image);
double uism(const Tensor<float>& image);
double uiconm(const Tensor<float>& image);
double uiqm(const Tensor<float>& image);

// 0.4680*sigma_chroma + 0.2745*(p99-p1 of L) + 0.2576*mean_saturation in
// CIELab (sRGB, D65) with L,a,b scaled by 1/100.
double uciqe(const Tensor<float>& image);

struct MetricRow {
    std::string image;
    std::optional<double> psnr;
    std::optional<double> ssim;
    std::optional<double> ms_ssim;
    std::optional<double> uiqm;
    std::optional<double> uciqe;
};

struct MetricReport {
    std::vector<MetricRow> rows;
    MetricRow mean;  // image == "MEAN"; each field averages the rows where present
    std::int64_t count = 0;
};

struct EvalOptions {
    bool full_reference = true;
    int msssim_levels = 5;
    SsimMode ssim_mode = SsimMode::luminance;
    int threads = 1;
};

// Runs `enhance` ([3,H,W] -> [3,H,W]) over every index entry and scores the
// outputs: against the reference (psnr/ssim/ms_ssim) in full-reference mode,
// and with uiqm/uciqe always. Row order follows the index regardless of
// thread count.
MetricReport evaluate_dataset(const DatasetIndex& index,
                              const std::function<Tensor<float>(const Tensor<float>&)>& enhance,
                              const EvalOptions& opts);

// CSV with header image,psnr,ssim,ms_ssim,uiqm,uciqe; absent metrics stay
// empty; final row is MEAN.
void write_report_csv(const MetricReport& report, const std::string& path);

}  // namespace ursct
