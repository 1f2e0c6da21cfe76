#include "ursct/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include "ursct/errors.hpp"
#include "ursct/losses.hpp"
#include "ursct/ops.hpp"

namespace ursct {

SsimMode ssim_mode_from_string(const std::string& s) {
    if (s == "luminance") return SsimMode::luminance;
    if (s == "rgb_mean") return SsimMode::rgb_mean;
    throw ConfigError("unknown ssim mode '" + s + "' (expected luminance|rgb_mean)");
}

std::string to_string(SsimMode mode) {
    return mode == SsimMode::luminance ? "luminance" : "rgb_mean";
}

namespace {

void require_same(const Tensor<float>& a, const Tensor<float>& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
    }
}

void require_chw(const Tensor<float>& t, const char* what) {
    if (t.ndim() != 3 || t.dim(0) != 3) {
        throw DimensionError(std::string(what) + " expects [3,H,W], got " + shape_str(t.shape()));
    }
}

std::vector<double> luminance_plane(const Tensor<float>& img) {
    const std::int64_t n = img.dim(1) * img.dim(2);
    const float* p = img.data().data();
    std::vector<double> y(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        y[static_cast<std::size_t>(i)] = 0.299 * p[i] + 0.587 * p[n + i] + 0.114 * p[2 * n + i];
    }
    return y;
}

std::vector<double> channel_plane(const Tensor<float>& img, int c) {
    const std::int64_t n = img.dim(1) * img.dim(2);
    const float* p = img.data().data() + c * n;
    return std::vector<double>(p, p + n);
}

constexpr int kWin = 11;

std::array<double, kWin * kWin> gaussian_window() {
    std::array<double, kWin> g{};
    double sum = 0;
    for (int i = 0; i < kWin; ++i) {
        const double d = i - (kWin - 1) / 2.0;
        g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += g[static_cast<std::size_t>(i)];
    }
    for (auto& v : g) v /= sum;
    std::array<double, kWin * kWin> w{};
    for (int i = 0; i < kWin; ++i) {
        for (int j = 0; j < kWin; ++j) {
            w[static_cast<std::size_t>(i * kWin + j)] =
                g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)];
        }
    }
    return w;
}

double ssim_plane(const std::vector<double>& x, const std::vector<double>& y, std::int64_t h,
                  std::int64_t w) {
    static const auto win = gaussian_window();
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const std::int64_t oh = h - kWin + 1, ow = w - kWin + 1;
    double total = 0;
    for (std::int64_t oy = 0; oy < oh; ++oy) {
        for (std::int64_t ox = 0; ox < ow; ++ox) {
            double m1 = 0, m2 = 0, q1 = 0, q2 = 0, q12 = 0;
            for (int i = 0; i < kWin; ++i) {
                const std::int64_t row = (oy + i) * w + ox;
                for (int j = 0; j < kWin; ++j) {
                    const double g = win[static_cast<std::size_t>(i * kWin + j)];
                    const double a = x[static_cast<std::size_t>(row + j)];
                    const double b = y[static_cast<std::size_t>(row + j)];
                    m1 += g * a;
                    m2 += g * b;
                    q1 += g * a * a;
                    q2 += g * b * b;
                    q12 += g * a * b;
                }
            }
            const double s1 = q1 - m1 * m1, s2 = q2 - m2 * m2, s12 = q12 - m1 * m2;
            total += ((2 * m1 * m2 + c1) * (2 * s12 + c2)) /
                     ((m1 * m1 + m2 * m2 + c1) * (s1 + s2 + c2));
        }
    }
    return total / static_cast<double>(oh * ow);
}

}  // namespace

double psnr(const Tensor<float>& a, const Tensor<float>& b) {
    require_same(a, b, "psnr");
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    double mse = 0;
    const std::int64_t n = a.numel();
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
        mse += d * d;
    }
    mse /= static_cast<double>(n);
    if (mse <= 0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor<float>& a, const Tensor<float>& b, SsimMode mode) {
    require_chw(a, "ssim");
    require_same(a, b, "ssim");
    const std::int64_t h = a.dim(1), w = a.dim(2);
    if (h < kWin || w < kWin) {
        throw ConfigError("ssim needs images at least 11x11, got " + shape_str(a.shape()));
    }
    if (mode == SsimMode::luminance) {
        return ssim_plane(luminance_plane(a), luminance_plane(b), h, w);
    }
    double total = 0;
    for (int c = 0; c < 3; ++c) total += ssim_plane(channel_plane(a, c), channel_plane(b, c), h, w);
    return total / 3.0;
}

double ms_ssim_metric(const Tensor<float>& a, const Tensor<float>& b, int levels) {
    require_chw(a, "ms_ssim");
    require_same(a, b, "ms_ssim");
    auto xa = reshape(tensor_cast<double>(a), {1, 3, a.dim(1), a.dim(2)});
    auto xb = reshape(tensor_cast<double>(b), {1, 3, b.dim(1), b.dim(2)});
    return 1.0 - ms_ssim_loss<double>(xa, xb, levels).item();
}

namespace {

// Pixel values rescaled to 0..255 as the component definitions expect.
std::vector<double> plane255(const Tensor<float>& img, int c) {
    auto p = channel_plane(img, c);
    for (auto& v : p) v *= 255.0;
    return p;
}

struct TrimStats {
    double mean;
    double var;
};

// alpha-trimmed mean (alpha = 0.1 per side); variance over all samples about
// that mean.
TrimStats trimmed_stats(std::vector<double> v) {
    const auto n = static_cast<std::int64_t>(v.size());
    auto sorted = v;
    std::sort(sorted.begin(), sorted.end());
    const auto t = static_cast<std::int64_t>(std::floor(0.1 * static_cast<double>(n)));
    double mean = 0;
    for (std::int64_t i = t; i < n - t; ++i) mean += sorted[static_cast<std::size_t>(i)];
    mean /= static_cast<double>(n - 2 * t);
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(n);
    return {mean, var};
}

std::vector<double> sobel_magnitude(const std::vector<double>& p, std::int64_t h, std::int64_t w) {
    auto at = [&](std::int64_t y, std::int64_t x) {
        y = std::clamp<std::int64_t>(y, 0, h - 1);  // replicate border
        x = std::clamp<std::int64_t>(x, 0, w - 1);
        return p[static_cast<std::size_t>(y * w + x)];
    };
    std::vector<double> mag(static_cast<std::size_t>(h * w));
    for (std::int64_t y = 0; y < h; ++y) {
        for (std::int64_t x = 0; x < w; ++x) {
            const double gx = at(y - 1, x - 1) + 2 * at(y, x - 1) + at(y + 1, x - 1) -
                              at(y - 1, x + 1) - 2 * at(y, x + 1) - at(y + 1, x + 1);
            const double gy = at(y - 1, x - 1) + 2 * at(y - 1, x) + at(y - 1, x + 1) -
                              at(y + 1, x - 1) - 2 * at(y + 1, x) - at(y + 1, x + 1);
            mag[static_cast<std::size_t>(y * w + x)] = std::sqrt(gx * gx + gy * gy);
        }
    }
    return mag;
}

constexpr std::int64_t kBlock = 8;

// EME = (2/(k1*k2)) * sum ln(max/min) over full 8x8 blocks; blocks touching
// zero contribute nothing.
double eme(const std::vector<double>& p, std::int64_t h, std::int64_t w) {
    const std::int64_t k1 = h / kBlock, k2 = w / kBlock;
    if (k1 == 0 || k2 == 0) throw ConfigError("uiqm needs images at least 8x8");
    double sum = 0;
    for (std::int64_t by = 0; by < k1; ++by) {
        for (std::int64_t bx = 0; bx < k2; ++bx) {
            double lo = p[static_cast<std::size_t>(by * kBlock * w + bx * kBlock)];
            double hi = lo;
            for (std::int64_t y = by * kBlock; y < (by + 1) * kBlock; ++y) {
                for (std::int64_t x = bx * kBlock; x < (bx + 1) * kBlock; ++x) {
                    const double v = p[static_cast<std::size_t>(y * w + x)];
                    lo = std::min(lo, v);
                    hi = std::max(hi, v);
                }
            }
            if (lo > 0 && hi > 0) sum += std::log(hi / lo);
        }
    }
    return 2.0 / static_cast<double>(k1 * k2) * sum;
}

}  // namespace

double uicm(const Tensor<float>& image) {
    require_chw(image, "uicm");
    const auto r = plane255(image, 0), g = plane255(image, 1), b = plane255(image, 2);
    std::vector<double> rg(r.size()), yb(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        rg[i] = r[i] - g[i];
        yb[i] = (r[i] + g[i]) / 2.0 - b[i];
    }
    const auto srg = trimmed_stats(std::move(rg));
    const auto syb = trimmed_stats(std::move(yb));
    return -0.0268 * std::sqrt(srg.mean * srg.mean + syb.mean * syb.mean) +
           0.1586 * std::sqrt(srg.var + syb.var);
}

double uism(const Tensor<float>& image) {
    require_chw(image, "uism");
    const std::int64_t h = image.dim(1), w = image.dim(2);
    constexpr double lambda[3] = {0.299, 0.587, 0.114};
    double total = 0;
    for (int c = 0; c < 3; ++c) {
        auto p = plane255(image, c);
        auto edge = sobel_magnitude(p, h, w);
        for (std::size_t i = 0; i < edge.size(); ++i) edge[i] *= p[i];
        total += lambda[c] * eme(edge, h, w);
    }
    return total;
}

double uiconm(const Tensor<float>& image) {
    require_chw(image, "uiconm");
    const std::int64_t h = image.dim(1), w = image.dim(2);
    const std::int64_t k1 = h / kBlock, k2 = w / kBlock;
    if (k1 == 0 || k2 == 0) throw ConfigError("uiqm needs images at least 8x8");
    const auto r = plane255(image, 0), g = plane255(image, 1), b = plane255(image, 2);
    const std::vector<double>* planes[3] = {&r, &g, &b};
    double sum = 0;
    for (std::int64_t by = 0; by < k1; ++by) {
        for (std::int64_t bx = 0; bx < k2; ++bx) {
            double lo = r[static_cast<std::size_t>(by * kBlock * w + bx * kBlock)];
            double hi = lo;
            for (const auto* p : planes) {
                for (std::int64_t y = by * kBlock; y < (by + 1) * kBlock; ++y) {
                    for (std::int64_t x = bx * kBlock; x < (bx + 1) * kBlock; ++x) {
                        const double v = (*p)[static_cast<std::size_t>(y * w + x)];
                        lo = std::min(lo, v);
                        hi = std::max(hi, v);
                    }
                }
            }
            const double den = hi + lo, num = hi - lo;
            if (den <= 0 || num <= 0) continue;  // flat or black block
            const double c = num / den;
            sum += c * std::log(c);
        }
    }
    return -sum / static_cast<double>(k1 * k2);
}

double uiqm(const Tensor<float>& image) {
    return 0.0282 * uicm(image) + 0.2953 * uism(image) + 3.5753 * uiconm(image);
}

namespace {

double srgb_to_linear(double u) {
    return u <= 0.04045 ? u / 12.92 : std::pow((u + 0.055) / 1.055, 2.4);
}

double lab_f(double t) {
    constexpr double d = 6.0 / 29.0;
    return t > d * d * d ? std::cbrt(t) : t / (3 * d * d) + 4.0 / 29.0;
}

double percentile(std::vector<double> sorted, double q) {
    const auto n = static_cast<std::int64_t>(sorted.size());
    const double idx = q / 100.0 * static_cast<double>(n - 1);
    const auto lo = static_cast<std::int64_t>(idx);
    const std::int64_t hi = std::min(lo + 1, n - 1);
    const double frac = idx - static_cast<double>(lo);
    return sorted[static_cast<std::size_t>(lo)] +
           (sorted[static_cast<std::size_t>(hi)] - sorted[static_cast<std::size_t>(lo)]) * frac;
}

}  // namespace

double uciqe(const Tensor<float>& image) {
    require_chw(image, "uciqe");
    const std::int64_t n = image.dim(1) * image.dim(2);
    const float* p = image.data().data();
    std::vector<double> lum(static_cast<std::size_t>(n));
    std::vector<double> chroma(static_cast<std::size_t>(n));
    std::vector<double> sat(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double r = srgb_to_linear(p[i]);
        const double g = srgb_to_linear(p[n + i]);
        const double b = srgb_to_linear(p[2 * n + i]);
        const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
        const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
        const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
        const double fx = lab_f(x / 0.95047), fy = lab_f(y), fz = lab_f(z / 1.08883);
        const double lL = (116.0 * fy - 16.0) / 100.0;
        const double la = 500.0 * (fx - fy) / 100.0;
        const double lb = 200.0 * (fy - fz) / 100.0;
        const auto idx = static_cast<std::size_t>(i);
        lum[idx] = lL;
        chroma[idx] = std::sqrt(la * la + lb * lb);
        sat[idx] = lL > 0 ? chroma[idx] / lL : 0.0;
    }
    double cm = 0;
    for (double c : chroma) cm += c;
    cm /= static_cast<double>(n);
    double cvar = 0;
    for (double c : chroma) cvar += (c - cm) * (c - cm);
    cvar /= static_cast<double>(n);
    std::sort(lum.begin(), lum.end());
    const double con_l = percentile(lum, 99.0) - percentile(lum, 1.0);
    double mean_sat = 0;
    for (double s : sat) mean_sat += s;
    mean_sat /= static_cast<double>(n);
    return 0.4680 * std::sqrt(cvar) + 0.2745 * con_l + 0.2576 * mean_sat;
}

MetricReport evaluate_dataset(const DatasetIndex& index,
                              const std::function<Tensor<float>(const Tensor<float>&)>& enhance,
                              const EvalOptions& opts) {
    MetricReport report;
    report.rows.resize(index.entries.size());
    report.count = static_cast<std::int64_t>(index.entries.size());

    auto score = [&](std::size_t i) {
        const auto& entry = index.entries[i];
        auto pair = load_pair(entry, index.target_h, index.target_w);
        auto out = enhance(pair.raw);
        MetricRow row;
        row.image = entry.id;
        if (opts.full_reference) {
            if (!pair.reference) throw DataError("no reference image for '" + entry.id + "'");
            row.psnr = psnr(out, *pair.reference);
            row.ssim = ssim(out, *pair.reference, opts.ssim_mode);
            row.ms_ssim = ms_ssim_metric(out, *pair.reference, opts.msssim_levels);
        }
        row.uiqm = uiqm(out);
        row.uciqe = uciqe(out);
        report.rows[i] = std::move(row);
    };

    const auto n = index.entries.size();
    const auto workers = std::min(static_cast<std::size_t>(std::max(1, opts.threads)), std::max<std::size_t>(n, 1));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) score(i);
    } else {
        std::vector<std::thread> pool;
        std::exception_ptr first_error;
        std::mutex err_mu;
        for (std::size_t t = 0; t < workers; ++t) {
            pool.emplace_back([&, t] {
                for (std::size_t i = t; i < n; i += workers) {
                    try {
                        score(i);
                    } catch (...) {
                        std::lock_guard<std::mutex> lock(err_mu);
                        if (!first_error) first_error = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
        if (first_error) std::rethrow_exception(first_error);
    }

    report.mean.image = "MEAN";
    auto average = [&](std::optional<double> MetricRow::* field) {
        double sum = 0;
        std::int64_t count = 0;
        for (const auto& row : report.rows) {
            if (row.*field) {
                sum += *(row.*field);
                ++count;
            }
        }
        if (count > 0) report.mean.*field = sum / static_cast<double>(count);
    };
    average(&MetricRow::psnr);
    average(&MetricRow::ssim);
    average(&MetricRow::ms_ssim);
    average(&MetricRow::uiqm);
    average(&MetricRow::uciqe);
    return report;
}

namespace {

std::string cell(const std::optional<double>& v) {
    if (!v) return "";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", *v);
    return buf;
}

void write_row(std::ofstream& out, const MetricRow& row) {
    out << row.image << ',' << cell(row.psnr) << ',' << cell(row.ssim) << ',' << cell(row.ms_ssim)
        << ',' << cell(row.uiqm) << ',' << cell(row.uciqe) << '\n';
}

}  // namespace

void write_report_csv(const MetricReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write report '" + path + "'");
    out << "image,psnr,ssim,ms_ssim,uiqm,uciqe\n";
    for (const auto& row : report.rows) write_row(out, row);
    write_row(out, report.mean);
    if (!out) throw IoError("error writing report '" + path + "'");
}

}  // namespace ursct
