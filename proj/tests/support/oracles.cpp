#include "support/oracles.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

using ursct::Tensor;

Tensor<double> attention(const Tensor<double>& q, const Tensor<double>& k,
                         const Tensor<double>& v, const Tensor<double>& bias,
                         const std::optional<Tensor<double>>& mask, double scale) {
    const std::int64_t nw = q.dim(0), U = q.dim(1), t2 = q.dim(2), cu = q.dim(3);
    const auto* qp = q.data().data();
    const auto* kp = k.data().data();
    const auto* vp = v.data().data();
    const auto* bp = bias.data().data();
    const std::int64_t n = mask ? mask->dim(0) : 1;
    auto out = Tensor<double>::zeros({nw, t2, U * cu});
    auto op = out.mutable_data();
    std::vector<double> logits(static_cast<std::size_t>(t2));
    for (std::int64_t w = 0; w < nw; ++w) {
        for (std::int64_t u = 0; u < U; ++u) {
            for (std::int64_t i = 0; i < t2; ++i) {
                for (std::int64_t j = 0; j < t2; ++j) {
                    double dot = 0;
                    for (std::int64_t d = 0; d < cu; ++d) {
                        dot += qp[((w * U + u) * t2 + i) * cu + d] *
                               kp[((w * U + u) * t2 + j) * cu + d];
                    }
                    double l = dot / scale + bp[(u * t2 + i) * t2 + j];
                    if (mask) l += mask->data()[((w % n) * t2 + i) * t2 + j];
                    logits[static_cast<std::size_t>(j)] = l;
                }
                const double mx = *std::max_element(logits.begin(), logits.end());
                double denom = 0;
                for (auto& l : logits) {
                    l = std::exp(l - mx);
                    denom += l;
                }
                for (std::int64_t d = 0; d < cu; ++d) {
                    double acc = 0;
                    for (std::int64_t j = 0; j < t2; ++j) {
                        acc += logits[static_cast<std::size_t>(j)] / denom *
                               vp[((w * U + u) * t2 + j) * cu + d];
                    }
                    op[(w * t2 + i) * (U * cu) + u * cu + d] = acc;
                }
            }
        }
    }
    return out;
}

namespace {

// One image plane as doubles.
struct Plane {
    std::vector<double> v;
    std::int64_t h = 0, w = 0;
    double at(std::int64_t y, std::int64_t x) const {
        return v[static_cast<std::size_t>(y * w + x)];
    }
};

std::array<double, 11> gauss1d() {
    std::array<double, 11> g{};
    double sum = 0;
    for (int i = 0; i < 11; ++i) {
        const double d = i - 5.0;
        g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * 1.5 * 1.5));
        sum += g[static_cast<std::size_t>(i)];
    }
    for (auto& x : g) x /= sum;
    return g;
}

constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

struct WindowMoments {
    double m1, m2, q1, q2, q12;
};

WindowMoments window_moments(const Plane& a, const Plane& b, std::int64_t y0, std::int64_t x0) {
    static const auto g = gauss1d();
    WindowMoments mo{0, 0, 0, 0, 0};
    for (int dy = 0; dy < 11; ++dy) {
        for (int dx = 0; dx < 11; ++dx) {
            const double wgt = g[static_cast<std::size_t>(dy)] * g[static_cast<std::size_t>(dx)];
            const double x = a.at(y0 + dy, x0 + dx);
            const double y = b.at(y0 + dy, x0 + dx);
            mo.m1 += wgt * x;
            mo.m2 += wgt * y;
            mo.q1 += wgt * x * x;
            mo.q2 += wgt * y * y;
            mo.q12 += wgt * x * y;
        }
    }
    return mo;
}

Plane luminance(const Tensor<float>& img) {
    const std::int64_t h = img.dim(1), w = img.dim(2), n = h * w;
    const float* p = img.data().data();
    Plane out{std::vector<double>(static_cast<std::size_t>(n)), h, w};
    for (std::int64_t i = 0; i < n; ++i) {
        out.v[static_cast<std::size_t>(i)] =
            0.299 * p[i] + 0.587 * p[n + i] + 0.114 * p[2 * n + i];
    }
    return out;
}

Plane channel(const Tensor<float>& img, int c, double scale) {
    const std::int64_t h = img.dim(1), w = img.dim(2), n = h * w;
    const float* p = img.data().data();
    Plane out{std::vector<double>(static_cast<std::size_t>(n)), h, w};
    for (std::int64_t i = 0; i < n; ++i) {
        out.v[static_cast<std::size_t>(i)] = scale * p[c * n + i];
    }
    return out;
}

Plane halve(const Plane& p) {
    Plane out{std::vector<double>(static_cast<std::size_t>((p.h / 2) * (p.w / 2))), p.h / 2,
              p.w / 2};
    for (std::int64_t y = 0; y < out.h; ++y) {
        for (std::int64_t x = 0; x < out.w; ++x) {
            out.v[static_cast<std::size_t>(y * out.w + x)] =
                (p.at(2 * y, 2 * x) + p.at(2 * y, 2 * x + 1) + p.at(2 * y + 1, 2 * x) +
                 p.at(2 * y + 1, 2 * x + 1)) /
                4.0;
        }
    }
    return out;
}

// Mean cs term and mean l*cs term over all valid windows of all plane pairs.
struct LevelMeans {
    double cs = 0, lcs = 0;
};

LevelMeans level_means(const std::vector<Plane>& as, const std::vector<Plane>& bs) {
    LevelMeans lm;
    std::int64_t count = 0;
    for (std::size_t p = 0; p < as.size(); ++p) {
        const auto& a = as[p];
        const auto& b = bs[p];
        for (std::int64_t y = 0; y + 11 <= a.h; ++y) {
            for (std::int64_t x = 0; x + 11 <= a.w; ++x) {
                const auto mo = window_moments(a, b, y, x);
                const double s1 = mo.q1 - mo.m1 * mo.m1;
                const double s2 = mo.q2 - mo.m2 * mo.m2;
                const double s12 = mo.q12 - mo.m1 * mo.m2;
                const double cs = (2 * s12 + kC2) / (s1 + s2 + kC2);
                const double l =
                    (2 * mo.m1 * mo.m2 + kC1) / (mo.m1 * mo.m1 + mo.m2 * mo.m2 + kC1);
                lm.cs += cs;
                lm.lcs += l * cs;
                ++count;
            }
        }
    }
    lm.cs /= static_cast<double>(count);
    lm.lcs /= static_cast<double>(count);
    return lm;
}

double ms_ssim_planes(std::vector<Plane> as, std::vector<Plane> bs, int levels) {
    constexpr std::array<double, 5> kw = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    std::array<double, 5> w{};
    if (levels == 5) {
        w = kw;
    } else {
        double s = 0;
        for (int i = 0; i < levels; ++i) s += kw[static_cast<std::size_t>(i)];
        for (int i = 0; i < levels; ++i) w[static_cast<std::size_t>(i)] =
            kw[static_cast<std::size_t>(i)] / s;
    }
    double prod = 1.0;
    for (int lvl = 0; lvl < levels; ++lvl) {
        const auto lm = level_means(as, bs);
        const double term = lvl + 1 < levels ? std::max(lm.cs, 0.0) : std::max(lm.lcs, 0.0);
        prod *= std::pow(term, w[static_cast<std::size_t>(lvl)]);
        if (lvl + 1 < levels) {
            for (auto& p : as) p = halve(p);
            for (auto& p : bs) p = halve(p);
        }
    }
    return prod;
}

}  // namespace

double ssim(const Tensor<float>& a, const Tensor<float>& b) {
    const auto pa = luminance(a);
    const auto pb = luminance(b);
    double sum = 0;
    std::int64_t count = 0;
    for (std::int64_t y = 0; y + 11 <= pa.h; ++y) {
        for (std::int64_t x = 0; x + 11 <= pa.w; ++x) {
            const auto mo = window_moments(pa, pb, y, x);
            const double s1 = mo.q1 - mo.m1 * mo.m1;
            const double s2 = mo.q2 - mo.m2 * mo.m2;
            const double s12 = mo.q12 - mo.m1 * mo.m2;
            sum += ((2 * mo.m1 * mo.m2 + kC1) * (2 * s12 + kC2)) /
                   ((mo.m1 * mo.m1 + mo.m2 * mo.m2 + kC1) * (s1 + s2 + kC2));
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

double ms_ssim(const Tensor<float>& a, const Tensor<float>& b, int levels) {
    std::vector<Plane> as, bs;
    for (int c = 0; c < 3; ++c) {
        as.push_back(channel(a, c, 1.0));
        bs.push_back(channel(b, c, 1.0));
    }
    return ms_ssim_planes(std::move(as), std::move(bs), levels);
}

double ms_ssim4(const Tensor<double>& a, const Tensor<double>& b, int levels) {
    const std::int64_t B = a.dim(0), C = a.dim(1), h = a.dim(2), w = a.dim(3), n = h * w;
    std::vector<Plane> as, bs;
    for (std::int64_t p = 0; p < B * C; ++p) {
        Plane pa{std::vector<double>(static_cast<std::size_t>(n)), h, w};
        Plane pb = pa;
        for (std::int64_t i = 0; i < n; ++i) {
            pa.v[static_cast<std::size_t>(i)] = a.data()[p * n + i];
            pb.v[static_cast<std::size_t>(i)] = b.data()[p * n + i];
        }
        as.push_back(std::move(pa));
        bs.push_back(std::move(pb));
    }
    return ms_ssim_planes(std::move(as), std::move(bs), levels);
}

namespace {

double trimmed_mean(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = static_cast<std::int64_t>(v.size());
    const auto t = static_cast<std::int64_t>(std::floor(0.1 * static_cast<double>(n)));
    double m = 0;
    for (std::int64_t i = t; i < n - t; ++i) m += v[static_cast<std::size_t>(i)];
    return m / static_cast<double>(n - 2 * t);
}

double var_about(const std::vector<double>& v, double mean) {
    double s = 0;
    for (double x : v) s += (x - mean) * (x - mean);
    return s / static_cast<double>(v.size());
}

double eme_of(const Plane& p) {
    const std::int64_t k1 = p.h / 8, k2 = p.w / 8;
    double sum = 0;
    for (std::int64_t by = 0; by < k1; ++by) {
        for (std::int64_t bx = 0; bx < k2; ++bx) {
            double lo = p.at(by * 8, bx * 8), hi = lo;
            for (std::int64_t y = by * 8; y < by * 8 + 8; ++y) {
                for (std::int64_t x = bx * 8; x < bx * 8 + 8; ++x) {
                    lo = std::min(lo, p.at(y, x));
                    hi = std::max(hi, p.at(y, x));
                }
            }
            if (lo > 0 && hi > 0) sum += std::log(hi / lo);
        }
    }
    return 2.0 / static_cast<double>(k1 * k2) * sum;
}

}  // namespace

double uicm(const Tensor<float>& img) {
    const auto r = channel(img, 0, 255.0), g = channel(img, 1, 255.0), b = channel(img, 2, 255.0);
    std::vector<double> rg(r.v.size()), yb(r.v.size());
    for (std::size_t i = 0; i < r.v.size(); ++i) {
        rg[i] = r.v[i] - g.v[i];
        yb[i] = (r.v[i] + g.v[i]) / 2.0 - b.v[i];
    }
    const double mrg = trimmed_mean(rg), myb = trimmed_mean(yb);
    const double vrg = var_about(rg, mrg), vyb = var_about(yb, myb);
    return -0.0268 * std::sqrt(mrg * mrg + myb * myb) + 0.1586 * std::sqrt(vrg + vyb);
}

double uism(const Tensor<float>& img) {
    constexpr double lambda[3] = {0.299, 0.587, 0.114};
    double total = 0;
    for (int c = 0; c < 3; ++c) {
        const auto p = channel(img, c, 255.0);
        auto rep = [&](std::int64_t y, std::int64_t x) {
            return p.at(std::clamp<std::int64_t>(y, 0, p.h - 1),
                        std::clamp<std::int64_t>(x, 0, p.w - 1));
        };
        Plane edge{std::vector<double>(p.v.size()), p.h, p.w};
        for (std::int64_t y = 0; y < p.h; ++y) {
            for (std::int64_t x = 0; x < p.w; ++x) {
                const double gx = rep(y - 1, x - 1) + 2 * rep(y, x - 1) + rep(y + 1, x - 1) -
                                  rep(y - 1, x + 1) - 2 * rep(y, x + 1) - rep(y + 1, x + 1);
                const double gy = rep(y - 1, x - 1) + 2 * rep(y - 1, x) + rep(y - 1, x + 1) -
                                  rep(y + 1, x - 1) - 2 * rep(y + 1, x) - rep(y + 1, x + 1);
                edge.v[static_cast<std::size_t>(y * p.w + x)] =
                    std::sqrt(gx * gx + gy * gy) * p.at(y, x);
            }
        }
        total += lambda[c] * eme_of(edge);
    }
    return total;
}

double uiconm(const Tensor<float>& img) {
    const Plane planes[3] = {channel(img, 0, 255.0), channel(img, 1, 255.0),
                             channel(img, 2, 255.0)};
    const std::int64_t k1 = planes[0].h / 8, k2 = planes[0].w / 8;
    double sum = 0;
    for (std::int64_t by = 0; by < k1; ++by) {
        for (std::int64_t bx = 0; bx < k2; ++bx) {
            double lo = planes[0].at(by * 8, bx * 8), hi = lo;
            for (const auto& p : planes) {
                for (std::int64_t y = by * 8; y < by * 8 + 8; ++y) {
                    for (std::int64_t x = bx * 8; x < bx * 8 + 8; ++x) {
                        lo = std::min(lo, p.at(y, x));
                        hi = std::max(hi, p.at(y, x));
                    }
                }
            }
            if (hi + lo <= 0 || hi - lo <= 0) continue;
            const double c = (hi - lo) / (hi + lo);
            sum += c * std::log(c);
        }
    }
    return -sum / static_cast<double>(k1 * k2);
}

double uiqm(const Tensor<float>& img) {
    return 0.0282 * uicm(img) + 0.2953 * uism(img) + 3.5753 * uiconm(img);
}

namespace {

double to_linear(double u) {
    return u <= 0.04045 ? u / 12.92 : std::pow((u + 0.055) / 1.055, 2.4);
}

double lab_f(double t) {
    constexpr double d = 6.0 / 29.0;
    return t > d * d * d ? std::cbrt(t) : t / (3 * d * d) + 4.0 / 29.0;
}

double pct(const std::vector<double>& sorted, double q) {
    const auto n = static_cast<std::int64_t>(sorted.size());
    const double idx = q / 100.0 * static_cast<double>(n - 1);
    const auto lo = static_cast<std::int64_t>(idx);
    const std::int64_t hi = std::min(lo + 1, n - 1);
    return sorted[static_cast<std::size_t>(lo)] +
           (sorted[static_cast<std::size_t>(hi)] - sorted[static_cast<std::size_t>(lo)]) *
               (idx - static_cast<double>(lo));
}

}  // namespace

double uciqe(const Tensor<float>& img) {
    const std::int64_t n = img.dim(1) * img.dim(2);
    const float* p = img.data().data();
    std::vector<double> lum, chroma, sat;
    lum.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double r = to_linear(p[i]);
        const double g = to_linear(p[n + i]);
        const double b = to_linear(p[2 * n + i]);
        const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
        const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
        const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
        const double fx = lab_f(x / 0.95047), fy = lab_f(y), fz = lab_f(z / 1.08883);
        const double L = (116.0 * fy - 16.0) / 100.0;
        const double A = 500.0 * (fx - fy) / 100.0;
        const double B = 200.0 * (fy - fz) / 100.0;
        const double C = std::sqrt(A * A + B * B);
        lum.push_back(L);
        chroma.push_back(C);
        sat.push_back(L > 0 ? C / L : 0.0);
    }
    double cm = 0;
    for (double c : chroma) cm += c;
    cm /= static_cast<double>(n);
    double cv = 0;
    for (double c : chroma) cv += (c - cm) * (c - cm);
    cv /= static_cast<double>(n);
    std::sort(lum.begin(), lum.end());
    double ms = 0;
    for (double s : sat) ms += s;
    ms /= static_cast<double>(n);
    return 0.4680 * std::sqrt(cv) + 0.2745 * (pct(lum, 99.0) - pct(lum, 1.0)) + 0.2576 * ms;
}

}  // namespace oracle
