#include "ursct/losses.hpp"

#include <array>
#include <cmath>

namespace ursct {

GradientOp gradient_op_from_string(const std::string& s) {
    if (s == "forward_diff") return GradientOp::forward_diff;
    if (s == "sobel") return GradientOp::sobel;
    throw ConfigError("unknown gradient operator '" + s + "' (expected forward_diff|sobel)");
}

std::string to_string(GradientOp op) {
    return op == GradientOp::forward_diff ? "forward_diff" : "sobel";
}

void LossConfig::validate() const {
    if (weights.w1 < 0 || weights.w2 < 0 || weights.w3 < 0) {
        throw ConfigError("loss: weights must be nonnegative");
    }
    if (weights.epsilon <= 0) throw ConfigError("loss: epsilon must be positive");
    if (msssim_levels < 1 || msssim_levels > 5) {
        throw ConfigError("loss: msssim_levels must lie in [1,5]");
    }
}

namespace {

template <typename T>
void require_same_image(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    if (a.ndim() != 4 || b.ndim() != 4 || a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": expected matching [B,C,H,W], got " +
                             shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

// Normalized 11-tap Gaussian (sigma 1.5) as a constant depthwise kernel.
template <typename T>
Tensor<T> gaussian_kernel(std::int64_t channels) {
    constexpr int K = 11;
    constexpr double sigma = 1.5;
    std::array<double, K> g{};
    double sum = 0;
    for (int i = 0; i < K; ++i) {
        const double d = i - (K - 1) / 2.0;
        g[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
        sum += g[static_cast<std::size_t>(i)];
    }
    for (auto& v : g) v /= sum;
    std::vector<T> w(static_cast<std::size_t>(channels * K * K));
    for (std::int64_t c = 0; c < channels; ++c) {
        for (int i = 0; i < K; ++i) {
            for (int j = 0; j < K; ++j) {
                w[static_cast<std::size_t>((c * K + i) * K + j)] =
                    static_cast<T>(g[static_cast<std::size_t>(i)] * g[static_cast<std::size_t>(j)]);
            }
        }
    }
    return Tensor<T>::from({channels, 1, K, K}, std::move(w));
}

template <typename T>
Tensor<T> avgpool_kernel(std::int64_t channels) {
    return Tensor<T>::full({channels, 1, 2, 2}, T(0.25));
}

// One-pixel edge replication. Zero padding would leak the DC level into the
// border responses and break the constant-offset invariance of the loss.
template <typename T>
Tensor<T> pad_edge1(const Tensor<T>& x) {
    auto v = concat(concat(slice(x, 2, 0, 1), x, 2), slice(x, 2, x.dim(2) - 1, 1), 2);
    return concat(concat(slice(v, 3, 0, 1), v, 3), slice(v, 3, v.dim(3) - 1, 1), 3);
}

template <typename T>
Tensor<T> sobel_pair_loss(const Tensor<T>& xhat, const Tensor<T>& x) {
    const std::int64_t C = x.dim(1);
    const std::vector<T> kx = {1, 0, -1, 2, 0, -2, 1, 0, -1};
    const std::vector<T> ky = {1, 2, 1, 0, 0, 0, -1, -2, -1};
    auto mk = [&](const std::vector<T>& k) {
        std::vector<T> w;
        w.reserve(static_cast<std::size_t>(C) * 9);
        for (std::int64_t c = 0; c < C; ++c) w.insert(w.end(), k.begin(), k.end());
        return Tensor<T>::from({C, 1, 3, 3}, std::move(w));
    };
    const auto wx = mk(kx), wy = mk(ky);
    auto resp = [&](const Tensor<T>& img, const Tensor<T>& w) {
        return conv2d(pad_edge1(img), w, std::nullopt, 1, 0, static_cast<int>(C));
    };
    auto lx = reduce_mean_all(abs(sub(resp(xhat, wx), resp(x, wx))));
    auto ly = reduce_mean_all(abs(sub(resp(xhat, wy), resp(x, wy))));
    return scale(add(lx, ly), T(0.5));
}

constexpr std::array<double, 5> kMsssimWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

}  // namespace

template <typename T>
Tensor<T> charbonnier(const Tensor<T>& xhat, const Tensor<T>& x, T eps) {
    require_same_image(xhat, x, "charbonnier");
    if (eps <= T(0)) throw ConfigError("charbonnier: eps must be positive");
    auto d = sub(xhat, x);
    return reduce_mean_all(sqrt(add_scalar(mul(d, d), eps * eps)));
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> gradient_map(const Tensor<T>& img) {
    if (img.ndim() != 4) throw DimensionError("gradient_map: expected [B,C,H,W]");
    const std::int64_t H = img.dim(2), W = img.dim(3);
    auto gx = pad_zero(sub(slice(img, 3, 1, W - 1), slice(img, 3, 0, W - 1)), 3, 0, 1);
    auto gy = pad_zero(sub(slice(img, 2, 1, H - 1), slice(img, 2, 0, H - 1)), 2, 0, 1);
    return {gx, gy};
}

template <typename T>
Tensor<T> gradient_loss(const Tensor<T>& xhat, const Tensor<T>& x, GradientOp op) {
    require_same_image(xhat, x, "gradient_loss");
    if (op == GradientOp::sobel) return sobel_pair_loss(xhat, x);
    auto [gx1, gy1] = gradient_map(xhat);
    auto [gx2, gy2] = gradient_map(x);
    auto lx = reduce_mean_all(abs(sub(gx1, gx2)));
    auto ly = reduce_mean_all(abs(sub(gy1, gy2)));
    return scale(add(lx, ly), T(0.5));
}

template <typename T>
Tensor<T> ms_ssim_loss(const Tensor<T>& xhat, const Tensor<T>& x, int levels) {
    require_same_image(xhat, x, "ms_ssim");
    if (levels < 1 || levels > 5) throw ConfigError("ms_ssim: levels must lie in [1,5]");
    const std::int64_t C = x.dim(1);
    const std::int64_t need = std::int64_t{11} << (levels - 1);
    const std::int64_t m = std::min(x.dim(2), x.dim(3));
    if (m < need) {
        throw ConfigError("ms_ssim: min spatial dim " + std::to_string(m) + " supports fewer than " +
                          std::to_string(levels) + " scales (needs " + std::to_string(need) +
                          "); reduce msssim_levels");
    }
    std::array<double, 5> w{};
    if (levels == 5) {
        w = kMsssimWeights;
    } else {
        double s = 0;
        for (int i = 0; i < levels; ++i) s += kMsssimWeights[static_cast<std::size_t>(i)];
        for (int i = 0; i < levels; ++i) w[static_cast<std::size_t>(i)] =
            kMsssimWeights[static_cast<std::size_t>(i)] / s;
    }

    constexpr double K1 = 0.01, K2 = 0.03, range = 1.0;
    const T c1 = static_cast<T>((K1 * range) * (K1 * range));
    const T c2 = static_cast<T>((K2 * range) * (K2 * range));
    const auto gauss = gaussian_kernel<T>(C);
    const auto pool = avgpool_kernel<T>(C);
    const int Ci = static_cast<int>(C);
    auto blur = [&](const Tensor<T>& t) { return conv2d(t, gauss, std::nullopt, 1, 0, Ci); };

    Tensor<T> a = xhat, b = x;
    Tensor<T> prod = Tensor<T>::scalar(T(1));
    for (int lvl = 0; lvl < levels; ++lvl) {
        auto mu1 = blur(a);
        auto mu2 = blur(b);
        auto mu1mu2 = mul(mu1, mu2);
        auto s1 = sub(blur(mul(a, a)), mul(mu1, mu1));
        auto s2 = sub(blur(mul(b, b)), mul(mu2, mu2));
        auto s12 = sub(blur(mul(a, b)), mu1mu2);
        auto cs_map = div(add_scalar(scale(s12, T(2)), c2), add_scalar(add(s1, s2), c2));
        if (lvl < levels - 1) {
            auto cs = clamp(reduce_mean_all(cs_map), std::optional<T>(T(0)), std::nullopt);
            prod = mul(prod, pow_nonneg(cs, static_cast<T>(w[static_cast<std::size_t>(lvl)])));
            a = conv2d(a, pool, std::nullopt, 2, 0, Ci);
            b = conv2d(b, pool, std::nullopt, 2, 0, Ci);
        } else {
            auto l_map = div(add_scalar(scale(mu1mu2, T(2)), c1),
                             add_scalar(add(mul(mu1, mu1), mul(mu2, mu2)), c1));
            auto ssim = clamp(reduce_mean_all(mul(l_map, cs_map)), std::optional<T>(T(0)),
                              std::nullopt);
            prod = mul(prod, pow_nonneg(ssim, static_cast<T>(w[static_cast<std::size_t>(lvl)])));
        }
    }
    return add_scalar(scale(prod, T(-1)), T(1));
}

template <typename T>
LossReport<T> total_loss(const Tensor<T>& xhat, const Tensor<T>& x, const LossConfig& cfg) {
    cfg.validate();
    LossReport<T> r;
    r.l_c = charbonnier(xhat, x, static_cast<T>(cfg.weights.epsilon));
    r.l_gd = cfg.use_gradient ? gradient_loss(xhat, x, cfg.gradient_op) : Tensor<T>::scalar(T(0));
    r.l_m = cfg.use_msssim ? ms_ssim_loss(xhat, x, cfg.msssim_levels) : Tensor<T>::scalar(T(0));
    r.l_sum = add(add(scale(r.l_c, static_cast<T>(cfg.weights.w1)),
                      scale(r.l_gd, static_cast<T>(cfg.weights.w2))),
                  scale(r.l_m, static_cast<T>(cfg.weights.w3)));
    return r;
}

#define URSCT_INSTANTIATE_LOSSES(T)                                                         \
    template Tensor<T> charbonnier<T>(const Tensor<T>&, const Tensor<T>&, T);               \
    template std::pair<Tensor<T>, Tensor<T>> gradient_map<T>(const Tensor<T>&);             \
    template Tensor<T> gradient_loss<T>(const Tensor<T>&, const Tensor<T>&, GradientOp);    \
    template Tensor<T> ms_ssim_loss<T>(const Tensor<T>&, const Tensor<T>&, int);            \
    template LossReport<T> total_loss<T>(const Tensor<T>&, const Tensor<T>&, const LossConfig&);

URSCT_INSTANTIATE_LOSSES(float)
URSCT_INSTANTIATE_LOSSES(double)

#undef URSCT_INSTANTIATE_LOSSES

}  // namespace ursct
