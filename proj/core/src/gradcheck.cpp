#include "ursct/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ursct/losses.hpp"
#include "ursct/model.hpp"
#include "ursct/ops.hpp"

namespace ursct {

FdReport finite_diff_check(const std::function<Tensor<double>()>& loss_fn,
                           std::vector<Tensor<double>> leaves, double h,
                           std::int64_t max_coords_per_leaf, Rng* rng) {
    for (auto& leaf : leaves) {
        leaf.set_requires_grad(true);
        leaf.zero_grad();
    }
    GradTape<double> tape;
    {
        GradTape<double>::Scope scope(tape);
        auto loss = loss_fn();
        tape.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto& leaf : leaves) {
        if (leaf.has_grad()) {
            analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
        } else {
            analytic.emplace_back(static_cast<std::size_t>(leaf.numel()), 0.0);
        }
    }

    FdReport rep;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& leaf = leaves[li];
        const std::int64_t n = leaf.numel();
        std::vector<std::int64_t> coords(static_cast<std::size_t>(n));
        std::iota(coords.begin(), coords.end(), 0);
        if (max_coords_per_leaf >= 0 && max_coords_per_leaf < n) {
            if (!rng) throw Error("finite_diff_check: coordinate sampling needs an RNG");
            rng->shuffle(coords);
            coords.resize(static_cast<std::size_t>(max_coords_per_leaf));
        }
        auto vals = leaf.mutable_data();
        for (auto c : coords) {
            const auto ci = static_cast<std::size_t>(c);
            const double orig = vals[ci];
            vals[ci] = orig + h;
            const double fp = loss_fn().item();
            vals[ci] = orig - h;
            const double fm = loss_fn().item();
            vals[ci] = orig;
            const double numeric = (fp - fm) / (2 * h);
            const double a = analytic[li][ci];
            const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
            rep.max_rel_err = std::max(rep.max_rel_err, rel);
            ++rep.coords;
        }
    }
    return rep;
}

namespace {

Tensor<double> randu(Rng& rng, Shape shape, double lo, double hi) {
    auto t = Tensor<double>::zeros(std::move(shape));
    for (auto& v : t.payload()->values) v = rng.uniform(lo, hi);
    return t;
}

// Magnitudes in [lo_mag, hi_mag], random sign — keeps divisors and kink ops
// away from zero.
Tensor<double> rand_signed(Rng& rng, Shape shape, double lo_mag, double hi_mag) {
    auto t = Tensor<double>::zeros(std::move(shape));
    for (auto& v : t.payload()->values) {
        v = rng.uniform(lo_mag, hi_mag) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    }
    return t;
}

// Random constant projection making the scalar objective sensitive to every
// output coordinate.
Tensor<double> probe_like_shape(Rng& rng, const Shape& s) {
    return rand_signed(rng, s, 0.5, 1.5);
}

struct SuiteBuilder {
    explicit SuiteBuilder(std::uint64_t seed) : rng(seed) {}

    void run(const std::string& name, double tol,
             const std::function<Tensor<double>()>& loss_fn, std::vector<Tensor<double>> leaves,
             std::int64_t max_coords = -1) {
        auto rep = finite_diff_check(loss_fn, std::move(leaves), 1e-5, max_coords, &rng);
        cases.push_back({name, rep.max_rel_err, tol, rep.max_rel_err < tol});
    }

    Rng rng;
    std::vector<GradCheckCase> cases;
};

Tensor<double> dot_probe(const Tensor<double>& y, const Tensor<double>& w) {
    return reduce_sum_all(mul(y, w));
}

}  // namespace

std::vector<GradCheckCase> gradcheck_tensor_ops(std::uint64_t seed) {
    SuiteBuilder s(seed);
    auto& rng = s.rng;
    const double tol = 1e-5;

    {
        auto a = randu(rng, {2, 3, 4}, -1, 1), b = randu(rng, {3, 1}, -1, 1);
        auto w = probe_like_shape(rng, {2, 3, 4});
        s.run("add", tol, [=] { return dot_probe(add(a, b), w); }, {a, b});
        s.run("sub", tol, [=] { return dot_probe(sub(a, b), w); }, {a, b});
        s.run("mul", tol, [=] { return dot_probe(mul(a, b), w); }, {a, b});
    }
    {
        auto a = randu(rng, {2, 3, 4}, -1, 1);
        auto b = rand_signed(rng, {3, 4}, 0.5, 1.5);
        auto w = probe_like_shape(rng, {2, 3, 4});
        s.run("div", tol, [=] { return dot_probe(div(a, b), w); }, {a, b});
        s.run("add_scalar", tol, [=] { return dot_probe(add_scalar(a, 0.7), w); }, {a});
        s.run("scale", tol, [=] { return dot_probe(scale(a, -1.3), w); }, {a});
    }
    {
        auto x = randu(rng, {3, 5}, 0.2, 2.0);
        auto w = probe_like_shape(rng, {3, 5});
        s.run("sqrt", tol, [=] { return dot_probe(sqrt(x), w); }, {x});
        s.run("pow_nonneg", tol, [=] { return dot_probe(pow_nonneg(x, 1.3), w); }, {x});
    }
    {
        auto x = rand_signed(rng, {4, 4}, 0.1, 1.0);
        auto w = probe_like_shape(rng, {4, 4});
        s.run("abs", tol, [=] { return dot_probe(abs(x), w); }, {x});
    }
    {
        // Keep samples away from the clamp bounds so h stays on one side.
        auto x = Tensor<double>::zeros({5, 5});
        for (auto& v : x.payload()->values) {
            double u;
            do {
                u = rng.uniform(-2.0, 2.0);
            } while (std::abs(u + 0.5) < 0.05 || std::abs(u - 0.7) < 0.05);
            v = u;
        }
        auto w = probe_like_shape(rng, {5, 5});
        s.run("clamp", tol,
              [=] { return dot_probe(clamp(x, std::optional<double>(-0.5), std::optional<double>(0.7)), w); },
              {x});
    }
    {
        auto x = randu(rng, {3, 4}, -3, 3);
        auto w = probe_like_shape(rng, {3, 4});
        s.run("gelu", tol, [=] { return dot_probe(gelu(x), w); }, {x});
    }
    {
        auto a = randu(rng, {2, 3, 4}, -1, 1), b = randu(rng, {2, 4, 5}, -1, 1);
        auto w = probe_like_shape(rng, {2, 3, 5});
        s.run("matmul", tol, [=] { return dot_probe(matmul(a, b), w); }, {a, b});
    }
    {
        auto a = randu(rng, {3, 4}, -1, 1), b = randu(rng, {2, 4, 5}, -1, 1);
        auto w = probe_like_shape(rng, {2, 3, 5});
        s.run("matmul_broadcast", tol, [=] { return dot_probe(matmul(a, b), w); }, {a, b});
    }
    {
        auto x = randu(rng, {2, 4, 6, 6}, -1, 1);
        auto k = randu(rng, {3, 4, 3, 3}, -1, 1);
        auto bias = randu(rng, {3}, -1, 1);
        auto w1 = probe_like_shape(rng, {2, 3, 6, 6});
        s.run("conv2d", tol,
              [=] { return dot_probe(conv2d(x, k, std::optional<Tensor<double>>(bias), 1, 1, 1), w1); },
              {x, k, bias});
        auto w2 = probe_like_shape(rng, {2, 3, 3, 3});
        s.run("conv2d_strided", tol,
              [=] { return dot_probe(conv2d(x, k, std::optional<Tensor<double>>(bias), 2, 1, 1), w2); },
              {x, k, bias});
        auto kd = randu(rng, {4, 1, 3, 3}, -1, 1);
        auto w3 = probe_like_shape(rng, {2, 4, 6, 6});
        s.run("conv2d_depthwise", tol,
              [=] { return dot_probe(conv2d(x, kd, std::nullopt, 1, 1, 4), w3); }, {x, kd});
    }
    {
        auto x = randu(rng, {3, 5}, -2, 2);
        auto w = probe_like_shape(rng, {3, 5});
        s.run("softmax", tol, [=] { return dot_probe(softmax(x, -1), w); }, {x});
        s.run("softmax_axis0", tol, [=] { return dot_probe(softmax(x, 0), w); }, {x});
    }
    {
        auto x = randu(rng, {4, 6}, -1, 1);
        auto g = randu(rng, {6}, 0.5, 1.5);
        auto b = randu(rng, {6}, -0.5, 0.5);
        auto w = probe_like_shape(rng, {4, 6});
        s.run("layer_norm", tol,
              [=] { return dot_probe(layer_norm(x, g, b, 1e-5), w); }, {x, g, b});
        auto xc = add_scalar(scale(randu(rng, {4, 6}, -1, 1), 1e-3), 0.5);
        s.run("layer_norm_near_constant", tol,
              [=] { return dot_probe(layer_norm(xc, g, b, 1e-5), w); }, {xc, g, b});
    }
    {
        auto x = randu(rng, {2, 6}, -1, 1);
        auto w = probe_like_shape(rng, {3, 4});
        s.run("reshape", tol, [=] { return dot_probe(reshape(x, {3, 4}), w); }, {x});
    }
    {
        auto x = randu(rng, {2, 3, 4}, -1, 1);
        auto w = probe_like_shape(rng, {4, 2, 3});
        s.run("permute", tol, [=] { return dot_probe(permute(x, {2, 0, 1}), w); }, {x});
    }
    {
        auto x = randu(rng, {3, 4, 5}, -1, 1);
        s.run("reduce_mean_all", tol, [=] { return reduce_mean_all(x); }, {x});
        s.run("reduce_sum_all", tol, [=] { return scale(reduce_sum_all(x), 0.1); }, {x});
        auto w = probe_like_shape(rng, {4});
        s.run("reduce_mean_axes", tol,
              [=] { return dot_probe(reduce_mean(x, {0, 2}, false), w); }, {x});
    }
    {
        auto x = randu(rng, {3, 6}, -1, 1);
        auto w = probe_like_shape(rng, {3, 3});
        s.run("slice", tol, [=] { return dot_probe(slice(x, 1, 2, 3), w); }, {x});
        auto w2 = probe_like_shape(rng, {3, 9});
        s.run("pad_zero", tol, [=] { return dot_probe(pad_zero(x, 1, 1, 2), w2); }, {x});
    }
    {
        auto a = randu(rng, {2, 3}, -1, 1), b = randu(rng, {2, 5}, -1, 1);
        auto w = probe_like_shape(rng, {2, 8});
        s.run("concat", tol, [=] { return dot_probe(concat(a, b, 1), w); }, {a, b});
    }
    {
        auto x = randu(rng, {2, 4, 6, 3}, -1, 1);
        auto w = probe_like_shape(rng, {2, 4, 6, 3});
        s.run("roll2", tol, [=] { return dot_probe(roll2(x, -2, 3, 1, 2), w); }, {x});
    }
    {
        auto t = randu(rng, {7, 4}, -1, 1);
        std::vector<std::int64_t> idx = {0, 3, 3, 6, 1};
        auto w = probe_like_shape(rng, {5, 4});
        s.run("gather_rows", tol, [=] { return dot_probe(gather_rows(t, idx), w); }, {t});
    }
    {
        auto x = randu(rng, {1, 2, 5, 5}, -1, 1);
        auto k = randu(rng, {3, 2, 3, 3}, -1, 1);
        s.run("composite_conv_softmax_mean", tol,
              [=] {
                  auto y = conv2d(x, k, std::nullopt, 1, 1, 1);
                  return reduce_mean_all(softmax(reshape(y, {3, 25}), -1));
              },
              {x, k});
    }
    return s.cases;
}

std::vector<GradCheckCase> gradcheck_losses(std::uint64_t seed) {
    SuiteBuilder s(seed);
    auto& rng = s.rng;
    const double tol = 1e-5;

    {
        auto x = randu(rng, {1, 3, 6, 6}, 0, 1);
        auto y = randu(rng, {1, 3, 6, 6}, 0, 1);
        s.run("charbonnier", tol, [=] { return charbonnier(x, y, 1e-3); }, {x, y});
    }
    {
        // A planar ramp between x and y keeps every L1 residual far from the
        // |.|-kink: forward differences sit at 0.07/0.11 and the Sobel
        // responses (zero padding included) stay above 0.42 in magnitude.
        auto y = randu(rng, {1, 2, 6, 6}, 0, 1);
        auto ramp = Tensor<double>::zeros({1, 2, 6, 6});
        {
            auto rd = ramp.mutable_data();
            for (std::int64_t ch = 0; ch < 2; ++ch)
                for (std::int64_t i = 0; i < 6; ++i)
                    for (std::int64_t j = 0; j < 6; ++j)
                        rd[static_cast<std::size_t>((ch * 6 + i) * 6 + j)] =
                            0.11 * static_cast<double>(i) + 0.07 * static_cast<double>(j) + 0.05;
        }
        auto x = add(y, ramp);
        s.run("gradient_loss_forward", tol,
              [=] { return gradient_loss(x, y, GradientOp::forward_diff); }, {x, y});
        s.run("gradient_loss_sobel", tol,
              [=] { return gradient_loss(x, y, GradientOp::sobel); }, {x, y});
    }
    {
        auto x = randu(rng, {1, 2, 12, 12}, 0.1, 0.9);
        auto y = randu(rng, {1, 2, 12, 12}, 0.1, 0.9);
        s.run("ms_ssim_1_scale", tol, [=] { return ms_ssim_loss(x, y, 1); }, {x, y});
    }
    {
        auto x = randu(rng, {1, 3, 24, 24}, 0.1, 0.9);
        auto y = randu(rng, {1, 3, 24, 24}, 0.1, 0.9);
        s.run("ms_ssim_2_scale", tol, [=] { return ms_ssim_loss(x, y, 2); }, {x, y},
              /*max_coords=*/96);
        LossConfig cfg;
        cfg.msssim_levels = 2;
        s.run("total_loss", tol, [=] { return total_loss(x, y, cfg).l_sum; }, {x, y},
              /*max_coords=*/96);
    }
    return s.cases;
}

std::vector<GradCheckCase> gradcheck_model(std::uint64_t seed) {
    SuiteBuilder s(seed);
    auto& rng = s.rng;

    ModelConfig cfg;
    cfg.image_h = cfg.image_w = 32;
    cfg.patch_size = 2;
    cfg.embed_dim = 4;
    cfg.window = 2;
    cfg.layer_depth = 2;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.skip_drop_ratio = 0.0;  // keeps the training path deterministic

    for (auto variant : {Variant::origin, Variant::conv_type1, Variant::conv_type2}) {
        cfg.variant = variant;
        Rng init(Rng::mix(seed, 7 + static_cast<std::uint64_t>(variant)));
        URSCTModel<double> model(cfg, init);
        auto img = randu(rng, {1, 3, 32, 32}, 0, 1);
        auto w = probe_like_shape(rng, {1, 3, 32, 32});
        std::vector<Tensor<double>> leaves;
        leaves.push_back(img);
        for (const auto& [_, p] : model.params()) leaves.push_back(p);
        s.run("model_forward_" + to_string(variant), 1e-4,
              [&model, img, w] { return dot_probe(model.forward(img, true, nullptr), w); },
              std::move(leaves), /*max_coords=*/2);
    }
    return s.cases;
}

}  // namespace ursct
