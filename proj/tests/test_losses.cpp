#include <cmath>

#include "doctest.h"
#include "support/oracles.hpp"
#include "support/testutil.hpp"
#include "ursct/losses.hpp"

using namespace ursct;

namespace {

Tensor<double> random_image(Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    auto t = Tensor<double>::zeros(std::move(shape));
    for (auto& v : t.mutable_data()) v = rng.uniform();
    return t;
}

// Values on the 1/256 grid are exact in binary, so shifting by a dyadic
// constant stays exact and difference identities hold bitwise.
Tensor<double> quantized_image(Shape shape, std::uint64_t seed) {
    Rng rng(seed);
    auto t = Tensor<double>::zeros(std::move(shape));
    for (auto& v : t.mutable_data()) v = std::floor(rng.uniform() * 256.0) / 256.0;
    return t;
}

}  // namespace

TEST_SUITE_BEGIN("losses");

TEST_CASE("charbonnier closed forms") {
    auto x = random_image({1, 3, 6, 6}, 1);
    auto same = charbonnier(x, x.clone(), 1e-3);
    CHECK(same.item() == doctest::Approx(1e-3).epsilon(1e-12));

    // One pixel pair differing by 3e-4.
    auto a = Tensor<double>::from({1, 1, 1, 1}, {0.5});
    auto b = Tensor<double>::from({1, 1, 1, 1}, {0.5 + 3e-4});
    const double want = std::sqrt(3e-4 * 3e-4 + 1e-3 * 1e-3);
    CHECK(charbonnier(a, b, 1e-3).item() == doctest::Approx(want).epsilon(1e-12));
    CHECK(charbonnier(a, b, 1e-3).item() == doctest::Approx(1.0440306508910551e-3).epsilon(1e-9));

    CHECK_THROWS_AS(charbonnier(a, b, 0.0), ConfigError);
    CHECK_THROWS_AS(charbonnier(a, Tensor<double>::zeros({1, 1, 2, 2}), 1e-3), DimensionError);
}

TEST_CASE("charbonnier gradient vanishes at equality") {
    auto x = random_image({1, 2, 4, 4}, 2);
    auto xhat = x.clone();
    xhat.set_requires_grad(true);
    GradTape<double> tape;
    {
        GradTape<double>::Scope sc(tape);
        tape.backward(charbonnier(xhat, x, 1e-3));
    }
    for (auto g : xhat.grad()) CHECK(g == 0.0);
}

TEST_CASE("gradient_map forward differences with zero trailing edge") {
    auto flat = Tensor<double>::full({1, 1, 3, 4}, 0.7);
    auto [gx0, gy0] = gradient_map(flat);
    for (auto v : gx0.data()) CHECK(v == 0.0);
    for (auto v : gy0.data()) CHECK(v == 0.0);

    // Column ramp j/4: Gx = 1/4 except the zero last column, Gy = 0.
    auto ramp = Tensor<double>::zeros({1, 1, 3, 4});
    for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 4; ++j)
            ramp.mutable_data()[i * 4 + j] = static_cast<double>(j) / 4.0;
    auto [gx, gy] = gradient_map(ramp);
    CHECK(gx.shape() == Shape{1, 1, 3, 4});
    for (std::int64_t i = 0; i < 3; ++i) {
        for (std::int64_t j = 0; j < 4; ++j) {
            CHECK(gx.at({0, 0, i, j}) == (j < 3 ? 0.25 : 0.0));
            CHECK(gy.at({0, 0, i, j}) == 0.0);
        }
    }
}

TEST_CASE("gradient_loss identities") {
    // Constant offsets cancel exactly on the dyadic grid.
    auto x = quantized_image({1, 3, 8, 8}, 3);
    auto shifted = add_scalar(x, 0.25);
    CHECK(gradient_loss(shifted, x, GradientOp::forward_diff).item() == 0.0);
    CHECK(gradient_loss(shifted, x, GradientOp::sobel).item() == 0.0);

    // Same property at full double precision is only epsilon-level.
    auto xr = random_image({1, 3, 8, 8}, 4);
    CHECK(gradient_loss(add_scalar(xr, 0.3), xr).item() < 1e-15);

    // Column ramp alpha*j on top of a dyadic image: the x-difference map is
    // alpha on 7 of 8 columns, so the loss is 0.5 * alpha * 7/8 exactly.
    auto ramp = Tensor<double>::zeros({1, 1, 4, 8});
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < 8; ++j)
            ramp.mutable_data()[i * 8 + j] = static_cast<double>(j) / 8.0;
    auto base = quantized_image({1, 1, 4, 8}, 5);
    CHECK(gradient_loss(add(base, ramp), base).item() == 7.0 / 128.0);
}

TEST_CASE("gradient op names round-trip") {
    CHECK(gradient_op_from_string("forward_diff") == GradientOp::forward_diff);
    CHECK(gradient_op_from_string("sobel") == GradientOp::sobel);
    CHECK(to_string(GradientOp::sobel) == "sobel");
    CHECK_THROWS_AS(gradient_op_from_string("laplace"), ConfigError);
}

TEST_CASE("ms_ssim_loss identities and bounds") {
    auto x = random_image({1, 3, 192, 192}, 6);
    CHECK(ms_ssim_loss(x, x.clone(), 5).item() < 1e-9);

    // Inverting a checkerboard destroys structural similarity.
    auto cb = Tensor<double>::zeros({1, 1, 48, 48});
    for (std::int64_t i = 0; i < 48; ++i)
        for (std::int64_t j = 0; j < 48; ++j)
            cb.mutable_data()[i * 48 + j] = ((i / 4 + j / 4) % 2 == 0) ? 0.9 : 0.1;
    auto inv = add_scalar(scale(cb, -1.0), 1.0);
    const double bad = ms_ssim_loss(cb, inv, 2).item();
    CHECK(bad > 0.5);
    CHECK(bad <= 1.0);

    auto a = random_image({2, 3, 48, 48}, 7);
    auto b = random_image({2, 3, 48, 48}, 8);
    const double v = ms_ssim_loss(a, b, 2).item();
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);

    CHECK_THROWS_AS(ms_ssim_loss(a, b, 4), ConfigError);  // 4 scales need min dim 88
}

TEST_CASE("ms_ssim_loss matches the oracle") {
    auto a = random_image({1, 3, 48, 48}, 9);
    auto b = random_image({1, 3, 48, 48}, 10);
    CHECK(ms_ssim_loss(a, b, 2).item() ==
          doctest::Approx(1.0 - oracle::ms_ssim4(a, b, 2)).epsilon(1e-6));

    auto c = random_image({2, 2, 96, 96}, 11);
    auto d = add(c, scale(random_image({2, 2, 96, 96}, 12), 0.05));
    CHECK(ms_ssim_loss(c, d, 3).item() ==
          doctest::Approx(1.0 - oracle::ms_ssim4(c, d, 3)).epsilon(1e-6));
}

TEST_CASE("total_loss composition and ablation switches") {
    LossConfig cfg;
    cfg.msssim_levels = 2;

    auto x = random_image({1, 3, 48, 48}, 13);
    auto rep = total_loss(x, x.clone(), cfg);
    CHECK(std::abs(rep.l_sum.item() - cfg.weights.w1 * cfg.weights.epsilon) < 1e-9);
    CHECK(rep.l_gd.item() == 0.0);
    CHECK(rep.l_m.item() < 1e-9);

    auto a = random_image({1, 3, 48, 48}, 14);
    auto b = random_image({1, 3, 48, 48}, 15);
    auto r2 = total_loss(a, b, cfg);
    CHECK(r2.l_sum.item() ==
          doctest::Approx(cfg.weights.w1 * r2.l_c.item() + cfg.weights.w2 * r2.l_gd.item() +
                          cfg.weights.w3 * r2.l_m.item())
              .epsilon(1e-15));
    CHECK(r2.l_c.item() == doctest::Approx(charbonnier(a, b, 1e-3).item()).epsilon(1e-15));

    LossConfig only_c = cfg;
    only_c.use_gradient = false;
    only_c.use_msssim = false;
    auto r3 = total_loss(a, b, only_c);
    CHECK(r3.l_gd.item() == 0.0);
    CHECK(r3.l_m.item() == 0.0);
    CHECK(r3.l_sum.item() == doctest::Approx(r3.l_c.item() * cfg.weights.w1).epsilon(1e-15));

    LossConfig bad = cfg;
    bad.weights.w2 = -1.0;
    CHECK_THROWS_AS(total_loss(a, b, bad), ConfigError);
    bad = cfg;
    bad.weights.epsilon = 0.0;
    CHECK_THROWS_AS(total_loss(a, b, bad), ConfigError);
    bad = cfg;
    bad.msssim_levels = 0;
    CHECK_THROWS_AS(total_loss(a, b, bad), ConfigError);
}

TEST_CASE("float instantiation stays consistent") {
    Rng rng(16);
    auto x = Tensor<float>::zeros({1, 3, 8, 8});
    for (auto& v : x.mutable_data()) v = static_cast<float>(rng.uniform());
    auto l = charbonnier(x, x.clone(), 1e-3f);
    CHECK(l.item() == doctest::Approx(1e-3f).epsilon(1e-5));
}

TEST_SUITE_END();
