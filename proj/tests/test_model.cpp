#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "support/oracles.hpp"
#include "support/testutil.hpp"
#include "ursct/model.hpp"
#include "ursct/ops.hpp"

using namespace ursct;

namespace {

ModelConfig tiny_config(Variant v = Variant::conv_type1) {
    ModelConfig cfg;
    cfg.image_h = 64;
    cfg.image_w = 64;
    cfg.patch_size = 2;
    cfg.embed_dim = 8;
    cfg.window = 4;
    cfg.layer_depth = 2;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.skip_drop_ratio = 0.0;
    cfg.variant = v;
    return cfg;
}

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0) {
    auto t = Tensor<double>::zeros(std::move(shape));
    for (auto& v : t.mutable_data()) v = rng.uniform(lo, hi);
    return t;
}

// Typed empty optional; bare std::nullopt cannot drive template deduction.
std::optional<Tensor<double>> no_mask() { return std::nullopt; }

// Copies values from src into dst; shapes must already agree.
void copy_values(Tensor<double>& dst, const Tensor<double>& src) {
    REQUIRE(dst.shape() == src.shape());
    std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("config validation rejects bad architectures") {
    CHECK_NOTHROW(tiny_config().validate());

    auto bad = tiny_config();
    bad.embed_dim = 6;
    bad.heads = 4;  // 6 % 4 != 0
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = tiny_config();
    bad.image_h = 48;  // not a multiple of 8*2*4
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = tiny_config();
    bad.layer_depth = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = tiny_config();
    bad.skip_drop_ratio = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    bad = tiny_config();
    bad.attn_scale = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("variant names round-trip") {
    for (auto v : {Variant::origin, Variant::conv_type1, Variant::conv_type2}) {
        CHECK(variant_from_string(to_string(v)) == v);
    }
    CHECK_THROWS_AS(variant_from_string("swin"), ConfigError);
}

TEST_CASE("window_partition tiles row-major") {
    auto z = Tensor<double>::zeros({1, 4, 4, 1});
    for (std::int64_t i = 0; i < 16; ++i) z.mutable_data()[i] = static_cast<double>(i);
    auto w = window_partition(z, 2);
    CHECK(w.shape() == Shape{4, 4, 1});
    // Top-left tile holds grid entries (0,0),(0,1),(1,0),(1,1).
    CHECK(w.at({0, 0, 0}) == 0);
    CHECK(w.at({0, 1, 0}) == 1);
    CHECK(w.at({0, 2, 0}) == 4);
    CHECK(w.at({0, 3, 0}) == 5);
    // Second window is the top-right tile.
    CHECK(w.at({1, 0, 0}) == 2);
    CHECK(w.at({3, 3, 0}) == 15);
}

TEST_CASE("window_partition with full-size window is a flatten") {
    Rng rng(3);
    auto z = random_tensor({2, 4, 4, 3}, rng);
    auto w = window_partition(z, 4);
    CHECK(testutil::bitwise_equal(w, reshape(z, {2, 16, 3})));
}

TEST_CASE("window partition/merge round-trips bitwise") {
    Rng rng(5);
    auto z = random_tensor({2, 8, 8, 3}, rng);
    auto back = window_merge(window_partition(z, 4), 2, 8, 8, 4);
    CHECK(testutil::bitwise_equal(back, z));

    CHECK_THROWS_AS(window_partition(z, 3), DimensionError);
    CHECK_THROWS_AS(window_merge(Tensor<double>::zeros({4, 9, 3}), 2, 8, 8, 4), DimensionError);
}

TEST_CASE("roll2 shifts cyclically and inverts") {
    auto x = Tensor<double>::zeros({1, 4, 1, 1});
    for (std::int64_t i = 0; i < 4; ++i) x.mutable_data()[i] = static_cast<double>(i);
    auto r = roll2(x, 2, 0, 1, 2);
    CHECK(r.at({0, 0, 0, 0}) == 2);
    CHECK(r.at({0, 1, 0, 0}) == 3);
    CHECK(r.at({0, 2, 0, 0}) == 0);
    CHECK(r.at({0, 3, 0, 0}) == 1);

    Rng rng(7);
    auto z = random_tensor({1, 8, 8, 2}, rng);
    auto round = roll2(roll2(z, -3, -3, 1, 2), 3, 3, 1, 2);
    CHECK(testutil::bitwise_equal(round, z));
}

TEST_CASE("shift_region_ids covers the 3x3 band product") {
    auto ids = shift_region_ids(8, 8, 4, 2);
    REQUIRE(ids.size() == 64);
    std::set<int> distinct(ids.begin(), ids.end());
    CHECK(distinct.size() == 9);
    // Row bands [0,4) [4,6) [6,8), same for columns; id = 3*rband + cband.
    auto band = [](std::int64_t x) { return x < 4 ? 0 : (x < 6 ? 1 : 2); };
    for (std::int64_t r = 0; r < 8; ++r) {
        for (std::int64_t c = 0; c < 8; ++c) {
            CHECK(ids[static_cast<std::size_t>(r * 8 + c)] == 3 * band(r) + band(c));
        }
    }
}

TEST_CASE("build_attn_mask with zero shift is all zeros") {
    auto m = build_attn_mask<double>(8, 8, 4, 0);
    CHECK(m.shape() == Shape{4, 16, 16});
    for (auto v : m.data()) CHECK(v == 0.0);
}

TEST_CASE("build_attn_mask separates exactly the cross-region pairs") {
    const std::int64_t h = 16, w = 16, T = 8, s = 4;
    auto m = build_attn_mask<double>(h, w, T, s);
    REQUIRE(m.shape() == Shape{(h / T) * (w / T), T * T, T * T});
    auto ids = shift_region_ids(h, w, T, s);
    const std::int64_t wn = w / T;
    auto region = [&](std::int64_t win_idx, std::int64_t tok) {
        const std::int64_t gr = (win_idx / wn) * T + tok / T;
        const std::int64_t gc = (win_idx % wn) * T + tok % T;
        return ids[static_cast<std::size_t>(gr * w + gc)];
    };
    for (std::int64_t n = 0; n < m.dim(0); ++n) {
        for (std::int64_t i = 0; i < T * T; ++i) {
            for (std::int64_t j = 0; j < T * T; ++j) {
                const double v = m.at({n, i, j});
                if (region(n, i) == region(n, j)) {
                    CHECK(v == 0.0);
                } else {
                    CHECK(v == -1e4);
                }
            }
        }
    }
}

TEST_CASE("masked attention suppresses cross-region weight below 1e-7") {
    // With one-hot value vectors the attention output IS the weight matrix.
    const std::int64_t h = 16, w = 16, T = 8, s = 4, t2 = T * T;
    auto mask = build_attn_mask<double>(h, w, T, s);
    Rng rng(11);
    auto q = random_tensor({4, 1, t2, t2}, rng, -1, 1);
    auto k = random_tensor({4, 1, t2, t2}, rng, -1, 1);
    auto v = Tensor<double>::zeros({4, 1, t2, t2});
    for (std::int64_t n = 0; n < 4; ++n)
        for (std::int64_t t = 0; t < t2; ++t)
            v.mutable_data()[(n * t2 + t) * t2 + t] = 1.0;
    auto bias = Tensor<double>::zeros({1, t2, t2});
    auto out = window_attention(q, k, v, bias, std::optional<Tensor<double>>(mask),
                                std::sqrt(static_cast<double>(t2)));
    auto ids = shift_region_ids(h, w, T, s);
    const std::int64_t wn = w / T;
    auto region = [&](std::int64_t win_idx, std::int64_t tok) {
        const std::int64_t gr = (win_idx / wn) * T + tok / T;
        const std::int64_t gc = (win_idx % wn) * T + tok % T;
        return ids[static_cast<std::size_t>(gr * w + gc)];
    };
    double max_cross = 0.0, min_row_sum = 2.0;
    for (std::int64_t n = 0; n < 4; ++n) {
        for (std::int64_t i = 0; i < t2; ++i) {
            double row = 0.0;
            for (std::int64_t j = 0; j < t2; ++j) {
                const double wgt = out.at({n, i, j});
                row += wgt;
                if (region(n, i) != region(n, j)) max_cross = std::max(max_cross, wgt);
            }
            min_row_sum = std::min(min_row_sum, row);
        }
    }
    CHECK(max_cross < 1e-7);
    CHECK(min_row_sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("relative_bias_index layout") {
    auto idx1 = relative_bias_index(1);
    REQUIRE(idx1.size() == 1);
    CHECK(idx1[0] == 0);

    auto idx2 = relative_bias_index(2);
    REQUIRE(idx2.size() == 16);
    for (auto v : idx2) {
        CHECK(v >= 0);
        CHECK(v < 9);
    }
    // Token 0 = (0,0), token 3 = (1,1): offset (-1,-1) -> slot 0; the diagonal
    // (zero offset) sits in the table centre.
    CHECK(idx2[0 * 4 + 3] == 0);
    CHECK(idx2[0 * 4 + 0] == 4);
    CHECK(idx2[3 * 4 + 3] == 4);
    CHECK(idx2[3 * 4 + 0] == 8);
}

TEST_CASE("relative_position_bias gathers the table") {
    const std::int64_t T = 2, U = 3;
    Rng rng(13);
    auto table = random_tensor({(2 * T - 1) * (2 * T - 1), U}, rng, -1, 1);
    auto bias = relative_position_bias(table, T);
    REQUIRE(bias.shape() == Shape{U, 4, 4});
    auto idx = relative_bias_index(T);
    for (std::int64_t u = 0; u < U; ++u)
        for (std::int64_t i = 0; i < 4; ++i)
            for (std::int64_t j = 0; j < 4; ++j)
                CHECK(bias.at({u, i, j}) == table.at({idx[static_cast<std::size_t>(i * 4 + j)], u}));
}

TEST_CASE("single-token attention returns V") {
    Rng rng(17);
    auto q = random_tensor({3, 2, 1, 4}, rng, -1, 1);
    auto k = random_tensor({3, 2, 1, 4}, rng, -1, 1);
    auto v = random_tensor({3, 2, 1, 4}, rng, -1, 1);
    auto bias = random_tensor({2, 1, 1}, rng, -1, 1);
    auto out = window_attention(q, k, v, bias, no_mask(), 2.0);
    REQUIRE(out.shape() == Shape{3, 1, 8});
    for (std::int64_t n = 0; n < 3; ++n)
        for (std::int64_t u = 0; u < 2; ++u)
            for (std::int64_t c = 0; c < 4; ++c)
                CHECK(out.at({n, 0, u * 4 + c}) ==
                      doctest::Approx(v.at({n, u, 0, c})).epsilon(1e-12));
}

TEST_CASE("constant V makes attention the identity on V") {
    Rng rng(19);
    auto q = random_tensor({2, 2, 9, 3}, rng, -2, 2);
    auto k = random_tensor({2, 2, 9, 3}, rng, -2, 2);
    auto v = Tensor<double>::full({2, 2, 9, 3}, 0.625);
    auto bias = random_tensor({2, 9, 9}, rng, -1, 1);
    auto out = window_attention(q, k, v, bias, no_mask(), std::sqrt(3.0));
    for (auto val : out.data()) CHECK(val == doctest::Approx(0.625).epsilon(1e-12));
}

TEST_CASE("window_attention matches the oracle") {
    Rng rng(23);
    const std::int64_t N = 2, B = 2, U = 2, t2 = 4, cu = 3;
    auto q = random_tensor({B * N, U, t2, cu}, rng, -1, 1);
    auto k = random_tensor({B * N, U, t2, cu}, rng, -1, 1);
    auto v = random_tensor({B * N, U, t2, cu}, rng, -1, 1);
    auto bias = random_tensor({U, t2, t2}, rng, -0.5, 0.5);
    auto mask = Tensor<double>::zeros({N, t2, t2});
    Rng mrng(29);
    for (auto& m : mask.mutable_data()) m = mrng.uniform() < 0.3 ? -1e4 : 0.0;

    SUBCASE("without mask") {
        auto got = window_attention(q, k, v, bias, no_mask(), std::sqrt(3.0));
        auto want = oracle::attention(q, k, v, bias, std::nullopt, std::sqrt(3.0));
        CHECK(testutil::max_abs_diff(got, want) < 1e-6);
    }
    SUBCASE("with mask applied per window modulo N") {
        auto got = window_attention(q, k, v, bias, std::optional<Tensor<double>>(mask),
                                    std::sqrt(3.0));
        auto want = oracle::attention(q, k, v, bias, mask, std::sqrt(3.0));
        CHECK(testutil::max_abs_diff(got, want) < 1e-6);
    }
}

TEST_CASE("multi-head attention equals stacked single heads") {
    Rng rng(31);
    const std::int64_t nw = 3, t2 = 9, cu = 2;
    auto q = random_tensor({nw, 2, t2, cu}, rng, -1, 1);
    auto k = random_tensor({nw, 2, t2, cu}, rng, -1, 1);
    auto v = random_tensor({nw, 2, t2, cu}, rng, -1, 1);
    auto bias = random_tensor({2, t2, t2}, rng, -0.5, 0.5);
    auto full = window_attention(q, k, v, bias, no_mask(), 1.7);
    for (std::int64_t u = 0; u < 2; ++u) {
        auto part = window_attention(slice(q, 1, u, 1), slice(k, 1, u, 1), slice(v, 1, u, 1),
                                     slice(bias, 0, u, 1), no_mask(), 1.7);
        auto want = slice(full, 2, u * cu, cu);
        CHECK(testutil::max_abs_diff(part, want) < 1e-12);
    }
}

TEST_CASE("attention variants agree when conv paths are neutral") {
    Rng ra(41), rb(42), rc(43);
    auto a = URSCTModel<double>(tiny_config(Variant::origin), ra);
    auto b = URSCTModel<double>(tiny_config(Variant::conv_type1), rb);
    auto c = URSCTModel<double>(tiny_config(Variant::conv_type2), rc);

    // Blocks are found via their qkv linear weights in the origin registry.
    std::vector<std::string> blocks;
    for (const auto& [name, t] : a.params()) {
        const std::string tail = ".qkv.w";
        if (name.size() > tail.size() && name.compare(name.size() - tail.size(), tail.size(), tail) == 0) {
            blocks.push_back(name.substr(0, name.size() - tail.size()));
        }
    }
    REQUIRE(blocks.size() == 7 * 2);  // 7 stages x layer_depth 2

    // Shared parameters copy across by name.
    for (const auto& [name, t] : a.params()) {
        if (name.find(".qkv.") == std::string::npos) {
            copy_values(b.param(name), t);
            copy_values(c.param(name), t);
        }
    }
    for (const auto& p : blocks) {
        const auto& w = a.param(p + ".qkv.w");   // [c, 3c]
        const auto& bias = a.param(p + ".qkv.b");
        const std::int64_t cdim = w.dim(0);

        // conv_type2 shares the linear weights; its depthwise V branch is
        // zeroed out so it adds nothing.
        copy_values(c.param(p + ".qkv.w"), w);
        copy_values(c.param(p + ".qkv.b"), bias);
        std::fill(c.param(p + ".qkv.dw").mutable_data().begin(),
                  c.param(p + ".qkv.dw").mutable_data().end(), 0.0);
        std::fill(c.param(p + ".qkv.db").mutable_data().begin(),
                  c.param(p + ".qkv.db").mutable_data().end(), 0.0);

        // conv_type1: 1x1 conv transposed from the linear map, depthwise as a
        // centre-tap identity.
        auto& cw = b.param(p + ".qkv.cw");  // [3c, c, 1, 1]
        auto cwd = cw.mutable_data();
        for (std::int64_t o = 0; o < 3 * cdim; ++o)
            for (std::int64_t i = 0; i < cdim; ++i)
                cwd[static_cast<std::size_t>(o * cdim + i)] = w.at({i, o});
        copy_values(b.param(p + ".qkv.cb"), bias);
        auto& dw = b.param(p + ".qkv.dw");  // [3c, 1, 3, 3]
        auto dwd = dw.mutable_data();
        std::fill(dwd.begin(), dwd.end(), 0.0);
        for (std::int64_t o = 0; o < 3 * cdim; ++o) dwd[static_cast<std::size_t>(o * 9 + 4)] = 1.0;
        std::fill(b.param(p + ".qkv.db").mutable_data().begin(),
                  b.param(p + ".qkv.db").mutable_data().end(), 0.0);
    }

    Rng drng(47);
    auto img = random_tensor({1, 3, 64, 64}, drng);
    auto fa = a.forward(img);
    auto fb = b.forward(img);
    auto fc = c.forward(img);
    CHECK(fa.shape() == Shape{1, 3, 64, 64});
    CHECK(testutil::max_abs_diff(fa, fb) < 1e-6);
    CHECK(testutil::max_abs_diff(fa, fc) < 1e-6);
}

TEST_CASE("zeroed projection and MLP tail make a block the identity") {
    Rng rng(53);
    auto cfg = tiny_config();
    auto model = URSCTModel<double>(cfg, rng);
    for (const char* name : {"enc0.b0.proj.w", "enc0.b0.proj.b", "enc0.b0.mlp.w2",
                             "enc0.b0.mlp.b2", "enc0.b1.proj.w", "enc0.b1.proj.b",
                             "enc0.b1.mlp.w2", "enc0.b1.mlp.b2"}) {
        auto d = model.param(name).mutable_data();
        std::fill(d.begin(), d.end(), 0.0);
    }
    Rng drng(59);
    auto z = random_tensor({1, 32, 32, 8}, drng, 0.1, 1.0);
    auto plain = model.run_block("enc0.b0", z, 8, false, false);
    CHECK(testutil::bitwise_equal(plain, z));
    auto shifted = model.run_block("enc0.b1", z, 8, true, true);
    CHECK(testutil::bitwise_equal(shifted, z));
}

TEST_CASE("forward shape, range, and inference determinism") {
    Rng rng(61);
    auto cfg = tiny_config();
    auto model = URSCTModel<double>(cfg, rng);
    Rng drng(67);
    auto img = random_tensor({2, 3, 64, 64}, drng);
    auto out = model.forward(img);
    REQUIRE(out.shape() == Shape{2, 3, 64, 64});
    for (auto v : out.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    auto again = model.forward(img);
    CHECK(testutil::bitwise_equal(out, again));

    CHECK_THROWS_AS(model.forward(Tensor<double>::zeros({1, 3, 32, 32})), ConfigError);
    CHECK_THROWS_AS(model.forward(Tensor<double>::zeros({1, 1, 64, 64})), DimensionError);
}

TEST_CASE("forward preserves shape for every legal patch size") {
    // The last upsample must undo the patch embedding, whatever its stride.
    for (std::int64_t p : {std::int64_t{1}, std::int64_t{2}}) {
        auto cfg = tiny_config();
        cfg.patch_size = p;
        Rng rng(63);
        auto model = URSCTModel<float>(cfg, rng);
        auto out = model.forward(Tensor<float>::full({1, 3, 64, 64}, 0.4f));
        CHECK(out.shape() == Shape{1, 3, 64, 64});
    }
}

TEST_CASE("training forward reaches every parameter") {
    Rng rng(71);
    auto cfg = tiny_config();
    cfg.skip_drop_ratio = 0.0;  // keep all skip paths alive
    auto model = URSCTModel<double>(cfg, rng);

    Rng drng(73);
    auto img = random_tensor({1, 3, 64, 64}, drng);
    GradTape<double> tape;
    {
        GradTape<double>::Scope sc(tape);
        Rng drop(79);
        auto out = model.forward(img, true, &drop);
        tape.backward(reduce_mean_all(out));
    }
    for (const auto& [name, t] : model.params()) {
        INFO("param ", name);
        REQUIRE(t.has_grad());
        bool any = false;
        for (auto g : t.grad()) any |= g != 0.0;
        CHECK(any);
    }
}

TEST_SUITE_END();
