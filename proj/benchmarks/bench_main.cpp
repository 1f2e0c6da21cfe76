#include <benchmark/benchmark.h>

#include "ursct/model.hpp"
#include "ursct/ops.hpp"
#include "ursct/rng.hpp"

using namespace ursct;

namespace {

Tensor<float> rand_tensor(Rng& rng, Shape shape) {
    auto t = Tensor<float>::zeros(std::move(shape));
    for (auto& v : t.payload()->values) v = static_cast<float>(rng.uniform(-1, 1));
    return t;
}

void bm_matmul(benchmark::State& state) {
    const std::int64_t n = state.range(0);
    Rng rng(1);
    auto a = rand_tensor(rng, {n, n});
    auto b = rand_tensor(rng, {n, n});
    for (auto _ : state) {
        auto c = matmul(a, b);
        benchmark::DoNotOptimize(c.payload());
    }
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(bm_matmul)->Arg(64)->Arg(128)->Arg(256);

void bm_conv2d(benchmark::State& state) {
    const std::int64_t c = state.range(0);
    Rng rng(2);
    auto x = rand_tensor(rng, {1, c, 64, 64});
    auto w = rand_tensor(rng, {c, c, 3, 3});
    for (auto _ : state) {
        auto y = conv2d(x, w, std::nullopt, 1, 1, 1);
        benchmark::DoNotOptimize(y.payload());
    }
}
BENCHMARK(bm_conv2d)->Arg(8)->Arg(16)->Arg(32);

void bm_window_attention(benchmark::State& state) {
    const std::int64_t win = state.range(0);
    constexpr std::int64_t heads = 4, cu = 8, windows = 64;
    Rng rng(3);
    const std::int64_t t2 = win * win;
    auto q = rand_tensor(rng, {windows, heads, t2, cu});
    auto k = rand_tensor(rng, {windows, heads, t2, cu});
    auto v = rand_tensor(rng, {windows, heads, t2, cu});
    auto table = rand_tensor(rng, {(2 * win - 1) * (2 * win - 1), heads});
    auto bias = relative_position_bias(table, win);
    for (auto _ : state) {
        auto y = window_attention<float>(q, k, v, bias, std::nullopt,
                                         static_cast<float>(std::sqrt(double(cu * heads))));
        benchmark::DoNotOptimize(y.payload());
    }
}
BENCHMARK(bm_window_attention)->Arg(4)->Arg(8);

void bm_tiny_forward(benchmark::State& state) {
    ModelConfig cfg;
    cfg.image_h = cfg.image_w = 64;
    cfg.patch_size = 2;
    cfg.embed_dim = 8;
    cfg.window = 4;
    cfg.layer_depth = 2;
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    Rng rng(4);
    URSCTModel<float> model(cfg, rng);
    auto x = rand_tensor(rng, {1, 3, 64, 64});
    for (auto _ : state) {
        auto y = model.forward(x);
        benchmark::DoNotOptimize(y.payload());
    }
}
BENCHMARK(bm_tiny_forward);

}  // namespace

BENCHMARK_MAIN();
