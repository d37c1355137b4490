// SPDX-License-Identifier: Apache-2.0
//
// Optimized kernels against their serial reference twins, plus one toy-config
// training step end to end. Shapes follow the toy and published models.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dprcnet/kernels.hpp"
#include "dprcnet/training.hpp"

using namespace dprc;
using namespace dprc::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

template <bool Reference>
void BM_gemm(benchmark::State& state) {
    const auto m = static_cast<std::size_t>(state.range(0)), n = static_cast<std::size_t>(state.range(1)),
               k = static_cast<std::size_t>(state.range(2));
    auto a = random_vec(m * k, 1), b = random_vec(k * n, 2), c = random_vec(m * n, 3);
    for (auto _ : state) {
        if constexpr (Reference)
            reference::gemm(Trans::no, Trans::no, m, n, k, 1.0, a.data(), k, b.data(), n, 0.0, c.data(), n);
        else
            gemm(Trans::no, Trans::no, m, n, k, 1.0, a.data(), k, b.data(), n, 0.0, c.data(), n);
        benchmark::DoNotOptimize(c.data());
    }
    state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(m * n * k), benchmark::Counter::kIsIterationInvariantRate);
}

// Expand layer of a published-model stage-4 sub-block over one 4 s utterance, the
// toy expand layer, and the bottleneck projection.
#define GEMM_SHAPES ->Args({512, 2016, 128})->Args({128, 4896, 32})->Args({64, 3999, 256})->Unit(benchmark::kMillisecond)
BENCHMARK(BM_gemm<false>) GEMM_SHAPES;
BENCHMARK(BM_gemm<true>) GEMM_SHAPES;

template <bool Reference>
void BM_layer_norm(benchmark::State& state) {
    const std::size_t n = 64, inner = 4096;
    auto x = random_vec(n * inner, 4), sc = random_vec(n, 5), sh = random_vec(n, 6);
    std::vector<double> y(x.size()), mu(inner), rs(inner);
    for (auto _ : state) {
        if constexpr (Reference)
            reference::layer_norm_forward(1, n, inner, x.data(), sc.data(), sh.data(), 1e-5, y.data(), mu.data(), rs.data());
        else
            layer_norm_forward(1, n, inner, x.data(), sc.data(), sh.data(), 1e-5, y.data(), mu.data(), rs.data());
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(BM_layer_norm<false>)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_layer_norm<true>)->Unit(benchmark::kMicrosecond);

template <bool Reference>
void BM_gelu(benchmark::State& state) {
    auto x = random_vec(1 << 18, 7);
    std::vector<double> y(x.size());
    for (auto _ : state) {
        if constexpr (Reference)
            reference::gelu_forward(x.size(), x.data(), y.data());
        else
            gelu_forward(x.size(), x.data(), y.data());
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(BM_gelu<false>)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_gelu<true>)->Unit(benchmark::kMicrosecond);

template <bool Reference>
void BM_lstm(benchmark::State& state) {
    // Toy stage-4 intra-chunk pass: D=32, H=16, I=16 steps, J=63 sequences.
    const LstmShape s{32, 16, 16, 63, false};
    const std::size_t G = 4 * s.hidden, TN = s.steps * s.batch;
    auto x = random_vec(s.input * TN, 8), wi = random_vec(G * s.input, 9), wh = random_vec(G * s.hidden, 10),
         bias = random_vec(G, 11);
    std::vector<double> h(s.hidden * TN), c(s.hidden * TN), gates(G * TN);
    for (auto _ : state) {
        if constexpr (Reference)
            reference::lstm_forward(s, x.data(), wi.data(), wh.data(), bias.data(), h.data());
        else
            lstm_forward(s, x.data(), wi.data(), wh.data(), bias.data(), h.data(), c.data(), gates.data());
        benchmark::DoNotOptimize(h.data());
    }
}
BENCHMARK(BM_lstm<false>)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_lstm<true>)->Unit(benchmark::kMicrosecond);

void BM_toy_train_step(benchmark::State& state) {
    ModelConfig cfg;
    cfg.features = 64;
    cfg.bottleneck = 16;
    cfg.chunk = 16;
    cfg.hop = 8;
    cfg.stage_dims = {4, 8, 16, 32};
    cfg.stage_blocks = {1, 1, 2, 1};
    cfg.hidden = 16;
    auto model = DPRCNetModel::init(cfg, 1);
    const auto data = synth_dataset(1, 1.0, 2);
    const MixtureSample* batch[] = {&data[0]};
    TrainState st;
    for (auto _ : state) benchmark::DoNotOptimize(train_step(model, batch, st, 1e-4, 5.0));
}
BENCHMARK(BM_toy_train_step)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
