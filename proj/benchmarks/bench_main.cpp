// Microbenchmarks for the hot paths: k-means profiling, GPTQ quantization,
// binarization and the forward pass.

#include <benchmark/benchmark.h>

#include "luq/container.hpp"
#include "luq/entropy.hpp"
#include "luq/net.hpp"
#include "luq/quant.hpp"
#include "luq/rng.hpp"

namespace {

luq::Mat random_mat(int64_t r, int64_t c, uint64_t seed) {
    luq::Rng rng(seed);
    luq::Mat m(r, c);
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j)
            m(i, j) = static_cast<float>(rng.gaussian());
    return m;
}

luq::HessianAccumulator random_hessian(int64_t width, int64_t samples, uint64_t seed) {
    luq::HessianAccumulator acc(width);
    acc.add(random_mat(samples, width, seed));
    return acc;
}

void BM_KMeansFit(benchmark::State& state) {
    int64_t k = state.range(0);
    luq::Mat tokens = random_mat(2048, 32, 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(luq::kmeans_fit(tokens, k, 7));
    state.SetItemsProcessed(state.iterations() * tokens.rows());
}
BENCHMARK(BM_KMeansFit)->Arg(24)->Arg(48)->Arg(100)->Unit(benchmark::kMillisecond);

void BM_GptqQuantize(benchmark::State& state) {
    int64_t n = state.range(0);
    luq::Mat w = random_mat(n, n, 2);
    luq::HessianAccumulator h = random_hessian(n, 256, 3);
    luq::QuantConfig cfg;
    cfg.group_size = static_cast<int>(n);
    cfg.block_size = 32;
    for (auto _ : state)
        benchmark::DoNotOptimize(luq::gptq_quantize(w, h, cfg));
    state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_GptqQuantize)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_BillmBinarize(benchmark::State& state) {
    int64_t n = state.range(0);
    luq::Mat w = random_mat(n, n, 4);
    luq::HessianAccumulator h = random_hessian(n, 256, 5);
    luq::QuantConfig cfg;
    for (auto _ : state)
        benchmark::DoNotOptimize(luq::billm_binarize(w, h, cfg));
    state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_BillmBinarize)->Arg(64)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_Forward(benchmark::State& state) {
    int64_t L = state.range(0);
    std::vector<int64_t> ranks(static_cast<size_t>(L), 32);
    luq::SynthParams p;
    p.vocab_size = 32;
    luq::LayerStack stack =
        luq::LayerStack::from_container(luq::synth_stack(L, 32, ranks, 6, p));
    luq::Mat input = random_mat(64, 32, 7);
    for (auto _ : state)
        benchmark::DoNotOptimize(luq::forward(stack, input));
    state.SetItemsProcessed(state.iterations() * input.rows() * L);
}
BENCHMARK(BM_Forward)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
