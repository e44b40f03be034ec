#include <random>

#include <benchmark/benchmark.h>

#include "foresight/feature_space.hpp"
#include "foresight/forecaster.hpp"
#include "foresight/inference.hpp"
#include "foresight/training.hpp"

using namespace foresight;

namespace {

ForecasterConfig bench_config(std::size_t d_model, std::size_t grid) {
    ForecasterConfig c;
    c.n_layers = 2;
    c.d_model = d_model;
    c.n_heads = 4;
    c.d_in = 16;
    c.seq_frames = 5;
    c.context_frames = 4;
    c.grid_h = grid;
    c.grid_w = grid;
    return c;
}

FeatureSequence noise(const ForecasterConfig& c, std::size_t frames, std::uint64_t seed) {
    FeatureSequence f(frames, c.grid_h, c.grid_w, c.d_in);
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> normal(0.0f, 1.0f);
    for (auto& v : f.data) v = normal(rng);
    return f;
}

void BM_Forward(benchmark::State& state) {
    const auto c = bench_config(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
    const auto w = init_weights<float>(c, 0);
    const auto f = noise(c, c.seq_frames, 1);
    const MaskPlan plan = MaskPlan::full(c.grid(), c.context_frames);
    for (auto _ : state) benchmark::DoNotOptimize(forward(f, plan, w));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.tokens()));
}
BENCHMARK(BM_Forward)->Args({64, 8})->Args({128, 8})->Args({64, 16});

void BM_ForwardBackward(benchmark::State& state) {
    const auto c = bench_config(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
    const auto w = init_weights<float>(c, 0);
    const auto f = noise(c, c.seq_frames, 1);
    const auto target = noise(c, c.seq_frames, 2);
    const MaskPlan plan = MaskPlan::full(c.grid(), c.context_frames);
    for (auto _ : state) benchmark::DoNotOptimize(backward(f, target, plan, w, LossConfig{}));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(f.tokens()));
}
BENCHMARK(BM_ForwardBackward)->Args({64, 8})->Args({128, 8});

void BM_Rollout(benchmark::State& state) {
    const auto c = bench_config(64, 8);
    const auto w = init_weights<float>(c, 0);
    const auto ctx = noise(c, c.context_frames, 3);
    for (auto _ : state) benchmark::DoNotOptimize(rollout(w, ctx, static_cast<std::size_t>(state.range(0))));
}
BENCHMARK(BM_Rollout)->Arg(1)->Arg(3)->Arg(6);

void BM_PcaFit(benchmark::State& state) {
    const auto rows = state.range(0);
    const auto cols = state.range(1);
    std::mt19937_64 rng(4);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd x(rows, cols);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
    for (auto _ : state) benchmark::DoNotOptimize(fit_pca(x, static_cast<std::size_t>(cols / 4)));
}
BENCHMARK(BM_PcaFit)->Args({10000, 64})->Args({10000, 256});

}  // namespace
BENCHMARK_MAIN();
