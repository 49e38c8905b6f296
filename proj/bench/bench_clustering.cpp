#include <benchmark/benchmark.h>

#include <random>

#include "keydyn/clustering.hpp"

using namespace keydyn;

namespace {

// Profile-sized inputs: a few dozen histories in the ten core dimensions.
PointSet unit_points(std::size_t n, std::size_t d, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    PointSet p(d);
    std::vector<double> row(d);
    for (std::size_t i = 0; i < n; ++i) {
        for (auto& x : row) x = u(rng);
        p.push_back(row);
    }
    return p;
}

void BM_BestOf(benchmark::State& state, Execution exec) {
    const PointSet p = unit_points(static_cast<std::size_t>(state.range(0)), 10, 1);
    for (auto _ : state)
        benchmark::DoNotOptimize(kmeans_best_of(p, 4, 7, kDefaultRestarts, kDefaultMaxIter, exec).wcss);
    state.SetItemsProcessed(state.iterations() * kDefaultRestarts);
}

void BM_Elbow(benchmark::State& state, Execution exec) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const PointSet p = unit_points(n, 10, 2);
    ElbowOptions opts;
    opts.exec = exec;
    for (auto _ : state) benchmark::DoNotOptimize(choose_k_elbow(p, 1, std::min<std::size_t>(10, n / 2), 7, opts));
}

}  // namespace

BENCHMARK_CAPTURE(BM_BestOf, serial, Execution::Serial)->Arg(20)->Arg(60)->Arg(200);
BENCHMARK_CAPTURE(BM_BestOf, parallel, Execution::Parallel)->Arg(20)->Arg(60)->Arg(200);
BENCHMARK_CAPTURE(BM_Elbow, serial, Execution::Serial)->Arg(21)->Arg(60);
BENCHMARK_CAPTURE(BM_Elbow, parallel, Execution::Parallel)->Arg(21)->Arg(60);

BENCHMARK_MAIN();
