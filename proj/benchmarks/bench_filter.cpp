#include <benchmark/benchmark.h>

#include <random>

#include "millopt/filter.hpp"

using namespace millopt;

namespace {

DensityField random_field(std::size_t n) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    DensityField x(n);
    for (auto& v : x) v = u(rng);
    return x;
}

}  // namespace

static void BM_FilterApply2D(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const StructuredGrid g{n, n};
    const FilterKernel k(g, 4.0);
    const DensityField x = random_field(g.element_count());
    for (auto _ : state) benchmark::DoNotOptimize(k.apply(x));
    state.SetItemsProcessed(state.iterations() * static_cast<long>(g.element_count()));
}
BENCHMARK(BM_FilterApply2D)->Arg(100)->Arg(200);

static void BM_FilterApply3D(benchmark::State& state) {
    const StructuredGrid g{72, 24, 24};
    const FilterKernel k(g, static_cast<double>(state.range(0)));
    const DensityField x = random_field(g.element_count());
    for (auto _ : state) benchmark::DoNotOptimize(k.apply(x));
    state.SetItemsProcessed(state.iterations() * static_cast<long>(g.element_count()));
}
BENCHMARK(BM_FilterApply3D)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

static void BM_FilterBackprop3D(benchmark::State& state) {
    const StructuredGrid g{72, 24, 24};
    const FilterKernel k(g, 4.0);
    const DensityField seed = random_field(g.element_count());
    for (auto _ : state) benchmark::DoNotOptimize(k.backprop(seed));
}
BENCHMARK(BM_FilterBackprop3D)->Unit(benchmark::kMillisecond);
