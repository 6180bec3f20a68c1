#include <benchmark/benchmark.h>

#include <random>

#include "millopt/machining.hpp"

using namespace millopt;

namespace {

DensityField random_field(std::size_t n) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    DensityField x(n);
    for (auto& v : x) v = u(rng);
    return x;
}

const StructuredGrid kGrid{72, 24, 24};

}  // namespace

static void BM_ProjectAxis(benchmark::State& state) {
    const MillingDirection d(kGrid, {0, 0, -1});
    const DensityField rho_f = random_field(kGrid.element_count());
    for (auto _ : state) benchmark::DoNotOptimize(project_direction(d, rho_f));
    state.SetItemsProcessed(state.iterations() * static_cast<long>(kGrid.element_count()));
}
BENCHMARK(BM_ProjectAxis)->Unit(benchmark::kMillisecond);

static void BM_ProjectOblique(benchmark::State& state) {
    const MillingDirection d(kGrid, normalized({1, -1, 1}));
    const DensityField rho_f = random_field(kGrid.element_count());
    for (auto _ : state) benchmark::DoNotOptimize(project_direction(d, rho_f));
    state.SetItemsProcessed(state.iterations() * static_cast<long>(kGrid.element_count()));
}
BENCHMARK(BM_ProjectOblique)->Unit(benchmark::kMillisecond);

static void BM_BuildObliqueRays(benchmark::State& state) {
    for (auto _ : state) benchmark::DoNotOptimize(MillingDirection(kGrid, normalized({1, -1, 1})));
}
BENCHMARK(BM_BuildObliqueRays)->Unit(benchmark::kMillisecond);

static void BM_BackpropSixAxes(benchmark::State& state) {
    std::vector<MillingDirection> dirs;
    for (const Vec3& d : {Vec3{1, 0, 0}, Vec3{-1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, -1, 0}, Vec3{0, 0, 1},
                          Vec3{0, 0, -1}}) {
        dirs.emplace_back(kGrid, d);
    }
    const DensityField rho_f = random_field(kGrid.element_count());
    std::vector<DirectionProjection> cache;
    for (const auto& d : dirs) cache.push_back(project_direction(d, rho_f));
    const DensityField seed(kGrid.element_count(), 1.0);
    for (auto _ : state) benchmark::DoNotOptimize(projection_backprop(dirs, rho_f, cache, seed));
}
BENCHMARK(BM_BackpropSixAxes)->Unit(benchmark::kMillisecond);
