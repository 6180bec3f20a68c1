#include <benchmark/benchmark.h>

#include "millopt/fea.hpp"

using namespace millopt;

static void BM_Solve2D(benchmark::State& state) {
    const StructuredGrid g{100, 100};
    const auto kind = static_cast<SolverKind>(state.range(0));
    FeaSolver solver(make_problem(LoadCase::cantilever, g), {kind});
    const DensityField rho(g.element_count(), 0.5);
    for (auto _ : state) benchmark::DoNotOptimize(solver.solve(rho));
    state.SetLabel(to_string(kind));
}
BENCHMARK(BM_Solve2D)
    ->Arg(static_cast<int>(SolverKind::direct))
    ->Arg(static_cast<int>(SolverKind::pcg))
    ->Unit(benchmark::kMillisecond);

// Cold solves: the solver is rebuilt so no warm start is available.
static void BM_Solve3D(benchmark::State& state) {
    const int n = static_cast<int>(state.range(1));
    const StructuredGrid g{3 * n, n, n};
    const auto kind = static_cast<SolverKind>(state.range(0));
    const FeaProblem problem = make_problem(LoadCase::cantilever, g);
    const DensityField rho(g.element_count(), 0.3);
    for (auto _ : state) {
        FeaSolver solver(problem, {kind});
        benchmark::DoNotOptimize(solver.solve(rho));
    }
    state.SetLabel(to_string(kind));
}
BENCHMARK(BM_Solve3D)
    ->Args({static_cast<int>(SolverKind::mgpcg), 16})
    ->Args({static_cast<int>(SolverKind::mgpcg), 24})
    ->Args({static_cast<int>(SolverKind::direct), 16})
    ->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
