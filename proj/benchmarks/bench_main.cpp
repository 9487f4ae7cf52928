#include <benchmark/benchmark.h>

#include <memory>
#include <vector>

#include "pairsurf/fit.hpp"
#include "pairsurf/inference.hpp"
#include "pairsurf/likelihood.hpp"
#include "pairsurf/simulation.hpp"
#include "pairsurf/tps_basis.hpp"

using namespace pairsurf;

namespace {

SimConfig config(int m, int n) {
  SimConfig cfg;
  cfg.m = m;
  cfg.n = n;
  cfg.basis_dim = 20;
  return cfg;
}

std::vector<Point2> covariates(const LongitudinalDataset& ds) {
  std::vector<Point2> pts;
  for (const auto& o : ds.observations()) pts.push_back({o.w, o.h});
  return pts;
}

}  // namespace

static void BM_BuildBasis(benchmark::State& state) {
  const auto ds = simulate_dataset(config(static_cast<int>(state.range(0)), 20), 0);
  const auto pts = covariates(ds);
  for (auto _ : state) benchmark::DoNotOptimize(build_basis(pts, static_cast<int>(state.range(1))));
}
BENCHMARK(BM_BuildBasis)->Args({50, 20})->Args({200, 30})->Unit(benchmark::kMillisecond);

static void BM_Assemble(benchmark::State& state) {
  const auto cfg = config(static_cast<int>(state.range(0)), 20);
  const auto ds = simulate_dataset(cfg, 0);
  const auto spec = simulation_model_spec(cfg);
  for (auto _ : state) benchmark::DoNotOptimize(assemble(ds, spec));
}
BENCHMARK(BM_Assemble)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

static void BM_CriterionAndGradient(benchmark::State& state) {
  const auto cfg = config(static_cast<int>(state.range(0)), 20);
  const auto design = assemble(simulate_dataset(cfg, 0), simulation_model_spec(cfg));
  LikelihoodEngine engine(design, Criterion::reml);
  const Eigen::VectorXd x = engine.layout().to_vector(starting_values(design));
  const bool gradient = state.range(1) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(engine.evaluate_vector(x, gradient));
}
BENCHMARK(BM_CriterionAndGradient)
    ->Args({50, 0})
    ->Args({50, 1})
    ->Args({200, 0})
    ->Args({200, 1})
    ->Unit(benchmark::kMicrosecond);

static void BM_Fit(benchmark::State& state) {
  const auto cfg = config(static_cast<int>(state.range(0)), 20);
  const auto ds = simulate_dataset(cfg, 0);
  const auto spec = simulation_model_spec(cfg);
  for (auto _ : state) benchmark::DoNotOptimize(fit(ds, spec));
}
BENCHMARK(BM_Fit)->Arg(50)->Arg(200)->Unit(benchmark::kMillisecond);

static void BM_AdjustedLrt(benchmark::State& state) {
  const auto cfg = config(50, 20);
  const auto ds = simulate_dataset(cfg, 0);
  const auto spec = simulation_model_spec(cfg);
  for (auto _ : state) benchmark::DoNotOptimize(adjusted_lrt(ds, spec, 1));
}
BENCHMARK(BM_AdjustedLrt)->Unit(benchmark::kMillisecond);

static void BM_Bootstrap(benchmark::State& state) {
  const auto cfg = config(30, 10);
  const auto ds = simulate_dataset(cfg, 0);
  const auto spec = simulation_model_spec(cfg);
  for (auto _ : state) benchmark::DoNotOptimize(bootstrap_test(ds, spec, static_cast<int>(state.range(0)), 1));
}
BENCHMARK(BM_Bootstrap)->Arg(19)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
