#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "dstiefel/manifold.hpp"
#include "dstiefel/metrics.hpp"
#include "dstiefel/network.hpp"
#include "dstiefel/problems.hpp"
#include "dstiefel/solver.hpp"

using namespace dstiefel;

static void BM_RetractPolar(benchmark::State& state) {
  const auto d = state.range(0);
  const auto r = state.range(1);
  std::mt19937_64 rng(1);
  const StiefelPoint x = random_stiefel(d, r, rng);
  const TangentVector u = random_tangent(x, 0.1, rng);
  for (auto _ : state) benchmark::DoNotOptimize(retract_polar(x, u));
}
BENCHMARK(BM_RetractPolar)->Args({10, 2})->Args({50, 5})->Args({200, 10});

static void BM_Mix(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const int k = static_cast<int>(state.range(1));
  const MixingMatrix w = build_metropolis(Topology::ring(n));
  std::mt19937_64 rng(2);
  std::vector<Matrix> values;
  for (int i = 0; i < n; ++i) values.push_back(gaussian_matrix(20, 3, rng));
  for (auto _ : state) benchmark::DoNotOptimize(mix(w, values, k));
}
BENCHMARK(BM_Mix)->Args({8, 1})->Args({8, 8})->Args({32, 8});

static void BM_DrgdaStep(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  SyntheticBilinearParams p;
  p.nodes = n;
  p.d = state.range(1);
  p.r = 3;
  p.seed = 3;
  const auto prob = synthetic_bilinear(p);
  const MixingMatrix w = build_metropolis(Topology::ring(n));
  SolverConfig cfg;
  cfg.alpha = 1.0;
  cfg.beta = 0.01;
  cfg.eta = 0.2;
  cfg.k = required_k(w.lambda2(), n);
  cfg.seed = 4;
  std::mt19937_64 rng(0);
  auto states = initialize_states(*prob, cfg, Mode::kDrgda, rng);
  for (auto _ : state) {
    states = drgda_step(states, *prob, w, cfg);
    benchmark::DoNotOptimize(states);
  }
}
BENCHMARK(BM_DrgdaStep)->Args({8, 20})->Args({32, 50});

static void BM_Metric(benchmark::State& state) {
  SyntheticBilinearParams p;
  p.nodes = 8;
  p.d = 20;
  p.r = 3;
  p.seed = 5;
  const auto prob = synthetic_bilinear(p);
  std::mt19937_64 rng(5);
  std::vector<StiefelPoint> xs;
  std::vector<Matrix> ys;
  for (int i = 0; i < 8; ++i) {
    xs.push_back(random_stiefel(20, 3, rng));
    ys.push_back(prob->random_dual(rng));
  }
  for (auto _ : state) benchmark::DoNotOptimize(evaluate_metric(*prob, xs, ys, 1.0, true));
}
BENCHMARK(BM_Metric);
BENCHMARK_MAIN();
