#include <benchmark/benchmark.h>

#include <cmath>

#include "cpa/learners/calibration.hpp"
#include "cpa/metrics.hpp"
#include "cpa/quantile.hpp"
#include "cpa/rng.hpp"

namespace {

std::vector<double> normals(std::size_t n, std::uint64_t seed) {
  cpa::RngStream r(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = r.normal();
  return v;
}

void BM_ConformalQuantile(benchmark::State& state) {
  const auto s = normals(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(cpa::conformal_quantile(s, 0.1));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_ConformalQuantile)->RangeMultiplier(4)->Range(256, 65536)->Complexity();

void BM_WeightedQuantile(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto v = normals(n, 2);
  auto w = normals(n, 3);
  for (auto& x : w) x = std::abs(x);
  for (auto _ : state) benchmark::DoNotOptimize(cpa::weighted_quantile(v, w, 0.9));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_WeightedQuantile)->RangeMultiplier(4)->Range(256, 65536)->Complexity();

void BM_Pava(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  cpa::RngStream r(4);
  std::vector<double> v(n), w;
  for (std::size_t i = 0; i < n; ++i) v[i] = r.bernoulli(static_cast<double>(i) / static_cast<double>(n)) ? 1.0 : 0.0;
  for (auto _ : state) benchmark::DoNotOptimize(cpa::pava(v, w));
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_Pava)->RangeMultiplier(4)->Range(256, 65536)->Complexity(benchmark::oN);

void BM_IsotonicFit(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  cpa::RngStream r(5);
  std::vector<double> s(n), l(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = r.uniform();
    l[i] = r.bernoulli(s[i]) ? 1.0 : 0.0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(cpa::fit_isotonic(s, l));
}
BENCHMARK(BM_IsotonicFit)->Arg(2000)->Arg(20000);

void BM_Wsc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  cpa::RngStream r(6);
  cpa::Matrix X(n, 10);
  std::vector<double> cov(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < 10; ++j) X(i, j) = r.normal();
    cov[i] = r.bernoulli(X(i, 0) > 0 ? 0.8 : 0.95) ? 1.0 : 0.0;
  }
  for (auto _ : state) benchmark::DoNotOptimize(cpa::wsc(X, cov, 0.1, static_cast<int>(state.range(1)), cpa::RngStream(7)));
}
BENCHMARK(BM_Wsc)->Args({2000, 100})->Args({10000, 100})->Unit(benchmark::kMillisecond);

void BM_CviReport(benchmark::State& state) {
  auto e = normals(static_cast<std::size_t>(state.range(0)), 8);
  for (auto& x : e) x = 1.0 / (1.0 + std::exp(-x));
  for (auto _ : state) {
    benchmark::DoNotOptimize(cpa::cvi_report(e, 0.1));
    benchmark::DoNotOptimize(cpa::cvp_curve(e, 0.1));
  }
}
BENCHMARK(BM_CviReport)->Arg(2000)->Arg(100000);

}  // namespace
