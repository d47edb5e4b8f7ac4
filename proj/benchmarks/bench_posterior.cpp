#include <benchmark/benchmark.h>

#include "explab/bayes_linear.hpp"

namespace {

using namespace explab;

CovarianceAccumulator filled(Eigen::Index d, std::size_t n) {
  RandomStream rng(7);
  CovarianceAccumulator acc(d, 1e-3, 1.0);
  FeatureVector phi(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) phi[j] = rng.normal();
    acc.accumulate(phi, rng.bernoulli(0.3) ? 1.0 : 0.0);
  }
  return acc;
}

void BM_Accumulate(benchmark::State& state) {
  const auto d = static_cast<Eigen::Index>(state.range(0));
  CovarianceAccumulator acc(d);
  RandomStream rng(1);
  FeatureVector phi(d);
  for (Eigen::Index j = 0; j < d; ++j) phi[j] = rng.normal();
  for (auto _ : state) {
    acc.accumulate(phi, 1.0);
    benchmark::DoNotOptimize(acc.gram().data());
  }
}
BENCHMARK(BM_Accumulate)->Arg(32)->Arg(128);

void BM_Finalize(benchmark::State& state) {
  const auto d = static_cast<Eigen::Index>(state.range(0));
  const auto strategy = static_cast<InverseStrategy>(state.range(1));
  const CovarianceAccumulator acc = filled(d, 4 * static_cast<std::size_t>(d));
  for (auto _ : state) {
    PosteriorState s = finalize(acc, strategy);
    benchmark::DoNotOptimize(s.beta_hat().data());
  }
  state.SetLabel(to_string(strategy));
}
BENCHMARK(BM_Finalize)->ArgsProduct({{32, 128}, {0, 1}});

void BM_PosteriorStats(benchmark::State& state) {
  const auto d = static_cast<Eigen::Index>(state.range(0));
  const auto strategy = static_cast<InverseStrategy>(state.range(1));
  const PosteriorState s = finalize(filled(d, 4 * static_cast<std::size_t>(d)), strategy);
  RandomStream rng(3);
  FeatureVector phi(d);
  for (Eigen::Index j = 0; j < d; ++j) phi[j] = rng.normal();
  for (auto _ : state) benchmark::DoNotOptimize(s.stats(phi));
  state.SetLabel(to_string(strategy));
}
BENCHMARK(BM_PosteriorStats)->ArgsProduct({{32, 128}, {0, 1}});

}  // namespace
