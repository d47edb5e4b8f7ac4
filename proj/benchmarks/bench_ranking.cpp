#include <benchmark/benchmark.h>

#include <numeric>

#include "explab/ranker.hpp"
#include "explab/sim.hpp"

namespace {

using namespace explab;

void BM_RankDistributions(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  RandomStream rng(5);
  std::vector<ScoreDistribution> dists(n);
  for (auto& d : dists) d = {rng.normal(), rng.uniform(0.0, 0.5)};
  std::vector<ContentId> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  for (auto _ : state) benchmark::DoNotOptimize(rank_distributions(dists, ids, 4, rng));
}
BENCHMARK(BM_RankDistributions)->Arg(30)->Arg(300);

void BM_ScoreNlb(benchmark::State& state) {
  const auto n = static_cast<Eigen::Index>(state.range(0));
  NetworkConfig cfg;
  cfg.user_dim = 5;
  cfg.content_dim = 6;
  auto model = std::make_shared<RepresentationModel>(RepresentationModel::initialize(cfg));
  CovarianceAccumulator acc(model->embedding_dim());
  PolicySpec policy;
  policy.kind = PolicyKind::NeuralLinearTS;
  policy.model = model;
  policy.bandit = std::make_shared<PosteriorState>(finalize(acc, InverseStrategy::Cholesky));
  const Eigen::MatrixXd inputs = Eigen::MatrixXd::Random(static_cast<Eigen::Index>(cfg.input_dim()), n);
  for (auto _ : state) benchmark::DoNotOptimize(score_inputs(policy, inputs));
}
BENCHMARK(BM_ScoreNlb)->Arg(30)->Arg(300);

void BM_SimulatedDay(benchmark::State& state) {
  WorldConfig cfg;
  cfg.n_users = static_cast<std::size_t>(state.range(0));
  cfg.initial_corpus = 500;
  cfg.daily_new_content = 20;
  NetworkConfig net;
  net.user_dim = cfg.user_feature_dim();
  net.content_dim = cfg.content_feature_dim();
  ArmPolicy policy;
  policy.ranking.model = std::make_shared<RepresentationModel>(RepresentationModel::initialize(net));
  policy.slots.exploration_slots = 1;
  for (auto _ : state) {
    state.PauseTiming();
    WorldState world = build_world(cfg);
    apply_diversion(world, DiversionPlan("bench", {{0, 1.0, 0.0}}, DiversionMode::UserOnly));
    state.ResumeTiming();
    benchmark::DoNotOptimize(run_day(world, {{0, policy}}));
  }
}
BENCHMARK(BM_SimulatedDay)->Arg(1000)->Unit(benchmark::kMillisecond);

}  // namespace
