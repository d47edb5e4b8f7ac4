#include "explab/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace explab {
namespace {

constexpr std::uint64_t kShuffleTag = 0x73687566ULL;
constexpr std::uint64_t kEvalPairTag = 0x6576616cULL;
constexpr std::uint64_t kPhaseTwoTag = 0x70686132ULL;
constexpr std::uint64_t kBootstrapTag = 0x626f6f74ULL;

Ensemble make_ensemble(const ArmSetup& s) {
  return s.shared_bottom ? Ensemble::shared_bottom(s.network, s.ensemble_size)
                         : Ensemble::independent(s.network, s.ensemble_size);
}

// Columns of log in a seeded random order.
void shuffled(const TrainingLog& log, std::uint64_t seed, Eigen::MatrixXd& x, Eigen::VectorXd& y) {
  const std::size_t n = log.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  RandomStream rng(seed);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const auto src = log.matrix();
  x.resize(log.input_dim, static_cast<Eigen::Index>(n));
  y.resize(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    x.col(static_cast<Eigen::Index>(i)) = src.col(static_cast<Eigen::Index>(order[i]));
    y[static_cast<Eigen::Index>(i)] = log.labels[order[i]];
  }
}

std::string level_label(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "x=%g", x);
  return buf;
}

}  // namespace

void TrainingLog::append(const InteractionRecord& rec) {
  const auto dim = static_cast<Eigen::Index>(rec.features.user.size() + rec.features.content.size());
  if (input_dim == 0) input_dim = dim;
  if (dim != input_dim) throw std::invalid_argument("training log schema changed");
  inputs.insert(inputs.end(), rec.features.user.begin(), rec.features.user.end());
  inputs.insert(inputs.end(), rec.features.content.begin(), rec.features.content.end());
  labels.push_back(static_cast<double>(rec.reward));
}

Eigen::Map<const Eigen::MatrixXd> TrainingLog::matrix() const {
  return {inputs.data(), input_dim, static_cast<Eigen::Index>(labels.size())};
}

ArmRuntime::ArmRuntime(ArmSetup setup, const WorldConfig& world)
    : setup_(std::move(setup)), acc_(1) {
  setup_.network.user_dim = world.user_feature_dim();
  setup_.network.content_dim = world.content_feature_dim();
  setup_.train.validate();
  model_ = std::make_shared<RepresentationModel>(RepresentationModel::initialize(setup_.network));
  if (setup_.uses_ensemble()) {
    if (setup_.ensemble_size == 0) throw std::invalid_argument("ensemble size must be positive");
    ensemble_ = std::make_shared<Ensemble>(make_ensemble(setup_));
  }
  acc_ = CovarianceAccumulator(model_->embedding_dim(), setup_.epsilon, setup_.sigma_sq);
  posterior_ = std::make_shared<PosteriorState>(finalize(acc_, setup_.train.strategy));
}

PolicySpec ArmRuntime::policy() const {
  PolicySpec p;
  p.kind = setup_.kind;
  p.model = model_;
  p.mean_source = setup_.mean_source;
  if (setup_.kind == PolicyKind::NeuralLinearTS) p.bandit = posterior_;
  if (setup_.uses_ensemble()) p.ensemble = ensemble_;
  return p;
}

ArmPolicy ArmRuntime::arm_policy() const {
  ArmPolicy p;
  p.slots = setup_.slots;
  p.ranking = policy();
  p.ablation = setup_.ablation;
  return p;
}

void ArmRuntime::train(const TrainingLog& log) {
  const std::uint64_t run = runs_++;
  if (log.size() == 0) return;
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  const std::uint64_t order = RandomStream(setup_.network.seed).derive(kShuffleTag, run).seed();
  shuffled(log, order, x, y);

  if (setup_.uses_ensemble()) {
    auto next = std::make_shared<Ensemble>(*ensemble_);
    train_ensemble(*next, x, y, setup_.train, RandomStream(order).derive(kBootstrapTag).seed());
    ensemble_ = std::move(next);
    return;
  }
  if (setup_.kind == PolicyKind::NeuralLinearTS) {
    TrainingResult r = training_run(*model_, x, y, acc_, setup_.train);
    model_ = std::make_shared<RepresentationModel>(std::move(r.model));
    posterior_ = std::make_shared<PosteriorState>(std::move(r.posterior));
    return;
  }
  // Greedy on a single network keeps no Bayesian head.
  auto next = std::make_shared<RepresentationModel>(*model_);
  const std::size_t n = log.size();
  const std::size_t bs = setup_.train.batch_size;
  std::size_t batches = (n + bs - 1) / bs;
  if (setup_.train.batches_per_run > 0) batches = std::min(batches, setup_.train.batches_per_run);
  for (std::size_t h = 0; h < batches; ++h) {
    const auto b = static_cast<Eigen::Index>(h * bs);
    const auto l = static_cast<Eigen::Index>(std::min(bs, n - h * bs));
    next->sgd_step(x.middleCols(b, l), y.segment(b, l));
  }
  model_ = std::move(next);
}

namespace {

using DayHook = std::function<void(const DayLog&)>;

struct LoopOutput {
  std::map<ArmId, std::vector<double>> regret;  // cumulative by day
  std::vector<RequestRecord> last_requests;
};

LoopOutput run_loop(WorldState& world, std::vector<ArmRuntime>& runtimes, int days, bool train,
                    const DayHook& hook) {
  LoopOutput out;
  std::map<ArmId, double> running;
  for (const ArmRuntime& rt : runtimes) running[rt.setup().id] = 0.0;
  for (int d = 0; d < days; ++d) {
    ArmPolicies policies;
    for (const ArmRuntime& rt : runtimes) policies[rt.setup().id] = rt.arm_policy();
    DayLog day = run_day(world, policies);
    for (const auto& [arm, r] : regret_by_arm(day.requests, world)) running[arm] += r;
    for (const auto& [arm, total] : running) out.regret[arm].push_back(total);
    if (hook) hook(day);
    if (train) {
      std::map<ArmId, TrainingLog> logs;
      for (const InteractionRecord& rec : day.records) logs[rec.arm].append(rec);
      for (ArmRuntime& rt : runtimes) {
        if (!rt.setup().train_daily) continue;
        rt.train(logs[rt.setup().id]);
      }
    }
    if (d == days - 1) out.last_requests = std::move(day.requests);
  }
  return out;
}

MetricsReport finish_report(const WorldState& world, const std::vector<ArmRuntime>& runtimes,
                            int days, const ReportConfig& cfg, const LoopOutput& loop) {
  std::vector<ArmId> ids;
  std::vector<std::string> labels;
  for (const ArmRuntime& rt : runtimes) {
    ids.push_back(rt.setup().id);
    labels.push_back(rt.setup().label);
  }
  MetricsReport report = build_report(world.log, world.items, days, ids, cfg);
  report.arm_labels = labels;
  for (const auto& [arm, series] : loop.regret) report.set_series(arm, "cumulative_regret", series);
  return report;
}

WorldState diverted_world(const WorldConfig& cfg, const std::string& salt, DiversionMode mode,
                          const std::vector<ArmSetup>& arms) {
  std::vector<ArmShare> shares;
  for (const ArmSetup& a : arms) {
    shares.push_back({a.id, a.fraction,
                      mode == DiversionMode::UserCorpusCoDiverted ? a.fraction : 0.0});
  }
  const DiversionPlan plan(salt, shares, mode);
  WorldState world = build_world(cfg);
  apply_diversion(world, plan);
  return world;
}

}  // namespace

RunResult run_experiment(const WorldConfig& world_cfg, const std::string& salt,
                         DiversionMode mode, const std::vector<ArmSetup>& arms, int days,
                         const ReportConfig& report_cfg) {
  if (arms.empty()) throw std::invalid_argument("experiment needs at least one arm");
  if (days < 0) throw std::invalid_argument("negative horizon");
  RunResult res;
  res.world = diverted_world(world_cfg, salt, mode, arms);
  std::vector<ArmRuntime> runtimes;
  for (const ArmSetup& a : arms) runtimes.emplace_back(a, world_cfg);
  LoopOutput loop = run_loop(res.world, runtimes, days, true, nullptr);
  res.report = finish_report(res.world, runtimes, days, report_cfg, loop);
  res.last_requests = std::move(loop.last_requests);
  for (const ArmRuntime& rt : runtimes) res.final_policies[rt.setup().id] = rt.policy();
  return res;
}

RunResult run_codiverted(const WorldConfig& world_cfg, const std::string& salt,
                         const ArmSetup& control, const ArmSetup& treatment, int horizon,
                         const ReportConfig& report_cfg) {
  if (control.id == treatment.id) throw std::invalid_argument("arms need distinct ids");
  return run_experiment(world_cfg, salt, DiversionMode::UserCorpusCoDiverted, {control, treatment},
                        horizon, report_cfg);
}

double aa_statistic(const MetricsReport& report, ArmId control, ArmId treatment,
                    const std::string& metric) {
  const auto end_value = [&](ArmId arm) {
    if (report.has_value(arm, metric)) return report.value(arm, metric);
    const auto& s = report.series(arm, metric);
    return s.empty() ? 0.0 : s.back();
  };
  return std::log((end_value(treatment) + 1.0) / (end_value(control) + 1.0));
}

std::vector<AABand> calibrate_aa_bands(const std::vector<MetricsReport>& reports, ArmId control,
                                       ArmId treatment, const std::vector<std::string>& metrics,
                                       double z) {
  if (reports.size() < 2) throw std::invalid_argument("A/A calibration needs at least two runs");
  std::vector<AABand> bands;
  for (const std::string& m : metrics) {
    std::vector<double> v;
    for (const MetricsReport& r : reports) v.push_back(aa_statistic(r, control, treatment, m));
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / static_cast<double>(v.size() - 1));
    bands.push_back({m, mean - z * sd, mean + z * sd});
  }
  return bands;
}

AblationResult run_ablation(const WorldConfig& world_cfg, const ArmSetup& arm,
                            const AblationConfig& cfg, int horizon,
                            const ReportConfig& report_cfg) {
  if (cfg.tail_days <= 0) throw std::invalid_argument("ablation tail must be positive");
  if (cfg.levels.empty()) throw std::invalid_argument("ablation needs at least one level");
  std::vector<ArmSetup> arms;
  for (std::size_t i = 0; i < cfg.levels.size(); ++i) {
    ArmSetup a = arm;
    a.id = static_cast<ArmId>(i);
    a.label = level_label(cfg.levels[i]);
    a.fraction = 1.0 / static_cast<double>(cfg.levels.size());
    a.ablation = AblationSpec{cfg.levels[i], cfg.salt};
    a.ablation->validate();
    arms.push_back(std::move(a));
  }
  AblationResult out;
  out.run = run_experiment(world_cfg, "ablation-users", DiversionMode::UserOnly, arms, horizon,
                           report_cfg);
  std::map<ArmId, std::size_t> users;
  for (const UserProfile& u : out.run.world.users) ++users[u.arm];
  for (const ArmSetup& a : arms) {
    AblationPoint p;
    p.fraction = a.ablation->fraction;
    p.arm = a.id;
    p.users = users[a.id];
    const auto& sat = out.run.report.series(a.id, "satisfied_users");
    const std::size_t tail = std::min<std::size_t>(static_cast<std::size_t>(cfg.tail_days), sat.size());
    for (std::size_t i = sat.size() - tail; i < sat.size(); ++i) p.satisfied_users += sat[i];
    if (tail > 0) p.satisfied_users /= static_cast<double>(tail);
    if (p.users > 0) p.satisfied_share = p.satisfied_users / static_cast<double>(p.users);
    out.run.report.set_value(a.id, "ablation_fraction", p.fraction);
    out.run.report.set_value(a.id, "satisfied_users_tail", p.satisfied_users);
    out.run.report.set_value(a.id, "satisfied_share_tail", p.satisfied_share);
    out.points.push_back(p);
  }
  return out;
}

void DataDivertedPlan::validate() const {
  if (control.kind != PolicyKind::Greedy || !control.greedy_on_ensemble) {
    throw std::invalid_argument("data-diverted control must be greedy over an ensemble");
  }
  if (treatment.kind != PolicyKind::EnsembleTS) {
    throw std::invalid_argument("data-diverted treatment must be ensemble Thompson sampling");
  }
  if (control.id == treatment.id) throw std::invalid_argument("arms need distinct ids");
  if (control.ensemble_size < 2 || control.ensemble_size != treatment.ensemble_size) {
    throw std::invalid_argument("ensembles need equal sizes of at least two");
  }
  if (evaluation_kind != PolicyKind::Greedy) {
    throw std::invalid_argument("evaluation must serve both models greedily");
  }
  if (collection_days <= 0 || train_steps == 0 || checkpoints == 0 || batch_size == 0 ||
      eval_pairs == 0 || eval_days < 0) {
    throw std::invalid_argument("data-diverted plan sizes must be positive");
  }
}

namespace {

// Fresh ensemble trained for a fixed number of steps on one arm's log, with
// the uncertainty on the evaluation inputs recorded at each checkpoint.
std::shared_ptr<const Ensemble> train_fresh(const ArmSetup& init, const TrainingLog& log,
                                            const DataDivertedPlan& plan, std::uint64_t seed,
                                            const Eigen::MatrixXd& eval_inputs,
                                            const std::vector<std::size_t>& checkpoints,
                                            std::vector<double>& uncertainty) {
  auto ens = std::make_shared<Ensemble>(make_ensemble(init));
  const std::size_t n = log.size();
  if (n == 0) throw std::runtime_error("data-diverted arm collected no impressions");
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
  shuffled(log, seed, x, y);
  const auto b = static_cast<Eigen::Index>(std::min(plan.batch_size, n));
  Eigen::MatrixXd bx(x.rows(), b);
  Eigen::VectorXd by(b);
  std::size_t cursor = 0;
  std::size_t next_checkpoint = 0;
  for (std::size_t step = 1; step <= plan.train_steps; ++step) {
    for (Eigen::Index i = 0; i < b; ++i) {
      bx.col(i) = x.col(static_cast<Eigen::Index>(cursor));
      by[i] = y[static_cast<Eigen::Index>(cursor)];
      cursor = (cursor + 1) % n;
    }
    ens->sgd_step(bx, by, init.train.bootstrap_keep,
                  RandomStream(seed).derive(kBootstrapTag, step).seed());
    if (next_checkpoint < checkpoints.size() && step == checkpoints[next_checkpoint]) {
      uncertainty.push_back(ensemble_uncertainty(*ens, eval_inputs).value);
      ++next_checkpoint;
    }
  }
  return ens;
}

MetricsReport evaluate_greedy(const WorldState& start, const ArmSetup& arm,
                              std::shared_ptr<const Ensemble> model, int days,
                              const std::string& salt, const ReportConfig& cfg) {
  WorldState world = start;
  const DiversionPlan plan(salt + "-eval", {{0, 1.0, 0.0}}, DiversionMode::UserOnly);
  apply_diversion(world, plan);
  world.log.clear();
  const int first_day = world.day;

  ArmPolicy policy;
  policy.slots = arm.slots;
  policy.ranking.kind = PolicyKind::Greedy;
  policy.ranking.ensemble = std::move(model);
  for (int d = 0; d < days; ++d) run_day(world, {{0, policy}});

  std::vector<LogEntry> log = world.log;
  for (LogEntry& e : log) {
    e.day -= first_day;
    e.arm = arm.id;
  }
  std::vector<ContentItem> items = world.items;
  for (ContentItem& c : items) c.arm = kNoArm;
  MetricsReport r = build_report(log, items, days, {arm.id}, cfg);
  r.arm_labels = {arm.label};
  return r;
}

}  // namespace

DataDivertedResult run_data_diverted(const DataDivertedPlan& plan, const WorldConfig& world_cfg,
                                     const std::string& salt, const ReportConfig& report_cfg) {
  plan.validate();
  DataDivertedResult res;

  // Phase 1: user-diverted collection, logs kept separately per arm.
  std::vector<ArmSetup> arms{plan.control, plan.treatment};
  RunResult& col = res.collection;
  col.world = diverted_world(world_cfg, salt, DiversionMode::UserOnly, arms);
  std::vector<ArmRuntime> runtimes;
  for (const ArmSetup& a : arms) runtimes.emplace_back(a, world_cfg);
  std::map<ArmId, TrainingLog> logs;
  LoopOutput loop = run_loop(col.world, runtimes, plan.collection_days, true, [&](const DayLog& d) {
    for (const InteractionRecord& rec : d.records) logs[rec.arm].append(rec);
  });
  col.report = finish_report(col.world, runtimes, plan.collection_days, report_cfg, loop);
  col.last_requests = std::move(loop.last_requests);
  for (const ArmRuntime& rt : runtimes) col.final_policies[rt.setup().id] = rt.policy();

  // Phase 2: one fresh ensemble per log, same initialization and step count.
  const WorldState& w = col.world;
  RandomStream pair_rng = RandomStream(world_cfg.seed).derive(kEvalPairTag);
  std::vector<UncertaintyPair> pairs(plan.eval_pairs);
  if (w.users.empty() || w.items.empty()) throw std::runtime_error("evaluation needs users and items");
  for (UncertaintyPair& p : pairs) {
    p.user = pair_rng.below(w.users.size());
    p.content = pair_rng.below(w.items.size());
  }
  const std::size_t ud = world_cfg.user_feature_dim();
  const std::size_t cd = world_cfg.content_feature_dim();
  Eigen::MatrixXd eval_inputs(static_cast<Eigen::Index>(ud + cd),
                              static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    const auto uf = w.user_features(w.users[pairs[j].user]);
    const auto cf = w.content_features(w.items[pairs[j].content]);
    for (std::size_t i = 0; i < ud; ++i) eval_inputs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = uf[i];
    for (std::size_t i = 0; i < cd; ++i) eval_inputs(static_cast<Eigen::Index>(ud + i), static_cast<Eigen::Index>(j)) = cf[i];
  }
  for (std::size_t c = 1; c <= plan.checkpoints; ++c) {
    res.checkpoint_steps.push_back(std::max<std::size_t>(1, plan.train_steps * c / plan.checkpoints));
  }
  ArmSetup init = runtimes.front().setup();
  const std::uint64_t order_seed = RandomStream(world_cfg.seed).derive(kPhaseTwoTag).seed();
  res.log_size_control = logs[plan.control.id].size();
  res.log_size_treatment = logs[plan.treatment.id].size();
  res.model_control = train_fresh(init, logs[plan.control.id], plan, order_seed, eval_inputs,
                                  res.checkpoint_steps, res.uncertainty_control);
  res.model_treatment = train_fresh(init, logs[plan.treatment.id], plan, order_seed, eval_inputs,
                                    res.checkpoint_steps, res.uncertainty_treatment);

  // Phase 3: both models served greedily on copies of the same world.
  res.eval_kind_control = plan.evaluation_kind;
  res.eval_kind_treatment = plan.evaluation_kind;
  res.eval_report = evaluate_greedy(w, plan.control, res.model_control, plan.eval_days, salt,
                                    report_cfg);
  res.eval_report.absorb(evaluate_greedy(w, plan.treatment, res.model_treatment, plan.eval_days,
                                         salt, report_cfg));
  res.eval_report.set_value(plan.control.id, "ensemble_uncertainty", res.uncertainty_control.back());
  res.eval_report.set_value(plan.treatment.id, "ensemble_uncertainty",
                            res.uncertainty_treatment.back());
  return res;
}

LinearBanditResult run_linear_bandit(const LinearBanditConfig& cfg) {
  if (cfg.arms < 2 || cfg.dim == 0 || cfg.horizon == 0 || cfg.finalize_every == 0) {
    throw std::invalid_argument("linear bandit sizes must be positive (at least two arms)");
  }
  RandomStream root(cfg.seed);
  RandomStream env = root.derive(1);
  const auto d = static_cast<Eigen::Index>(cfg.dim);
  const auto k = static_cast<Eigen::Index>(cfg.arms);
  Eigen::MatrixXd phi(d, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) phi(i, j) = env.normal();
  }
  Eigen::VectorXd theta(d);
  for (Eigen::Index i = 0; i < d; ++i) theta[i] = env.normal();
  const Eigen::VectorXd means = phi.transpose() * theta;
  Eigen::Index best_arm = 0;
  const double best = means.maxCoeff(&best_arm);

  Eigen::Index greedy_arm = best_arm;
  for (int attempt = 0; attempt < 10000 && greedy_arm == best_arm; ++attempt) {
    Eigen::VectorXd head = theta;
    for (Eigen::Index i = 0; i < d; ++i) head[i] += env.normal(0.0, cfg.misspecification);
    (phi.transpose() * head).maxCoeff(&greedy_arm);
  }
  if (greedy_arm == best_arm) throw std::runtime_error("could not draw a misspecified head");

  LinearBanditResult res;
  res.greedy_regret.assign(cfg.horizon, best - means[greedy_arm]);
  res.nlb_regret.reserve(cfg.horizon);

  std::vector<ContentId> ids(cfg.arms);
  std::iota(ids.begin(), ids.end(), 0);
  RandomStream ts = root.derive(2);
  RandomStream noise = root.derive(3);
  CovarianceAccumulator acc(d, cfg.epsilon, cfg.sigma_sq);
  PosteriorState post = finalize(acc, cfg.strategy);
  std::vector<ScoreDistribution> dists(cfg.arms);
  for (std::size_t t = 0; t < cfg.horizon; ++t) {
    for (Eigen::Index j = 0; j < k; ++j) dists[static_cast<std::size_t>(j)] = post.stats(phi.col(j));
    const ContentId chosen = rank_distributions(dists, ids, 1, ts).front().id;
    const auto c = static_cast<Eigen::Index>(chosen);
    res.nlb_regret.push_back(best - means[c]);
    acc.accumulate(phi.col(c), means[c] + noise.normal(0.0, cfg.noise_sd));
    if ((t + 1) % cfg.finalize_every == 0) post = finalize(acc, cfg.strategy);
  }
  res.nlb_total = std::accumulate(res.nlb_regret.begin(), res.nlb_regret.end(), 0.0);
  res.greedy_total = std::accumulate(res.greedy_regret.begin(), res.greedy_regret.end(), 0.0);
  const std::size_t decile = std::max<std::size_t>(1, cfg.horizon / 10);
  res.first_decile = std::accumulate(res.nlb_regret.begin(), res.nlb_regret.begin() + static_cast<std::ptrdiff_t>(decile), 0.0);
  res.last_decile = std::accumulate(res.nlb_regret.end() - static_cast<std::ptrdiff_t>(decile), res.nlb_regret.end(), 0.0);
  return res;
}

}  // namespace explab
