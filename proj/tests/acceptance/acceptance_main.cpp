// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Pass criterion numbers as arguments to run a subset.

#include <Eigen/Dense>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "explab/assignment.hpp"
#include "explab/bayes_linear.hpp"
#include "explab/experiments.hpp"
#include "explab/metrics.hpp"
#include "explab/random.hpp"
#include "explab/ranker.hpp"
#include "explab/representation.hpp"
#include "explab/scenario.hpp"
#include "explab/sim.hpp"

namespace fs = std::filesystem;
using namespace explab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Clock {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel_err(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
  const double scale = std::max(want.norm(), 1e-300);
  return (got - want).norm() / scale;
}

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, RandomStream& rng) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
  }
  return m;
}

Eigen::VectorXd random_vector(Eigen::Index n, RandomStream& rng) { return random_matrix(n, 1, rng); }

Scenario scenario(const std::string& name) {
  return load_scenario(fs::path(EXPLAB_SCENARIO_DIR) / (name + ".cfg"));
}

// ---------------------------------------------------------------- 1

Outcome criterion1() {
  Clock clock;
  RandomStream rng(101);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const auto d = static_cast<Eigen::Index>(1 + rng.below(32));
    const auto n = static_cast<Eigen::Index>(1 + rng.below(1000));
    const double eps = std::exp(rng.uniform(std::log(1e-3), std::log(10.0)));
    const double s2 = rng.uniform(0.1, 5.0);
    const Eigen::MatrixXd phi = random_matrix(n, d, rng);
    const Eigen::VectorXd r = random_vector(n, rng);
    CovarianceAccumulator acc(d, eps, s2);
    for (Eigen::Index i = 0; i < n; ++i) acc.accumulate(phi.row(i).transpose(), r[i]);
    // Batch ridge oracle: dense normal equations through Householder QR.
    const Eigen::MatrixXd a = eps * Eigen::MatrixXd::Identity(d, d) + phi.transpose() * phi;
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    const Eigen::VectorXd beta = qr.solve(phi.transpose() * r);
    const Eigen::MatrixXd cov = s2 * qr.inverse();
    for (InverseStrategy st : {InverseStrategy::PseudoInverse, InverseStrategy::Cholesky}) {
      const PosteriorState post = finalize(acc, st);
      worst = std::max(worst, rel_err(post.beta_hat(), beta));
      Eigen::VectorXd var(8), want(8);
      for (int k = 0; k < 8; ++k) {
        const Eigen::VectorXd x = random_vector(d, rng);
        var[k] = post.variance(x);
        want[k] = x.dot(cov * x);
      }
      worst = std::max(worst, rel_err(var, want));
    }
  }
  const double t = clock.seconds();
  return {worst <= 1e-8 && t < 10.0, fmt("20 instances, max relative error %.3g, %.2f s", worst, t)};
}

// ---------------------------------------------------------------- 2

Outcome criterion2() {
  RandomStream rng(202);
  double worst = 0.0;
  for (int inst = 0; inst < 20; ++inst) {
    const auto d = static_cast<Eigen::Index>(2 + rng.below(31));
    const auto n = static_cast<Eigen::Index>(d + rng.below(500));
    CovarianceAccumulator acc(d, 0.5, 2.0);
    for (Eigen::Index i = 0; i < n; ++i) acc.accumulate(random_vector(d, rng), rng.normal());
    const PosteriorState p = finalize(acc, InverseStrategy::PseudoInverse);
    const PosteriorState c = finalize(acc, InverseStrategy::Cholesky);
    for (int k = 0; k < 10; ++k) {
      const Eigen::VectorXd x = random_vector(d, rng);
      const ScoreDistribution a = p.stats(x), b = c.stats(x);
      worst = std::max(worst, std::abs(a.mean - b.mean) / std::max(std::abs(b.mean), 1e-300));
      worst = std::max(worst, std::abs(a.variance - b.variance) / b.variance);
    }
  }
  // Rank-deficient: a duplicated feature column with a vanishing ridge.
  bool deficient_ok = true;
  double min_var = 0.0;
  try {
    CovarianceAccumulator acc(6, 1e-300, 1.0);
    for (int i = 0; i < 200; ++i) {
      Eigen::VectorXd x = random_vector(6, rng);
      x[5] = x[2];
      acc.accumulate(x, rng.normal());
    }
    const PosteriorState p = finalize(acc, InverseStrategy::PseudoInverse);
    deficient_ok = p.beta_hat().allFinite();
    min_var = 1e300;
    for (int k = 0; k < 50; ++k) {
      const double v = p.variance(random_vector(6, rng));
      deficient_ok = deficient_ok && std::isfinite(v);
      min_var = std::min(min_var, v);
    }
    deficient_ok = deficient_ok && min_var >= 0.0;
  } catch (const std::exception&) {
    deficient_ok = false;
  }
  return {worst <= 1e-8 && deficient_ok,
          fmt("full-rank max relative gap %.3g; rank-deficient pinv %s, min variance %.3g", worst,
              deficient_ok ? "ok" : "FAILED", min_var)};
}

// ---------------------------------------------------------------- 3

std::vector<double> argmax_probabilities(const std::vector<ScoreDistribution>& d) {
  std::vector<double> out(d.size(), 0.0);
  const double lo = -20.0, hi = 20.0;
  const int n = 80000;
  const double h = (hi - lo) / n;
  for (std::size_t i = 0; i < d.size(); ++i) {
    double total = 0.0;
    for (int s = 0; s <= n; ++s) {
      const double x = lo + s * h;
      const double sd = std::sqrt(d[i].variance);
      double f = std::exp(-0.5 * std::pow((x - d[i].mean) / sd, 2)) / (sd * std::sqrt(2 * M_PI));
      for (std::size_t j = 0; j < d.size(); ++j) {
        if (j != i) f *= 0.5 * std::erfc(-(x - d[j].mean) / std::sqrt(2 * d[j].variance));
      }
      total += (s == 0 || s == n) ? 0.5 * f : f;
    }
    out[i] = total * h;
  }
  return out;
}

Outcome criterion3() {
  RandomStream rng(303);
  const Eigen::Index d = 6;
  CovarianceAccumulator acc(d, 1.0, 1.5);
  for (int i = 0; i < 40; ++i) acc.accumulate(random_vector(d, rng), rng.normal());
  const PosteriorState post = finalize(acc, InverseStrategy::Cholesky);
  const Eigen::VectorXd phi = random_vector(d, rng);
  const double mu = phi.dot(post.beta_hat());
  const double var = 1.5 * phi.dot(acc.gram().ldlt().solve(phi));
  const int n = 100000;
  double sum = 0.0, sq = 0.0;
  RandomStream draw(304);
  for (int i = 0; i < n; ++i) {
    const double s = sample_score(post, phi, draw);
    sum += s;
    sq += s * s;
  }
  const double m = sum / n;
  const double v = (sq - n * m * m) / (n - 1);
  const double z_mean = std::abs(m - mu) / std::sqrt(var / n);
  const double z_var = std::abs(v - var) / (var * std::sqrt(2.0 / (n - 1)));

  const std::vector<ScoreDistribution> dists{{0.2, 1.0}, {0.6, 0.3}, {-0.1, 2.2}, {0.4, 0.05}};
  const std::vector<ContentId> ids{0, 1, 2, 3};
  const auto oracle = argmax_probabilities(dists);
  std::vector<double> freq(4, 0.0);
  RandomStream rr(305);
  for (int i = 0; i < n; ++i) freq[rank_distributions(dists, ids, 1, rr).front().id] += 1.0 / n;
  double gap = 0.0;
  for (std::size_t i = 0; i < 4; ++i) gap = std::max(gap, std::abs(freq[i] - oracle[i]));
  return {z_mean < 4 && z_var < 4 && gap < 0.01,
          fmt("mean %.2f SE, variance %.2f SE off; argmax frequency gap %.4f", z_mean, z_var, gap)};
}

// ---------------------------------------------------------------- 4

Outcome criterion4() {
  NetworkConfig c;
  c.user_dim = 5;
  c.content_dim = 6;
  c.hidden = {16, 8};
  c.seed = 404;
  const RepresentationModel m = RepresentationModel::initialize(c);
  RandomStream rng(405);
  const Eigen::MatrixXd x = random_matrix(11, 6, rng);
  Eigen::VectorXd y(6);
  for (Eigen::Index i = 0; i < 6; ++i) y[i] = static_cast<double>(rng.below(2));
  Eigen::VectorXd grad;
  m.loss_and_gradient(x, y, &grad);
  const Eigen::VectorXd theta = m.parameters();
  RepresentationModel probe = m;
  double worst = 0.0;
  const double h = 1e-5;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd t = theta;
    t[i] = theta[i] + h;
    probe.set_parameters(t);
    const double up = probe.loss_and_gradient(x, y, nullptr);
    t[i] = theta[i] - h;
    probe.set_parameters(t);
    const double down = probe.loss_and_gradient(x, y, nullptr);
    const double fd = (up - down) / (2 * h);
    const double scale = std::max({std::abs(fd), std::abs(grad[i]), 1e-6});
    worst = std::max(worst, std::abs(fd - grad[i]) / scale);
  }
  return {worst <= 1e-4, fmt("%ld parameters, max relative error %.3g", static_cast<long>(theta.size()), worst)};
}

// ---------------------------------------------------------------- 5

Outcome criterion5() {
  Clock clock;
  const Scenario s = scenario("linear_bandit");
  std::size_t sublinear = 0, beats = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    LinearBanditConfig cfg = s.linear_bandit;
    cfg.seed = seed;
    const LinearBanditResult r = run_linear_bandit(cfg);
    sublinear += r.sublinear();
    beats += r.nlb_total < r.greedy_total;
  }
  const double t = clock.seconds();
  return {sublinear >= 9 && t < 60.0,
          fmt("sublinear in %zu/10 seeds (NLB below misspecified greedy in %zu/10), %.1f s", sublinear,
              beats, t)};
}

// ---------------------------------------------------------- shared runs

std::string fingerprint(const ScenarioRun& r) {
  std::ostringstream out;
  if (r.world) write_log(out, r.world->log);
  r.report.write_csv(out);
  return out.str();
}

double end_value(const MetricsReport& r, ArmId arm, const std::string& metric) {
  const auto& s = r.series(arm, metric);
  return s.empty() ? 0.0 : s.back();
}

struct SeedRuns {
  Scenario scenario;
  std::vector<std::uint64_t> seeds;
  std::vector<ScenarioRun> runs;
  std::vector<double> seconds;
};

std::map<std::string, SeedRuns> g_runs;

const SeedRuns& runs_of(const std::string& name) {
  auto it = g_runs.find(name);
  if (it != g_runs.end()) return it->second;
  SeedRuns out{scenario(name), {}, {}, {}};
  out.seeds = out.scenario.seeds;
  for (std::uint64_t seed : out.seeds) {
    Clock clock;
    out.runs.push_back(run_scenario(out.scenario, seed));
    out.seconds.push_back(clock.seconds());
    std::fprintf(stderr, "  %s seed %llu: %.1f s\n", name.c_str(), static_cast<unsigned long long>(seed),
                 out.seconds.back());
  }
  return g_runs.emplace(name, std::move(out)).first->second;
}

// Wins of treatment over control on each configured discoverable-corpus X.
std::string corpus_wins(const SeedRuns& sr, ArmId control, ArmId treatment, bool& all_ok,
                        std::size_t need) {
  std::string detail;
  const ReportConfig& rc = sr.scenario.report;
  for (std::uint64_t x : rc.corpus_thresholds) {
    const std::string m = discoverable_metric_name(x, rc.corpus_window);
    std::size_t wins = 0;
    std::string pairs;
    for (const ScenarioRun& r : sr.runs) {
      const double c = end_value(r.report, control, m), t = end_value(r.report, treatment, m);
      wins += t > c;
      pairs += fmt(" %.0f/%.0f", t, c);
    }
    all_ok = all_ok && wins >= need;
    detail += fmt("X=%llu: %zu/%zu wins (treatment/control%s); ", static_cast<unsigned long long>(x), wins,
                  sr.runs.size(), pairs.c_str());
  }
  return detail;
}

// ---------------------------------------------------------------- 6

Outcome criterion6() {
  const SeedRuns& sr = runs_of("codiverted_fresh_tail");
  const ArmId control = sr.scenario.arm("control").id;
  const ArmId treatment = sr.scenario.arm("treatment").id;
  bool ok = sr.scenario.report.corpus_thresholds.size() >= 2;
  std::string detail = corpus_wins(sr, control, treatment, ok, 4);
  const double slowest = *std::max_element(sr.seconds.begin(), sr.seconds.end());
  ok = ok && slowest < 300.0;
  detail += fmt("slowest seed %.0f s; ", slowest);

  const SeedRuns& aa = runs_of("aa");
  std::size_t inside = 0, total = 0;
  const ArmId a0 = aa.scenario.arms.at(0).id, a1 = aa.scenario.arms.at(1).id;
  for (const ScenarioRun& r : aa.runs) {
    for (const AABand& b : aa.scenario.aa_bands) {
      inside += b.contains(aa_statistic(r.report, a0, a1, b.metric));
      ++total;
    }
  }
  ok = ok && total > 0 && inside == total;
  detail += fmt("A/A inside stored bands %zu/%zu", inside, total);
  return {ok, detail};
}

// ---------------------------------------------------------------- 7

Outcome criterion7() {
  const SeedRuns& sr = runs_of("nlb_vs_greedy");
  bool ok = true;
  const std::string detail =
      corpus_wins(sr, sr.scenario.arm("control").id, sr.scenario.arm("treatment").id, ok, 4);
  return {ok, detail};
}

// ---------------------------------------------------------------- 8

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

Outcome criterion8() {
  const SeedRuns& sr = runs_of("ablation");
  const std::vector<double>& levels = sr.scenario.ablation.levels;
  std::vector<double> med;
  std::string detail = "median satisfied share:";
  for (std::size_t i = 0; i < levels.size(); ++i) {
    std::vector<double> v;
    for (const ScenarioRun& r : sr.runs) v.push_back(r.report.value(static_cast<ArmId>(i), "satisfied_share_tail"));
    med.push_back(median(v));
    detail += fmt(" x=%g %.4f", levels[i], med.back());
  }
  bool monotone = true;
  for (std::size_t i = 1; i < med.size(); ++i) monotone = monotone && med[i] <= med[i - 1];

  // Per-item survival frequency over users.
  double worst = 0.0;
  const std::size_t users = 100000, items = 200;
  for (double x : levels) {
    if (x == 0.0) continue;
    const AblationSpec spec{x, sr.scenario.ablation.salt};
    std::vector<std::size_t> kept(items, 0);
    for (UserId u = 0; u < users; ++u) {
      const std::uint64_t s = ablation_seed(spec, u);
      for (ContentId c = 0; c < items; ++c) kept[c] += survives_ablation(s, c, x);
    }
    for (std::size_t c = 0; c < items; ++c) {
      worst = std::max(worst, std::abs(static_cast<double>(kept[c]) / users - (1.0 - x)));
    }
  }
  detail += fmt("; worst per-item survival gap %.4f", worst);
  return {monotone && worst <= 0.01, detail};
}

// ---------------------------------------------------------------- 9

std::vector<UncertaintyPair> candidate_pairs(const ScenarioRun& r, ArmId arm, std::size_t cap) {
  std::vector<UncertaintyPair> pairs;
  for (const RequestRecord& q : r.last_requests) {
    if (q.arm != arm) continue;
    for (ContentId c : q.candidates) pairs.push_back({q.user, c});
  }
  RandomStream rng(909);
  for (std::size_t i = 0; i + 1 < pairs.size(); ++i) {
    std::swap(pairs[i], pairs[i + rng.below(pairs.size() - i)]);
  }
  if (pairs.size() > cap) pairs.resize(cap);
  return pairs;
}

bool correlation_ok(const std::vector<CorrelationRow>& rows, std::string& detail) {
  bool ok = true;
  for (const CorrelationRow& row : rows) {
    if (!row.estimate || !row.std_error) {
      detail += " " + row.feature + " undefined";
      ok = false;
      continue;
    }
    const double lo = *row.estimate - 2 * *row.std_error, hi = *row.estimate + 2 * *row.std_error;
    // The whole +/- 2 SE interval has to satisfy the bound.
    const bool pass = row.feature == "activity" ? (lo > -0.15 && hi < 0.15) : hi < -0.1;
    ok = ok && pass;
    detail += fmt(" %s %+.3f±%.3f%s", row.feature.c_str(), *row.estimate, 2 * *row.std_error,
                  pass ? "" : "(x)");
  }
  return ok;
}

Outcome criterion9() {
  const SeedRuns& nlb = runs_of("nlb_vs_greedy");
  const SeedRuns& ens = runs_of("data_diverted");
  std::string detail = "NLB:";
  const ScenarioRun& rn = nlb.runs.front();
  const ArmId na = nlb.scenario.arm("treatment").id;
  const auto np = candidate_pairs(rn, na, 5000);
  bool ok = correlation_ok(
      uncertainty_feature_correlations(collect_uncertainty(rn.policies.at(na), *rn.world, np), 20, 1),
      detail);
  detail += "; ensemble:";
  const ScenarioRun& re = ens.runs.front();
  const ArmId ea = ens.scenario.arm("treatment").id;
  const auto ep = candidate_pairs(re, ea, 5000);
  ok = correlation_ok(
           uncertainty_feature_correlations(collect_uncertainty(re.policies.at(ea), *re.world, ep), 20, 1),
           detail) &&
       ok;
  return {ok, detail};
}

// ---------------------------------------------------------------- 10

Outcome criterion10() {
  const Scenario s = scenario("data_diverted");
  std::size_t wins = 0;
  bool structural = true;
  std::string detail;
  for (std::uint64_t seed : s.seeds) {
    const SeededScenario ss = seeded(s, seed);
    DataDivertedPlan plan = s.data_diverted;
    for (const ArmSetup& a : ss.arms) {
      if (a.label == "control") plan.control = a;
      if (a.label == "treatment") plan.treatment = a;
    }
    const DataDivertedResult r = run_data_diverted(plan, ss.world, s.salt, s.report);
    std::size_t below = 0;
    for (std::size_t i = 0; i < r.checkpoint_steps.size(); ++i) {
      below += r.uncertainty_treatment[i] < r.uncertainty_control[i];
    }
    const bool win = r.uncertainty_treatment.back() < r.uncertainty_control.back();
    wins += win;
    structural = structural && r.eval_kind_control == r.eval_kind_treatment &&
                 r.eval_kind_control == plan.evaluation_kind &&
                 r.log_size_control > 0 && r.log_size_treatment > 0;
    detail += fmt(" seed %llu %.4f/%.4f (below at %zu/%zu checkpoints);", static_cast<unsigned long long>(seed),
                  r.uncertainty_treatment.back(), r.uncertainty_control.back(), below,
                  r.checkpoint_steps.size());
  }
  return {wins >= 4 && structural,
          fmt("treatment below control at the end of training in %zu/%zu seeds, one evaluation policy %s;",
              wins, s.seeds.size(), structural ? "yes" : "NO") +
              detail};
}

// ---------------------------------------------------------------- 11

Outcome criterion11() {
  bool same = true;
  std::string detail;
  for (const std::string name : {"codiverted_fresh_tail", "ablation", "linear_bandit"}) {
    const Scenario s = scenario(name);
    const std::uint64_t seed = s.seeds.front();
    std::string first;
    const auto it = g_runs.find(name);
    if (it != g_runs.end()) {
      first = fingerprint(it->second.runs.front());
    } else {
      first = fingerprint(run_scenario(s, seed));
    }
    const std::string second = fingerprint(run_scenario(s, seed));
    const bool eq = first == second;
    same = same && eq;
    detail += fmt("%s seed %llu %s (%zu bytes); ", name.c_str(), static_cast<unsigned long long>(seed),
                  eq ? "identical" : "DIFFERS", first.size());
  }
  return {same, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> criteria{
      criterion1, criterion2, criterion3, criterion4,  criterion5, criterion6,
      criterion7, criterion8, criterion9, criterion10, criterion11};
  std::set<int> chosen;
  for (int i = 1; i < argc; ++i) chosen.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!chosen.empty() && !chosen.contains(id)) continue;
    Outcome o;
    Clock clock;
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %s  %s [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(),
                clock.seconds());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
