#include "explab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>
#include <unordered_map>

namespace explab {
namespace {

// Corpus position of each content id; identity when the snapshot is dense.
class IdLookup {
 public:
  explicit IdLookup(std::span<const ContentItem> corpus) {
    dense_ = true;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (corpus[i].id != i) {
        dense_ = false;
        break;
      }
    }
    size_ = corpus.size();
    if (!dense_) {
      for (std::size_t i = 0; i < corpus.size(); ++i) map_.emplace(corpus[i].id, i);
    }
  }

  std::optional<std::size_t> find(ContentId id) const {
    if (dense_) return id < size_ ? std::optional<std::size_t>(id) : std::nullopt;
    const auto it = map_.find(id);
    if (it == map_.end()) return std::nullopt;
    return it->second;
  }

 private:
  bool dense_ = true;
  std::size_t size_ = 0;
  std::unordered_map<ContentId, std::size_t> map_;
};

bool arm_matches(ArmId item_arm, std::optional<ArmId> arm) {
  return !arm || item_arm == kNoArm || item_arm == *arm;
}

bool entry_matches(const LogEntry& e, std::optional<ArmId> arm) {
  return !arm || e.arm == *arm;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

}  // namespace

CorpusReplay::CorpusReplay(std::span<const LogEntry> log, std::span<const ContentItem> corpus)
    : corpus_(corpus), baseline_(corpus.size(), 0), positive_days_(corpus.size()) {
  const IdLookup lookup(corpus);
  for (const LogEntry& e : log) {
    if (e.reward <= 0) continue;
    if (const auto i = lookup.find(e.content)) positive_days_[*i].push_back(e.day);
  }
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto& days = positive_days_[i];
    std::sort(days.begin(), days.end());
    const std::uint64_t logged = days.size();
    const std::uint64_t life = corpus[i].lifetime_positives;
    baseline_[i] = life > logged ? life - logged : 0;
  }
}

std::optional<int> CorpusReplay::graduation_day(std::size_t item, std::uint64_t graduation) const {
  const ContentItem& c = corpus_[item];
  const std::uint64_t base = baseline_[item];
  if (base >= graduation) return c.graduation_day ? *c.graduation_day : c.publish_day;
  const std::uint64_t need = graduation - base;
  const auto& days = positive_days_[item];
  if (days.size() < need) return std::nullopt;
  return days[need - 1];
}

std::uint64_t CorpusReplay::positives_between(std::size_t item, int from, int to) const {
  if (to <= from) return 0;
  const auto& days = positive_days_[item];
  const auto lo = std::upper_bound(days.begin(), days.end(), from);
  const auto hi = std::upper_bound(days.begin(), days.end(), to);
  return static_cast<std::uint64_t>(hi - lo);
}

std::size_t discoverable_corpus(const CorpusReplay& replay, const CorpusQuery& q,
                                std::optional<ArmId> arm, std::optional<int> as_of) {
  if (q.window <= 0) return 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < replay.size(); ++i) {
    if (!arm_matches(replay.item(i).arm, arm)) continue;
    const auto g = replay.graduation_day(i, q.graduation);
    if (!g) continue;
    int end = *g + q.window;
    if (as_of) end = std::min(end, *as_of);
    if (replay.positives_between(i, *g, end) > q.threshold) ++count;
  }
  return count;
}

std::size_t discoverable_corpus(std::span<const LogEntry> log, std::span<const ContentItem> corpus,
                                const CorpusQuery& q, std::optional<ArmId> arm,
                                std::optional<int> as_of) {
  return discoverable_corpus(CorpusReplay(log, corpus), q, arm, as_of);
}

std::vector<std::size_t> discoverable_corpus_series(const CorpusReplay& replay,
                                                    const CorpusQuery& q, int days,
                                                    std::optional<ArmId> arm) {
  std::vector<std::size_t> series(static_cast<std::size_t>(std::max(days, 0)), 0);
  if (q.window <= 0 || days <= 0) return series;
  std::vector<std::size_t> arrivals(series.size() + 1, 0);
  for (std::size_t i = 0; i < replay.size(); ++i) {
    if (!arm_matches(replay.item(i).arm, arm)) continue;
    const auto g = replay.graduation_day(i, q.graduation);
    if (!g) continue;
    // The (X+1)-th positive after g, if it lands inside the window.
    int lo = *g;
    int hi = *g + q.window;
    if (replay.positives_between(i, lo, hi) <= q.threshold) continue;
    while (hi - lo > 1) {
      const int mid = lo + (hi - lo) / 2;
      if (replay.positives_between(i, *g, mid) > q.threshold) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    const int day = std::max(hi, 0);
    if (day < days) ++arrivals[static_cast<std::size_t>(day)];
  }
  std::size_t running = 0;
  for (std::size_t t = 0; t < series.size(); ++t) {
    running += arrivals[t];
    series[t] = running;
  }
  return series;
}

std::vector<HistogramBucket> corpus_histogram(const CorpusReplay& replay,
                                              std::vector<std::uint64_t> thresholds, int window,
                                              std::uint64_t graduation, std::optional<ArmId> arm) {
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  std::vector<HistogramBucket> out;
  out.reserve(thresholds.size());
  for (std::uint64_t x : thresholds) out.push_back({x, 0});
  if (window <= 0) return out;
  for (std::size_t i = 0; i < replay.size(); ++i) {
    if (!arm_matches(replay.item(i).arm, arm)) continue;
    const auto g = replay.graduation_day(i, graduation);
    if (!g) continue;
    const std::uint64_t n = replay.positives_between(i, *g, *g + window);
    for (HistogramBucket& b : out) {
      if (n < b.threshold) break;
      ++b.count;
    }
  }
  return out;
}

std::vector<HistogramBucket> corpus_histogram(std::span<const LogEntry> log,
                                              std::span<const ContentItem> corpus,
                                              std::vector<std::uint64_t> thresholds, int window,
                                              std::uint64_t graduation, std::optional<ArmId> arm) {
  return corpus_histogram(CorpusReplay(log, corpus), std::move(thresholds), window, graduation,
                          arm);
}

namespace {

double request_regret(const RequestRecord& req, const MeanOracle& mean,
                      std::vector<double>* per_slot) {
  std::vector<ContentId> pool = req.candidates;
  for (ContentId c : req.served) {
    if (std::find(pool.begin(), pool.end(), c) == pool.end()) pool.push_back(c);
  }
  std::vector<double> means(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) means[i] = mean(req, pool[i]);
  std::vector<char> placed(pool.size(), 0);
  double total = 0.0;
  for (ContentId served : req.served) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t served_at = 0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (pool[i] == served) served_at = i;
      if (!placed[i]) best = std::max(best, means[i]);
    }
    const double r = best - means[served_at];
    placed[served_at] = 1;
    total += r;
    if (per_slot) per_slot->push_back(r);
  }
  return total;
}

}  // namespace

std::vector<double> cumulative_regret(std::span<const RequestRecord> requests,
                                      const MeanOracle& mean) {
  std::vector<double> steps;
  for (const RequestRecord& req : requests) request_regret(req, mean, &steps);
  std::partial_sum(steps.begin(), steps.end(), steps.begin());
  return steps;
}

namespace {

MeanOracle world_oracle(const WorldState& world) {
  return [&world](const RequestRecord& req, ContentId c) {
    return true_mean_reward(world, world.users.at(req.user), world.items.at(c));
  };
}

}  // namespace

std::vector<double> cumulative_regret(std::span<const RequestRecord> requests,
                                      const WorldState& world) {
  return cumulative_regret(requests, world_oracle(world));
}

std::map<ArmId, double> regret_by_arm(std::span<const RequestRecord> requests,
                                      const WorldState& world) {
  const MeanOracle oracle = world_oracle(world);
  std::map<ArmId, double> out;
  for (const RequestRecord& req : requests) out[req.arm] += request_regret(req, oracle, nullptr);
  return out;
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 2) throw std::invalid_argument("spearman: need at least two points");
  const std::vector<double> rx = average_ranks(x);
  const std::vector<double> ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0;
  double sxx = 0.0;
  double syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double a = rx[i] - mean;
    const double b = ry[i] - mean;
    sxy += a * b;
    sxx += a * a;
    syy += b * b;
  }
  if (sxx <= 0.0 || syy <= 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<CorrelationRow> uncertainty_feature_correlations(
    std::span<const UncertaintySample> samples, std::size_t resamples, std::uint64_t seed) {
  static const char* const kNames[] = {"age", "popularity", "activity"};
  const auto feature = [](const UncertaintySample& s, int f) {
    return f == 0 ? s.age : f == 1 ? s.popularity : s.activity;
  };
  std::vector<CorrelationRow> rows(3);
  for (int f = 0; f < 3; ++f) rows[f].feature = kNames[f];
  const std::size_t n = samples.size();
  if (n < 2) return rows;

  std::vector<double> var(n);
  std::vector<double> feat(n);
  auto correlate = [&](const std::vector<std::size_t>* idx, int f) {
    for (std::size_t i = 0; i < n; ++i) {
      const UncertaintySample& s = samples[idx ? (*idx)[i] : i];
      var[i] = s.variance;
      feat[i] = feature(s, f);
    }
    return spearman(var, feat);
  };
  for (int f = 0; f < 3; ++f) rows[f].estimate = correlate(nullptr, f);

  RandomStream rng(seed);
  std::vector<std::vector<double>> boot(3);
  std::vector<std::size_t> idx(n);
  for (std::size_t r = 0; r < resamples; ++r) {
    for (auto& i : idx) i = rng.below(n);
    for (int f = 0; f < 3; ++f) {
      if (const auto rho = correlate(&idx, f)) boot[f].push_back(*rho);
    }
  }
  for (int f = 0; f < 3; ++f) {
    const auto& b = boot[f];
    rows[f].defined_resamples = b.size();
    if (b.size() < 2) continue;
    const double m = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
    double ss = 0.0;
    for (double v : b) ss += (v - m) * (v - m);
    rows[f].std_error = std::sqrt(ss / static_cast<double>(b.size() - 1));
  }
  return rows;
}

std::vector<UncertaintySample> collect_uncertainty(const PolicySpec& policy,
                                                   const WorldState& world,
                                                   std::span<const UncertaintyPair> pairs) {
  policy.validate();
  if (pairs.empty()) return {};
  const std::size_t ud = world.config.user_feature_dim();
  const std::size_t cd = world.config.content_feature_dim();
  Eigen::MatrixXd x(static_cast<Eigen::Index>(ud + cd), static_cast<Eigen::Index>(pairs.size()));
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    const auto uf = world.user_features(world.users.at(pairs[j].user));
    const auto cf = world.content_features(world.items.at(pairs[j].content));
    const auto col = static_cast<Eigen::Index>(j);
    for (std::size_t i = 0; i < ud; ++i) x(static_cast<Eigen::Index>(i), col) = uf[i];
    for (std::size_t i = 0; i < cd; ++i) x(static_cast<Eigen::Index>(ud + i), col) = cf[i];
  }
  const std::vector<ScoreDistribution> dists = score_inputs(policy, x);
  std::vector<UncertaintySample> out(pairs.size());
  for (std::size_t j = 0; j < pairs.size(); ++j) {
    const ContentItem& c = world.items.at(pairs[j].content);
    out[j].variance = dists[j].variance;
    out[j].age = static_cast<double>(world.age_of(c));
    out[j].popularity = std::log1p(static_cast<double>(c.lifetime_positives));
    out[j].activity = static_cast<double>(world.users.at(pairs[j].user).interactions);
  }
  return out;
}

namespace {

EnsembleUncertainty spread_of_probabilities(const Eigen::MatrixXd& logits) {
  EnsembleUncertainty out;
  const Eigen::Index e = logits.rows();
  const Eigen::Index b = logits.cols();
  if (e < 2) {
    out.warning = "ensemble uncertainty needs at least two models; reporting 0";
    return out;
  }
  if (b == 0) return out;
  double total = 0.0;
  for (Eigen::Index j = 0; j < b; ++j) {
    Eigen::VectorXd p(e);
    for (Eigen::Index i = 0; i < e; ++i) p[i] = sigmoid(logits(i, j));
    const double mean = p.mean();
    const double var = (p.array() - mean).square().sum() / static_cast<double>(e - 1);
    total += std::sqrt(var);
  }
  out.value = total / static_cast<double>(b);
  return out;
}

}  // namespace

EnsembleUncertainty ensemble_uncertainty(std::span<const RepresentationModel> models,
                                         const Eigen::MatrixXd& inputs) {
  Eigen::MatrixXd logits(static_cast<Eigen::Index>(models.size()), inputs.cols());
  if (models.size() >= 2) {
    for (std::size_t i = 0; i < models.size(); ++i) {
      logits.row(static_cast<Eigen::Index>(i)) = models[i].logits_columns(inputs).transpose();
    }
  }
  return spread_of_probabilities(logits);
}

EnsembleUncertainty ensemble_uncertainty(const Ensemble& ensemble, const Eigen::MatrixXd& inputs) {
  if (ensemble.size() < 2) return spread_of_probabilities(Eigen::MatrixXd(ensemble.size(), 0));
  return spread_of_probabilities(ensemble.member_logits(inputs));
}

std::size_t satisfied_users(std::span<const LogEntry> log, int day, std::uint64_t s,
                            std::optional<ArmId> arm) {
  if (s == 0) throw std::invalid_argument("satisfaction threshold must be positive");
  std::unordered_map<UserId, std::uint64_t> positives;
  for (const LogEntry& e : log) {
    if (e.day == day && e.reward > 0 && entry_matches(e, arm)) ++positives[e.user];
  }
  std::size_t count = 0;
  for (const auto& [user, n] : positives) {
    if (n >= s) ++count;
  }
  return count;
}

std::vector<std::uint64_t> freshness_buckets(std::span<const LogEntry> log,
                                             std::span<const ContentItem> corpus,
                                             std::vector<int> edges, std::optional<ArmId> arm) {
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  std::vector<std::uint64_t> buckets(edges.size() + 1, 0);
  const IdLookup lookup(corpus);
  for (const LogEntry& e : log) {
    if (e.reward <= 0 || !entry_matches(e, arm)) continue;
    const auto i = lookup.find(e.content);
    if (!i) continue;
    const int age = e.day - corpus[*i].publish_day;
    const auto b = std::upper_bound(edges.begin(), edges.end(), age) - edges.begin();
    ++buckets[static_cast<std::size_t>(b)];
  }
  return buckets;
}

void MetricsReport::set_series(ArmId arm, const std::string& metric, std::vector<double> values) {
  series_[arm][metric] = std::move(values);
}

void MetricsReport::set_value(ArmId arm, const std::string& metric, double value) {
  values_[arm][metric] = value;
}

const std::vector<double>& MetricsReport::series(ArmId arm, const std::string& metric) const {
  const auto a = series_.find(arm);
  if (a != series_.end()) {
    const auto m = a->second.find(metric);
    if (m != a->second.end()) return m->second;
  }
  throw std::out_of_range("no series " + metric + " for arm " + std::to_string(arm));
}

double MetricsReport::value(ArmId arm, const std::string& metric) const {
  const auto a = values_.find(arm);
  if (a != values_.end()) {
    const auto m = a->second.find(metric);
    if (m != a->second.end()) return m->second;
  }
  throw std::out_of_range("no value " + metric + " for arm " + std::to_string(arm));
}

bool MetricsReport::has_series(ArmId arm, const std::string& metric) const {
  const auto a = series_.find(arm);
  return a != series_.end() && a->second.contains(metric);
}

bool MetricsReport::has_value(ArmId arm, const std::string& metric) const {
  const auto a = values_.find(arm);
  return a != values_.end() && a->second.contains(metric);
}

void MetricsReport::absorb(const MetricsReport& other) {
  for (std::size_t i = 0; i < other.arms.size(); ++i) {
    if (std::find(arms.begin(), arms.end(), other.arms[i]) != arms.end()) continue;
    arms.push_back(other.arms[i]);
    arm_labels.push_back(i < other.arm_labels.size() ? other.arm_labels[i]
                                                     : std::to_string(other.arms[i]));
  }
  horizon = std::max(horizon, other.horizon);
  for (const auto& [arm, metrics] : other.series_) {
    for (const auto& [name, s] : metrics) series_[arm][name] = s;
  }
  for (const auto& [arm, metrics] : other.values_) {
    for (const auto& [name, v] : metrics) values_[arm][name] = v;
  }
}

namespace {

std::string arm_label(const MetricsReport& r, ArmId arm) {
  for (std::size_t i = 0; i < r.arms.size() && i < r.arm_labels.size(); ++i) {
    if (r.arms[i] == arm) return r.arm_labels[i];
  }
  return std::to_string(arm);
}

}  // namespace

void MetricsReport::write_table(std::ostream& out) const {
  std::map<std::string, std::map<ArmId, double>> rows;
  for (const auto& [arm, metrics] : values_) {
    for (const auto& [name, v] : metrics) rows[name][arm] = v;
  }
  for (const auto& [arm, metrics] : series_) {
    for (const auto& [name, s] : metrics) {
      if (!s.empty()) rows[name + "@end"][arm] = s.back();
    }
  }
  std::vector<ArmId> cols = arms;
  if (cols.empty()) {
    for (const auto& [arm, m] : values_) cols.push_back(arm);
    for (const auto& [arm, m] : series_) {
      if (std::find(cols.begin(), cols.end(), arm) == cols.end()) cols.push_back(arm);
    }
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-36s", "metric");
  out << buf;
  for (ArmId a : cols) {
    std::snprintf(buf, sizeof buf, " %16s", arm_label(*this, a).c_str());
    out << buf;
  }
  out << '\n';
  for (const auto& [name, by_arm] : rows) {
    std::snprintf(buf, sizeof buf, "%-36s", name.c_str());
    out << buf;
    for (ArmId a : cols) {
      const auto it = by_arm.find(a);
      if (it == by_arm.end()) {
        std::snprintf(buf, sizeof buf, " %16s", "-");
      } else {
        std::snprintf(buf, sizeof buf, " %16.6g", it->second);
      }
      out << buf;
    }
    out << '\n';
  }
}

void MetricsReport::write_csv(std::ostream& out) const {
  out << "arm,day,metric,value\n";
  for (const auto& [arm, metrics] : values_) {
    const std::string label = arm_label(*this, arm);
    for (const auto& [name, v] : metrics) {
      out << label << ",-1," << name << ',' << format_double(v) << '\n';
    }
  }
  for (const auto& [arm, metrics] : series_) {
    const std::string label = arm_label(*this, arm);
    for (const auto& [name, s] : metrics) {
      for (std::size_t t = 0; t < s.size(); ++t) {
        out << label << ',' << t << ',' << name << ',' << format_double(s[t]) << '\n';
      }
    }
  }
}

std::string discoverable_metric_name(std::uint64_t threshold, int window) {
  return "discoverable_x" + std::to_string(threshold) + "_y" + std::to_string(window);
}

MetricsReport build_report(std::span<const LogEntry> log, std::span<const ContentItem> corpus,
                           int horizon, const std::vector<ArmId>& arms, const ReportConfig& cfg) {
  MetricsReport report;
  report.horizon = horizon;
  report.arms = arms;
  const CorpusReplay replay(log, corpus);
  const std::size_t days = static_cast<std::size_t>(std::max(horizon, 0));

  for (ArmId arm : arms) {
    for (std::uint64_t x : cfg.corpus_thresholds) {
      const CorpusQuery q{x, cfg.corpus_window, cfg.graduation};
      const auto s = discoverable_corpus_series(replay, q, horizon, arm);
      report.set_series(arm, discoverable_metric_name(x, cfg.corpus_window),
                        std::vector<double>(s.begin(), s.end()));
    }
    for (const HistogramBucket& b :
         corpus_histogram(replay, cfg.histogram_thresholds, cfg.histogram_window, cfg.graduation,
                          arm)) {
      report.set_value(arm, "histogram_ge" + std::to_string(b.threshold),
                       static_cast<double>(b.count));
    }
    const auto fresh = freshness_buckets(log, corpus, cfg.freshness_edges, arm);
    std::vector<int> edges = cfg.freshness_edges;
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
    for (std::size_t i = 0; i < fresh.size(); ++i) {
      std::string name = "positives_age_";
      if (i == 0) {
        name += "lt" + std::to_string(edges[0]) + "d";
      } else if (i == edges.size()) {
        name += "ge" + std::to_string(edges.back()) + "d";
      } else {
        name += std::to_string(edges[i - 1]) + "to" + std::to_string(edges[i]) + "d";
      }
      report.set_value(arm, name, static_cast<double>(fresh[i]));
    }
  }

  // One pass for the per-day activity series of every arm.
  std::map<ArmId, std::vector<double>> impressions;
  std::map<ArmId, std::vector<double>> positives;
  std::map<ArmId, std::vector<std::unordered_map<UserId, std::uint64_t>>> per_user;
  for (ArmId arm : arms) {
    impressions[arm].assign(days, 0.0);
    positives[arm].assign(days, 0.0);
    per_user[arm].resize(days);
  }
  for (const LogEntry& e : log) {
    if (e.day < 0 || static_cast<std::size_t>(e.day) >= days) continue;
    const auto it = impressions.find(e.arm);
    if (it == impressions.end()) continue;
    const auto d = static_cast<std::size_t>(e.day);
    it->second[d] += 1.0;
    if (e.reward > 0) {
      positives[e.arm][d] += 1.0;
      ++per_user[e.arm][d][e.user];
    }
  }
  for (ArmId arm : arms) {
    std::vector<double> satisfied(days, 0.0);
    for (std::size_t d = 0; d < days; ++d) {
      for (const auto& [user, n] : per_user[arm][d]) {
        if (n >= cfg.satisfied_threshold) satisfied[d] += 1.0;
      }
    }
    report.set_series(arm, "satisfied_users", std::move(satisfied));
    report.set_series(arm, "impressions", std::move(impressions[arm]));
    report.set_series(arm, "positives", std::move(positives[arm]));
  }
  return report;
}

}  // namespace explab
