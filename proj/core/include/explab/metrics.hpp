#pragma once

// Measurements over exported logs and corpus snapshots. Everything here is a
// pure function of its inputs; regret and uncertainty additionally need the
// live world or a policy because they read ground truth or model state.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "explab/ranker.hpp"
#include "explab/sim.hpp"
#include "explab/types.hpp"

namespace explab {

struct CorpusQuery {
  /// X: positives needed strictly above this count inside the window.
  std::uint64_t threshold = 10;
  /// Y: window length in days after graduation.
  int window = 7;
  /// X': lifetime positives at which an item graduates.
  std::uint64_t graduation = 5;

  /// True when X' >= X, which is legal but usually a configuration slip.
  bool suspicious() const { return graduation >= threshold; }
};

/// Per-item replay of the log against a corpus snapshot. Positives that an
/// item carried before the first logged day are recovered as
/// lifetime_positives minus logged positives, so graduation is recomputed
/// for any X'.
class CorpusReplay {
 public:
  CorpusReplay(std::span<const LogEntry> log, std::span<const ContentItem> corpus);

  /// Graduation day under threshold X', or nullopt if never reached. Items
  /// already past X' before the log starts use their recorded graduation day
  /// (or publish day when none was recorded).
  std::optional<int> graduation_day(std::size_t item, std::uint64_t graduation) const;
  /// Positives on days in (from, to].
  std::uint64_t positives_between(std::size_t item, int from, int to) const;

  std::size_t size() const { return corpus_.size(); }
  const ContentItem& item(std::size_t i) const { return corpus_[i]; }

 private:
  std::span<const ContentItem> corpus_;
  std::vector<std::uint64_t> baseline_;
  std::vector<std::vector<int>> positive_days_;  // sorted
};

/// Items whose positives in (g, g + Y] exceed X, g the graduation day under
/// X'. arm restricts the count to items tagged with that arm. as_of truncates
/// every window at that day (inclusive); unset means no truncation.
std::size_t discoverable_corpus(std::span<const LogEntry> log, std::span<const ContentItem> corpus,
                                const CorpusQuery& q, std::optional<ArmId> arm = std::nullopt,
                                std::optional<int> as_of = std::nullopt);
std::size_t discoverable_corpus(const CorpusReplay& replay, const CorpusQuery& q,
                                std::optional<ArmId> arm = std::nullopt,
                                std::optional<int> as_of = std::nullopt);

/// Discoverable corpus as of the end of each day in [0, days).
std::vector<std::size_t> discoverable_corpus_series(const CorpusReplay& replay,
                                                    const CorpusQuery& q, int days,
                                                    std::optional<ArmId> arm = std::nullopt);

struct HistogramBucket {
  std::uint64_t threshold = 0;
  std::size_t count = 0;
};

/// Items with at least X positives in (g, g + window], for each X. Thresholds
/// are sorted ascending and deduplicated, so counts are nonincreasing.
std::vector<HistogramBucket> corpus_histogram(const CorpusReplay& replay,
                                              std::vector<std::uint64_t> thresholds, int window,
                                              std::uint64_t graduation,
                                              std::optional<ArmId> arm = std::nullopt);
std::vector<HistogramBucket> corpus_histogram(std::span<const LogEntry> log,
                                              std::span<const ContentItem> corpus,
                                              std::vector<std::uint64_t> thresholds, int window,
                                              std::uint64_t graduation,
                                              std::optional<ArmId> arm = std::nullopt);

/// True mean reward of content for the request's user.
using MeanOracle = std::function<double(const RequestRecord&, ContentId)>;

/// Cumulative regret, one entry per impression in log order. Slot s is
/// compared against the best candidate not already placed in slots < s, so a
/// policy that fills the slate in true-mean order has zero regret.
std::vector<double> cumulative_regret(std::span<const RequestRecord> requests,
                                      const MeanOracle& mean);
std::vector<double> cumulative_regret(std::span<const RequestRecord> requests,
                                      const WorldState& world);

/// Rank correlation with average ranks for ties. nullopt when either side
/// has zero rank variance. Throws std::invalid_argument when lengths differ
/// or are below 2.
std::optional<double> spearman(std::span<const double> x, std::span<const double> y);

/// Average (fractional) ranks, 1-based.
std::vector<double> average_ranks(std::span<const double> v);

struct UncertaintySample {
  double variance = 0.0;
  double age = 0.0;
  double popularity = 0.0;  // log1p(lifetime positives)
  double activity = 0.0;  // impressions the user has received so far
};

struct CorrelationRow {
  std::string feature;
  /// Full-sample estimate; nullopt when undefined.
  std::optional<double> estimate;
  /// Standard deviation of the estimate over bootstrap resamples; nullopt if
  /// fewer than two resamples were defined.
  std::optional<double> std_error;
  std::size_t defined_resamples = 0;
};

/// Spearman of variance against age, popularity and activity, with
/// bootstrap standard errors over `resamples` resamples.
std::vector<CorrelationRow> uncertainty_feature_correlations(
    std::span<const UncertaintySample> samples, std::size_t resamples = 20,
    std::uint64_t seed = 0);

struct UncertaintyPair {
  UserId user = 0;
  ContentId content = 0;
};

/// Logit-space variance of each pair under the policy, paired with the
/// pair's age, popularity and activity in the current world state.
std::vector<UncertaintySample> collect_uncertainty(const PolicySpec& policy,
                                                   const WorldState& world,
                                                   std::span<const UncertaintyPair> pairs);

struct EnsembleUncertainty {
  double value = 0.0;
  std::optional<std::string> warning;
};

/// Mean over pairs (columns of inputs) of the across-model standard deviation
/// of sigmoid predictions, normalized by E - 1. Fewer than two models gives
/// 0 with a warning.
EnsembleUncertainty ensemble_uncertainty(std::span<const RepresentationModel> models,
                                         const Eigen::MatrixXd& inputs);
EnsembleUncertainty ensemble_uncertainty(const Ensemble& ensemble, const Eigen::MatrixXd& inputs);

/// Users with at least s positive records on the given day.
std::size_t satisfied_users(std::span<const LogEntry> log, int day, std::uint64_t s = 1,
                            std::optional<ArmId> arm = std::nullopt);

/// Positive counts bucketed by age in days at interaction time. With edges
/// e_0 < e_1 < ... bucket 0 holds age < e_0, bucket i holds
/// e_{i-1} <= age < e_i and the last bucket holds age >= e_last.
std::vector<std::uint64_t> freshness_buckets(std::span<const LogEntry> log,
                                             std::span<const ContentItem> corpus,
                                             std::vector<int> edges = {1, 3, 12},
                                             std::optional<ArmId> arm = std::nullopt);

struct ReportConfig {
  std::vector<std::uint64_t> corpus_thresholds{10, 40};
  int corpus_window = 7;
  std::uint64_t graduation = 5;
  std::vector<std::uint64_t> histogram_thresholds{1, 5, 10, 20, 40, 80};
  int histogram_window = 90;
  std::uint64_t satisfied_threshold = 1;
  std::vector<int> freshness_edges{1, 3, 12};
};

/// Per-arm daily series plus whole-run values. Whole-run values use day -1
/// in the delimited output.
class MetricsReport {
 public:
  int horizon = 0;
  std::vector<ArmId> arms;
  std::vector<std::string> arm_labels;

  void set_series(ArmId arm, const std::string& metric, std::vector<double> values);
  void set_value(ArmId arm, const std::string& metric, double value);
  const std::vector<double>& series(ArmId arm, const std::string& metric) const;
  double value(ArmId arm, const std::string& metric) const;
  bool has_series(ArmId arm, const std::string& metric) const;
  bool has_value(ArmId arm, const std::string& metric) const;
  /// Copies every arm, series and value of other into this report.
  void absorb(const MetricsReport& other);

  /// Fixed-width table of whole-run values and end-of-horizon series values.
  void write_table(std::ostream& out) const;
  /// Long format: arm,day,metric,value with a header line.
  void write_csv(std::ostream& out) const;

 private:
  std::map<ArmId, std::map<std::string, std::vector<double>>> series_;
  std::map<ArmId, std::map<std::string, double>> values_;
};

std::string discoverable_metric_name(std::uint64_t threshold, int window);

/// Corpus, satisfaction, histogram and freshness metrics for each arm from an
/// exported log and corpus snapshot covering days [0, horizon).
MetricsReport build_report(std::span<const LogEntry> log, std::span<const ContentItem> corpus,
                           int horizon, const std::vector<ArmId>& arms, const ReportConfig& cfg);

/// Total regret per arm over a batch of requests, using the same per-slot
/// rule as cumulative_regret.
std::map<ArmId, double> regret_by_arm(std::span<const RequestRecord> requests,
                                      const WorldState& world);

}  // namespace explab
