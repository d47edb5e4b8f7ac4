#pragma once

// Scenario drivers: arm runtimes that serve and retrain daily, the
// user-diverted and codiverted designs, corpus ablation, the data-diverted
// protocol, and the known-representation linear bandit.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "explab/assignment.hpp"
#include "explab/bayes_linear.hpp"
#include "explab/metrics.hpp"
#include "explab/ranker.hpp"
#include "explab/representation.hpp"
#include "explab/sim.hpp"

namespace explab {

struct ArmSetup {
  ArmId id = 0;
  std::string label = "control";
  /// Share of users (and, when codiverted, of providers).
  double fraction = 0.5;
  PolicyKind kind = PolicyKind::Greedy;
  /// Greedy over the mean of an ensemble instead of a single network.
  bool greedy_on_ensemble = false;
  SlotPlan slots;
  std::optional<AblationSpec> ablation;
  /// user_dim and content_dim are filled in from the world.
  NetworkConfig network;
  std::size_t ensemble_size = 5;
  bool shared_bottom = false;
  TrainConfig train;
  double epsilon = CovarianceAccumulator::kDefaultEpsilon;
  double sigma_sq = CovarianceAccumulator::kDefaultSigmaSq;
  MeanSource mean_source = MeanSource::NetworkLogit;
  /// Retrain after every simulated day on that day's records of this arm.
  bool train_daily = true;

  bool uses_ensemble() const {
    return kind == PolicyKind::EnsembleTS || (kind == PolicyKind::Greedy && greedy_on_ensemble);
  }
};

/// Training inputs packed column-wise, one column per impression.
struct TrainingLog {
  Eigen::Index input_dim = 0;
  std::vector<double> inputs;
  std::vector<double> labels;

  std::size_t size() const { return labels.size(); }
  void append(const InteractionRecord& rec);
  Eigen::Map<const Eigen::MatrixXd> matrix() const;
};

/// Mutable per-arm model state. policy() hands out frozen snapshots.
class ArmRuntime {
 public:
  ArmRuntime(ArmSetup setup, const WorldConfig& world);

  const ArmSetup& setup() const { return setup_; }
  PolicySpec policy() const;
  ArmPolicy arm_policy() const;

  /// One training run over the given records (all from this arm).
  void train(const TrainingLog& log);

  const RepresentationModel& model() const { return *model_; }
  const Ensemble* ensemble() const { return ensemble_.get(); }
  const CovarianceAccumulator& accumulator() const { return acc_; }
  const PosteriorState& posterior() const { return *posterior_; }
  std::size_t training_runs() const { return runs_; }

 private:
  ArmSetup setup_;
  std::shared_ptr<RepresentationModel> model_;
  std::shared_ptr<Ensemble> ensemble_;
  CovarianceAccumulator acc_;
  std::shared_ptr<PosteriorState> posterior_;
  std::size_t runs_ = 0;
};

struct RunResult {
  WorldState world;
  MetricsReport report;
  /// Requests of the final simulated day, kept for uncertainty and regret
  /// analysis after the run.
  std::vector<RequestRecord> last_requests;
  std::map<ArmId, PolicySpec> final_policies;
};

/// Builds the world, diverts it with the given mode and runs every arm for
/// `days` days with daily retraining. Regret is tracked per arm as a daily
/// cumulative series.
RunResult run_experiment(const WorldConfig& world_cfg, const std::string& salt,
                         DiversionMode mode, const std::vector<ArmSetup>& arms, int days,
                         const ReportConfig& report_cfg);

/// Two arms, users and providers diverted in equal proportion.
RunResult run_codiverted(const WorldConfig& world_cfg, const std::string& salt,
                         const ArmSetup& control, const ArmSetup& treatment, int horizon,
                         const ReportConfig& report_cfg);

/// A/A noise band on log((treatment + 1) / (control + 1)) of an end-of-run
/// metric.
struct AABand {
  std::string metric;
  double lo = 0.0;
  double hi = 0.0;

  bool contains(double v) const { return v >= lo && v <= hi; }
};

double aa_statistic(const MetricsReport& report, ArmId control, ArmId treatment,
                    const std::string& metric);

/// Mean +/- z standard deviations of the statistic over calibration runs.
std::vector<AABand> calibrate_aa_bands(const std::vector<MetricsReport>& reports, ArmId control,
                                       ArmId treatment, const std::vector<std::string>& metrics,
                                       double z = 3.0);

struct AblationConfig {
  std::vector<double> levels{0.0, 0.1, 0.25, 0.5};
  /// Satisfaction is averaged over this many final days.
  int tail_days = 7;
  std::string salt = "ablation";
};

struct AblationPoint {
  double fraction = 0.0;
  ArmId arm = 0;
  std::size_t users = 0;
  /// Mean daily satisfied users over the tail days.
  double satisfied_users = 0.0;
  /// satisfied_users divided by the level's user count.
  double satisfied_share = 0.0;
};

struct AblationResult {
  std::vector<AblationPoint> points;
  RunResult run;
};

/// One shared world; each level is a user-diverted arm with an equal share
/// of users, arm id = level index, serving the given arm's policy with the
/// level's nomination filter.
AblationResult run_ablation(const WorldConfig& world_cfg, const ArmSetup& arm,
                            const AblationConfig& cfg, int horizon,
                            const ReportConfig& report_cfg);

struct DataDivertedPlan {
  /// Collection policies: control is Greedy over an ensemble mean,
  /// treatment is EnsembleTS.
  ArmSetup control;
  ArmSetup treatment;
  int collection_days = 30;
  /// SGD steps per fresh ensemble; identical for both logs.
  std::size_t train_steps = 400;
  std::size_t checkpoints = 4;
  std::size_t batch_size = 256;
  /// Fixed evaluation pairs, drawn uniformly over users and corpus.
  std::size_t eval_pairs = 4000;
  int eval_days = 7;
  PolicyKind evaluation_kind = PolicyKind::Greedy;

  /// Throws std::invalid_argument when the plan cannot be run.
  void validate() const;
};

struct DataDivertedResult {
  std::shared_ptr<const Ensemble> model_control;
  std::shared_ptr<const Ensemble> model_treatment;
  std::vector<std::size_t> checkpoint_steps;
  std::vector<double> uncertainty_control;
  std::vector<double> uncertainty_treatment;
  std::size_t log_size_control = 0;
  std::size_t log_size_treatment = 0;
  PolicyKind eval_kind_control = PolicyKind::Greedy;
  PolicyKind eval_kind_treatment = PolicyKind::Greedy;
  /// Evaluation-phase metrics; arms keep the collection arm ids.
  MetricsReport eval_report;
  /// Collection-phase run, including the collection ensembles.
  RunResult collection;
};

DataDivertedResult run_data_diverted(const DataDivertedPlan& plan, const WorldConfig& world_cfg,
                                     const std::string& salt, const ReportConfig& report_cfg);

struct LinearBanditConfig {
  std::size_t arms = 20;
  std::size_t dim = 8;
  std::size_t horizon = 10000;
  double noise_sd = 1.0;
  double sigma_sq = 1.0;
  double epsilon = 1.0;
  /// The posterior is refinalized after this many rounds.
  std::size_t finalize_every = 1;
  /// Scale of the perturbation added to the true weights for the fixed
  /// greedy head. The perturbation is redrawn until the head picks a
  /// suboptimal arm.
  double misspecification = 1.0;
  InverseStrategy strategy = InverseStrategy::Cholesky;
  std::uint64_t seed = 1;
};

struct LinearBanditResult {
  /// Instantaneous expected regret per round.
  std::vector<double> nlb_regret;
  std::vector<double> greedy_regret;
  double nlb_total = 0.0;
  double greedy_total = 0.0;
  double first_decile = 0.0;
  double last_decile = 0.0;

  bool sublinear() const { return last_decile < 0.25 * first_decile; }
};

LinearBanditResult run_linear_bandit(const LinearBanditConfig& cfg);

}  // namespace explab
