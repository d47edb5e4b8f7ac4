#pragma once

// Ranking policies over a candidate slate and the per-run training loop that
// feeds the Bayesian head.

#include <Eigen/Core>

#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "explab/bayes_linear.hpp"
#include "explab/random.hpp"
#include "explab/representation.hpp"
#include "explab/types.hpp"

namespace explab {

enum class PolicyKind { Greedy, NeuralLinearTS, EnsembleTS };

/// Where the Thompson-sampling mean comes from. The network logit is the
/// default serving mean; the posterior mean phi^T beta_hat is used when phi
/// is a known linear representation.
enum class MeanSource { NetworkLogit, PosteriorMean };

const char* to_string(PolicyKind kind);
std::optional<PolicyKind> parse_policy_kind(std::string_view text);

/// E ranking networks scoring the same inputs. Independent members differ
/// only in their initialization seed; the shared-bottom variant has one trunk
/// and E heads.
class Ensemble {
 public:
  static Ensemble independent(const NetworkConfig& base, std::size_t members);
  static Ensemble shared_bottom(const NetworkConfig& base, std::size_t heads);
  static Ensemble from_models(std::vector<RepresentationModel> models);

  std::size_t size() const { return shared_ ? 1 + extra_heads_.size() : members_.size(); }
  bool shared() const { return shared_; }
  const NetworkConfig& config() const { return members_.front().config(); }

  /// E x B matrix of member logits.
  Eigen::MatrixXd member_logits(const Eigen::MatrixXd& inputs) const;
  void sgd_step(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& labels);
  /// Bootstrapped step: member m trains on the columns kept by its own
  /// Bernoulli(keep) mask drawn from seed. Independent members only.
  void sgd_step(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& labels, double keep,
                std::uint64_t seed);

 private:
  std::vector<RepresentationModel> members_;
  std::vector<Eigen::VectorXd> extra_heads_;
  bool shared_ = false;
};

/// Frozen serving snapshot. Which fields are required depends on kind:
/// Greedy needs model or ensemble (ensemble mean wins when both are set),
/// NeuralLinearTS needs model and bandit, EnsembleTS needs ensemble.
struct PolicySpec {
  PolicyKind kind = PolicyKind::Greedy;
  std::shared_ptr<const RepresentationModel> model;
  std::shared_ptr<const PosteriorState> bandit;
  std::shared_ptr<const Ensemble> ensemble;
  MeanSource mean_source = MeanSource::NetworkLogit;

  /// Throws std::invalid_argument when a kind-required field is missing or
  /// dimensions disagree.
  void validate() const;
};

struct Candidate {
  ContentId id = 0;
  std::vector<double> content_features;
};

struct RankRequest {
  std::vector<double> user_features;
  std::vector<Candidate> candidates;
  std::size_t k = 1;
};

struct RankedItem {
  ContentId id = 0;
  /// Link-space score sigmoid(sampled logit).
  double score = 0.0;
  double logit = 0.0;
};

/// Logit-space mean and variance per candidate under the policy.
std::vector<ScoreDistribution> score_candidates(const PolicySpec& policy, const RankRequest& req);
std::vector<ScoreDistribution> score_inputs(const PolicySpec& policy, const Eigen::MatrixXd& inputs);

/// Samples one logit per candidate from Normal(mean, variance), applies the
/// sigmoid link and returns the top k, ties broken by ascending id.
std::vector<RankedItem> rank_distributions(std::span<const ScoreDistribution> dists,
                                           std::span<const ContentId> ids, std::size_t k,
                                           RandomStream& rng);

/// Full ranking call. Greedy sorts by sigmoid of the mean; the Thompson
/// policies sample first. Empty candidates give an empty slate.
std::vector<RankedItem> rank(const PolicySpec& policy, const RankRequest& req, RandomStream& rng);

double sigmoid_link(double logit);

struct TrainConfig {
  /// Batches per run; 0 means as many as it takes to cover the log once.
  std::size_t batches_per_run = 0;
  std::size_t batch_size = 256;
  InverseStrategy strategy = InverseStrategy::PseudoInverse;
  /// Share of every batch each independent ensemble member trains on.
  double bootstrap_keep = 1.0;

  void validate() const;
};

struct TrainingResult {
  RepresentationModel model;
  PosteriorState posterior;
};

/// One training run: for each batch the current embeddings are accumulated
/// into acc and then one SGD step is taken; the posterior is finalized once
/// at the end. acc carries over to the next run.
TrainingResult training_run(RepresentationModel model, const Eigen::MatrixXd& inputs,
                            const Eigen::VectorXd& labels, CovarianceAccumulator& acc,
                            const TrainConfig& cfg);
TrainingResult training_run(RepresentationModel model, std::span<const LabeledRecord> log,
                            CovarianceAccumulator& acc, const TrainConfig& cfg);

/// Same batching for every member of an ensemble (no Bayesian head). With
/// bootstrap_keep < 1 each batch's member masks derive from seed.
void train_ensemble(Ensemble& ensemble, const Eigen::MatrixXd& inputs,
                    const Eigen::VectorXd& labels, const TrainConfig& cfg,
                    std::uint64_t seed = 0);

}  // namespace explab
