#include "explab/ranker.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string_view>

namespace explab {

const char* to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::Greedy:
      return "greedy";
    case PolicyKind::NeuralLinearTS:
      return "nlb";
    case PolicyKind::EnsembleTS:
      return "ensemble_ts";
  }
  return "unknown";
}

std::optional<PolicyKind> parse_policy_kind(std::string_view text) {
  if (text == "greedy") return PolicyKind::Greedy;
  if (text == "nlb") return PolicyKind::NeuralLinearTS;
  if (text == "ensemble_ts") return PolicyKind::EnsembleTS;
  return std::nullopt;
}

Ensemble Ensemble::independent(const NetworkConfig& base, std::size_t members) {
  if (members == 0) throw std::invalid_argument("ensemble needs at least one member");
  Ensemble e;
  RandomStream seeds(base.seed);
  for (std::size_t i = 0; i < members; ++i) {
    NetworkConfig cfg = base;
    cfg.seed = seeds.derive(i).seed();
    e.members_.push_back(RepresentationModel::initialize(cfg));
  }
  return e;
}

Ensemble Ensemble::shared_bottom(const NetworkConfig& base, std::size_t heads) {
  if (heads == 0) throw std::invalid_argument("ensemble needs at least one head");
  Ensemble e;
  e.shared_ = true;
  e.members_.push_back(RepresentationModel::initialize(base));
  RandomStream rng(RandomStream(base.seed).derive(0x6865616473ULL).seed());
  const Eigen::Index d = e.members_.front().embedding_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t h = 1; h < heads; ++h) {
    Eigen::VectorXd w(d);
    for (Eigen::Index i = 0; i < d; ++i) w[i] = rng.uniform(-scale, scale);
    e.extra_heads_.push_back(std::move(w));
  }
  return e;
}

Ensemble Ensemble::from_models(std::vector<RepresentationModel> models) {
  if (models.empty()) throw std::invalid_argument("ensemble needs at least one member");
  Ensemble e;
  e.members_ = std::move(models);
  return e;
}

Eigen::MatrixXd Ensemble::member_logits(const Eigen::MatrixXd& inputs) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(size()), inputs.cols());
  if (shared_) {
    const Eigen::MatrixXd phi = members_.front().embed_columns(inputs);
    out.row(0) = (phi.transpose() * members_.front().head_weights()).transpose();
    for (std::size_t h = 0; h < extra_heads_.size(); ++h) {
      out.row(static_cast<Eigen::Index>(h + 1)) = (phi.transpose() * extra_heads_[h]).transpose();
    }
    return out;
  }
  for (std::size_t m = 0; m < members_.size(); ++m) {
    out.row(static_cast<Eigen::Index>(m)) = members_[m].logits_columns(inputs).transpose();
  }
  return out;
}

void Ensemble::sgd_step(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& labels) {
  if (shared_) {
    members_.front().sgd_step_shared(inputs, labels, extra_heads_);
    return;
  }
  for (auto& m : members_) m.sgd_step(inputs, labels);
}

void Ensemble::sgd_step(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& labels, double keep,
                        std::uint64_t seed) {
  if (keep >= 1.0) {
    sgd_step(inputs, labels);
    return;
  }
  if (shared_) throw std::invalid_argument("bootstrapped steps need independent members");
  const RandomStream root(seed);
  std::vector<Eigen::Index> cols;
  for (std::size_t m = 0; m < members_.size(); ++m) {
    RandomStream mask = root.derive(m);
    cols.clear();
    for (Eigen::Index c = 0; c < inputs.cols(); ++c) {
      if (mask.bernoulli(keep)) cols.push_back(c);
    }
    if (cols.empty()) continue;
    members_[m].sgd_step(inputs(Eigen::all, cols), labels(cols));
  }
}

void PolicySpec::validate() const {
  switch (kind) {
    case PolicyKind::Greedy:
      if (!model && !ensemble) throw std::invalid_argument("greedy policy needs a model");
      break;
    case PolicyKind::NeuralLinearTS:
      if (!model || !bandit) throw std::invalid_argument("NLB policy needs a model and a posterior");
      if (model->embedding_dim() != bandit->dim()) {
        throw std::invalid_argument("posterior dimension does not match embedding dimension");
      }
      break;
    case PolicyKind::EnsembleTS:
      if (!ensemble) throw std::invalid_argument("ensemble policy needs an ensemble");
      break;
  }
  if (mean_source == MeanSource::PosteriorMean && !bandit) {
    throw std::invalid_argument("posterior-mean scoring needs a posterior");
  }
}

namespace {

std::vector<ScoreDistribution> ensemble_distributions(const Ensemble& ensemble,
                                                      const Eigen::MatrixXd& inputs,
                                                      bool with_variance) {
  const Eigen::MatrixXd logits = ensemble.member_logits(inputs);
  const auto e = static_cast<double>(logits.rows());
  std::vector<ScoreDistribution> out(static_cast<std::size_t>(logits.cols()));
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    // Deviations from the first member, so identical members give exactly
    // their common logit and zero variance.
    const double shift = logits(0, c);
    const Eigen::ArrayXd dev = logits.col(c).array() - shift;
    const double mean = shift + dev.mean();
    double var = 0.0;
    if (with_variance && logits.rows() > 1) {
      var = std::max(0.0, (dev.square().sum() - dev.sum() * dev.sum() / e) / (e - 1.0));
    }
    out[static_cast<std::size_t>(c)] = {mean, var};
  }
  return out;
}

}  // namespace

std::vector<ScoreDistribution> score_inputs(const PolicySpec& policy, const Eigen::MatrixXd& inputs) {
  policy.validate();
  const auto n = static_cast<std::size_t>(inputs.cols());
  if (n == 0) return {};

  if (policy.kind == PolicyKind::EnsembleTS ||
      (policy.kind == PolicyKind::Greedy && policy.ensemble)) {
    return ensemble_distributions(*policy.ensemble, inputs, policy.kind == PolicyKind::EnsembleTS);
  }

  const RepresentationModel& model = *policy.model;
  const Eigen::MatrixXd phi = model.embed_columns(inputs);
  std::vector<ScoreDistribution> out(n);
  for (std::size_t c = 0; c < n; ++c) {
    const auto col = static_cast<Eigen::Index>(c);
    const FeatureVector f = phi.col(col);
    double mean = 0.0;
    if (policy.mean_source == MeanSource::PosteriorMean) {
      mean = policy.bandit->mean(f);
    } else {
      mean = f.dot(model.head_weights());
    }
    double var = 0.0;
    if (policy.kind == PolicyKind::NeuralLinearTS) var = policy.bandit->variance(f);
    out[c] = {mean, var};
  }
  return out;
}

namespace {

Eigen::MatrixXd pack_request(const PolicySpec& policy, const RankRequest& req) {
  const bool uses_ensemble = policy.kind == PolicyKind::EnsembleTS ||
                             (policy.kind == PolicyKind::Greedy && policy.ensemble);
  const NetworkConfig& cfg = uses_ensemble ? policy.ensemble->config() : policy.model->config();
  const std::size_t u = req.user_features.size();
  if (u != cfg.user_dim) throw std::invalid_argument("user feature schema mismatch");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(cfg.input_dim()),
                    static_cast<Eigen::Index>(req.candidates.size()));
  for (std::size_t c = 0; c < req.candidates.size(); ++c) {
    const auto& content = req.candidates[c].content_features;
    if (content.size() != cfg.content_dim) {
      throw std::invalid_argument("content feature schema mismatch");
    }
    const auto col = static_cast<Eigen::Index>(c);
    for (std::size_t i = 0; i < u; ++i) x(static_cast<Eigen::Index>(i), col) = req.user_features[i];
    for (std::size_t i = 0; i < content.size(); ++i) {
      x(static_cast<Eigen::Index>(u + i), col) = content[i];
    }
  }
  return x;
}

}  // namespace

std::vector<ScoreDistribution> score_candidates(const PolicySpec& policy, const RankRequest& req) {
  policy.validate();
  if (req.candidates.empty()) return {};
  return score_inputs(policy, pack_request(policy, req));
}

double sigmoid_link(double logit) { return sigmoid(logit); }

std::vector<RankedItem> rank_distributions(std::span<const ScoreDistribution> dists,
                                           std::span<const ContentId> ids, std::size_t k,
                                           RandomStream& rng) {
  if (dists.size() != ids.size()) throw std::invalid_argument("score/id count mismatch");
  std::vector<RankedItem> items(dists.size());
  for (std::size_t i = 0; i < dists.size(); ++i) {
    const ScoreDistribution& d = dists[i];
    const double logit = d.variance > 0.0 ? rng.normal(d.mean, std::sqrt(d.variance)) : d.mean;
    items[i] = {ids[i], sigmoid_link(logit), logit};
  }
  // Sorting on the logit keeps the order exact where the sigmoid saturates;
  // the link is strictly increasing so the order is the same.
  const auto better = [](const RankedItem& a, const RankedItem& b) {
    if (a.logit != b.logit) return a.logit > b.logit;
    return a.id < b.id;
  };
  const std::size_t top = std::min(k, items.size());
  std::partial_sort(items.begin(), items.begin() + static_cast<std::ptrdiff_t>(top), items.end(),
                    better);
  items.resize(top);
  return items;
}

std::vector<RankedItem> rank(const PolicySpec& policy, const RankRequest& req, RandomStream& rng) {
  if (req.candidates.empty()) return {};
  const std::vector<ScoreDistribution> dists = score_candidates(policy, req);
  std::vector<ContentId> ids(req.candidates.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = req.candidates[i].id;
  return rank_distributions(dists, ids, req.k, rng);
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (!(bootstrap_keep > 0.0 && bootstrap_keep <= 1.0)) {
    throw std::invalid_argument("bootstrap share must be in (0, 1]");
  }
}

namespace {

std::size_t batch_count(std::size_t n, const TrainConfig& cfg) {
  const std::size_t cover = (n + cfg.batch_size - 1) / cfg.batch_size;
  return cfg.batches_per_run == 0 ? cover : std::min(cfg.batches_per_run, cover);
}

}  // namespace

TrainingResult training_run(RepresentationModel model, const Eigen::MatrixXd& inputs,
                            const Eigen::VectorXd& labels, CovarianceAccumulator& acc,
                            const TrainConfig& cfg) {
  cfg.validate();
  if (inputs.cols() != labels.size()) throw std::invalid_argument("label count does not match log");
  if (acc.dim() != model.embedding_dim()) {
    throw std::invalid_argument("accumulator dimension does not match embedding dimension");
  }
  const auto n = static_cast<std::size_t>(inputs.cols());
  const std::size_t batches = batch_count(n, cfg);
  for (std::size_t h = 0; h < batches; ++h) {
    const std::size_t begin = h * cfg.batch_size;
    const std::size_t len = std::min(cfg.batch_size, n - begin);
    const auto b = static_cast<Eigen::Index>(begin);
    const auto l = static_cast<Eigen::Index>(len);
    const Eigen::MatrixXd x = inputs.middleCols(b, l);
    const Eigen::VectorXd y = labels.segment(b, l);
    const Eigen::MatrixXd phi = model.embed_columns(x);
    for (Eigen::Index c = 0; c < l; ++c) acc.accumulate(phi.col(c), y[c]);
    model.sgd_step(x, y);
  }
  PosteriorState posterior = finalize(acc, cfg.strategy);
  return {std::move(model), std::move(posterior)};
}

TrainingResult training_run(RepresentationModel model, std::span<const LabeledRecord> log,
                            CovarianceAccumulator& acc, const TrainConfig& cfg) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(model.config().input_dim()),
                    static_cast<Eigen::Index>(log.size()));
  Eigen::VectorXd y(static_cast<Eigen::Index>(log.size()));
  for (std::size_t i = 0; i < log.size(); ++i) {
    x.col(static_cast<Eigen::Index>(i)) = model.input_of(log[i].first);
    y[static_cast<Eigen::Index>(i)] = log[i].second;
  }
  return training_run(std::move(model), x, y, acc, cfg);
}

void train_ensemble(Ensemble& ensemble, const Eigen::MatrixXd& inputs,
                    const Eigen::VectorXd& labels, const TrainConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (inputs.cols() != labels.size()) throw std::invalid_argument("label count does not match log");
  const auto n = static_cast<std::size_t>(inputs.cols());
  const std::size_t batches = batch_count(n, cfg);
  for (std::size_t h = 0; h < batches; ++h) {
    const std::size_t begin = h * cfg.batch_size;
    const std::size_t len = std::min(cfg.batch_size, n - begin);
    const auto b = static_cast<Eigen::Index>(begin);
    const auto l = static_cast<Eigen::Index>(len);
    ensemble.sgd_step(inputs.middleCols(b, l), labels.segment(b, l), cfg.bootstrap_keep,
                      RandomStream(seed).derive(h).seed());
  }
}

}  // namespace explab
