#pragma once

// Feed-forward ranking network. The last hidden layer is the embedding phi
// handed to the Bayesian head; the network's own linear head over phi gives
// the completion logit.

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "explab/bayes_linear.hpp"

namespace explab {

enum class Activation : std::uint32_t { Tanh = 0, Identity = 1 };

struct NetworkConfig {
  std::size_t user_dim = 0;
  std::size_t content_dim = 0;
  /// Hidden layer widths; the last one is the embedding dimension d.
  std::vector<std::size_t> hidden{64, 32};
  Activation activation = Activation::Tanh;
  double learning_rate = 0.05;
  std::uint64_t seed = 1;

  std::size_t input_dim() const { return user_dim + content_dim; }
  std::size_t embedding_dim() const { return hidden.empty() ? 0 : hidden.back(); }
};

struct FeatureRecord {
  std::vector<double> user;
  std::vector<double> content;
};

using LabeledRecord = std::pair<FeatureRecord, double>;

class RepresentationModel {
 public:
  struct Layer {
    Eigen::MatrixXd weights;  // out x in
    Eigen::VectorXd bias;     // out
  };

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, drawn from
  /// config.seed. Throws std::invalid_argument on an empty or zero-width shape.
  static RepresentationModel initialize(const NetworkConfig& config);

  /// Single linear layer with identity weights and an identity activation,
  /// so embed() returns the concatenated input unchanged. Head starts at zero.
  static RepresentationModel identity(std::size_t user_dim, std::size_t content_dim,
                                      double learning_rate = 0.0);

  const NetworkConfig& config() const { return config_; }
  Eigen::Index embedding_dim() const { return head_.size(); }
  const std::vector<Layer>& layers() const { return layers_; }
  const Eigen::VectorXd& head_weights() const { return head_; }
  void set_head_weights(const Eigen::VectorXd& head);

  FeatureVector embed(const FeatureRecord& rec) const;
  double predict_logit(const FeatureRecord& rec) const;

  /// Column-batched forward pass: inputs is input_dim x B, result d x B.
  Eigen::MatrixXd embed_columns(const Eigen::MatrixXd& inputs) const;
  Eigen::VectorXd logits_columns(const Eigen::MatrixXd& inputs) const;

  /// Mean binary cross-entropy over the batch plus its gradient with respect
  /// to parameters() (same ordering). grad may be null.
  double loss_and_gradient(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& labels,
                           Eigen::VectorXd* grad) const;

  /// One plain SGD step on mean binary cross-entropy.
  void sgd_step(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& labels);
  void sgd_step(std::span<const LabeledRecord> batch);

  /// Shared-bottom step: every head in `extra_heads` plus this model's own head
  /// scores the same embedding; each head descends its own loss and the
  /// trunk descends the sum. Returns the summed loss.
  double sgd_step_shared(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& labels,
                         std::vector<Eigen::VectorXd>& extra_heads);

  /// Flattened parameters: per layer weights (column-major) then bias, then head.
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& flat);
  std::size_t parameter_count() const;

  /// Throws std::invalid_argument if the record does not match the schema.
  void check_schema(const FeatureRecord& rec) const;
  /// Concatenated user ++ content input column.
  Eigen::VectorXd input_of(const FeatureRecord& rec) const;
  Eigen::MatrixXd pack_inputs(std::span<const FeatureRecord> recs) const;

  /// Binary snapshot: magic "EXRM", u32 version, u64 user_dim, u64 content_dim,
  /// u32 activation, f64 learning_rate, u64 seed, u64 layer count, u64 widths,
  /// u64 parameter count, then parameters() as f64. Little-endian.
  void write(std::ostream& out) const;
  static RepresentationModel read(std::istream& in);

 private:
  RepresentationModel() = default;

  struct Trace {
    std::vector<Eigen::MatrixXd> activations;  // activations[0] = inputs
  };
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs, Trace* trace) const;
  void backward(const Trace& trace, Eigen::MatrixXd d_embedding,
                std::vector<Layer>& grads) const;
  void apply_activation(Eigen::MatrixXd& z) const;

  NetworkConfig config_;
  std::vector<Layer> layers_;
  Eigen::VectorXd head_;
};

FeatureVector embed(const RepresentationModel& model, const FeatureRecord& rec);
double predict_logit(const RepresentationModel& model, const FeatureRecord& rec);
RepresentationModel sgd_step(RepresentationModel model, std::span<const LabeledRecord> batch);

/// Numerically stable logistic function; never returns exactly 0 or 1 for
/// finite inputs of magnitude below ~36.
double sigmoid(double logit);

}  // namespace explab
