#include "explab/representation.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "explab/binary_io.hpp"
#include "explab/random.hpp"

namespace explab {

double sigmoid(double logit) {
  if (logit >= 0.0) {
    const double e = std::exp(-logit);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(logit);
  return e / (1.0 + e);
}

namespace {

// log(1 + exp(z)) without overflow.
double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

}  // namespace

RepresentationModel RepresentationModel::initialize(const NetworkConfig& config) {
  if (config.hidden.empty()) throw std::invalid_argument("network needs at least one hidden layer");
  if (config.input_dim() == 0) throw std::invalid_argument("network input dimension is zero");
  for (std::size_t w : config.hidden) {
    if (w == 0) throw std::invalid_argument("hidden layer width must be positive");
  }
  RepresentationModel m;
  m.config_ = config;
  RandomStream rng(config.seed);
  std::size_t fan_in = config.input_dim();
  for (std::size_t width : config.hidden) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Layer layer{Eigen::MatrixXd(static_cast<Eigen::Index>(width), static_cast<Eigen::Index>(fan_in)),
                Eigen::VectorXd::Zero(static_cast<Eigen::Index>(width))};
    for (Eigen::Index c = 0; c < layer.weights.cols(); ++c) {
      for (Eigen::Index r = 0; r < layer.weights.rows(); ++r) {
        layer.weights(r, c) = rng.uniform(-scale, scale);
      }
    }
    m.layers_.push_back(std::move(layer));
    fan_in = width;
  }
  const double scale = 1.0 / std::sqrt(static_cast<double>(fan_in));
  m.head_.resize(static_cast<Eigen::Index>(fan_in));
  for (Eigen::Index i = 0; i < m.head_.size(); ++i) m.head_[i] = rng.uniform(-scale, scale);
  return m;
}

RepresentationModel RepresentationModel::identity(std::size_t user_dim, std::size_t content_dim,
                                                  double learning_rate) {
  RepresentationModel m;
  const std::size_t n = user_dim + content_dim;
  if (n == 0) throw std::invalid_argument("network input dimension is zero");
  m.config_.user_dim = user_dim;
  m.config_.content_dim = content_dim;
  m.config_.hidden = {n};
  m.config_.activation = Activation::Identity;
  m.config_.learning_rate = learning_rate;
  const auto d = static_cast<Eigen::Index>(n);
  m.layers_.push_back({Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d)});
  m.head_ = Eigen::VectorXd::Zero(d);
  return m;
}

void RepresentationModel::set_head_weights(const Eigen::VectorXd& head) {
  if (head.size() != head_.size()) throw std::invalid_argument("head dimension mismatch");
  head_ = head;
}

void RepresentationModel::check_schema(const FeatureRecord& rec) const {
  if (rec.user.size() != config_.user_dim || rec.content.size() != config_.content_dim) {
    throw std::invalid_argument("feature record schema (" + std::to_string(rec.user.size()) + "+" +
                                std::to_string(rec.content.size()) + ") does not match model (" +
                                std::to_string(config_.user_dim) + "+" +
                                std::to_string(config_.content_dim) + ")");
  }
}

Eigen::VectorXd RepresentationModel::input_of(const FeatureRecord& rec) const {
  check_schema(rec);
  Eigen::VectorXd x(static_cast<Eigen::Index>(config_.input_dim()));
  Eigen::Index i = 0;
  for (double v : rec.user) x[i++] = v;
  for (double v : rec.content) x[i++] = v;
  return x;
}

Eigen::MatrixXd RepresentationModel::pack_inputs(std::span<const FeatureRecord> recs) const {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(config_.input_dim()),
                    static_cast<Eigen::Index>(recs.size()));
  for (std::size_t c = 0; c < recs.size(); ++c) {
    x.col(static_cast<Eigen::Index>(c)) = input_of(recs[c]);
  }
  return x;
}

void RepresentationModel::apply_activation(Eigen::MatrixXd& z) const {
  if (config_.activation != Activation::Tanh) return;
  // tanh through the vectorized exp; libm's scalar tanh dominated serving.
  const Eigen::ArrayXXd e = (-2.0 * z.array().abs()).exp();
  z = (z.array().sign() * (1.0 - e) / (1.0 + e)).matrix();
}

Eigen::MatrixXd RepresentationModel::forward(const Eigen::MatrixXd& inputs, Trace* trace) const {
  if (inputs.rows() != static_cast<Eigen::Index>(config_.input_dim())) {
    throw std::invalid_argument("input rows do not match network input dimension");
  }
  if (trace) {
    trace->activations.clear();
    trace->activations.push_back(inputs);
  }
  Eigen::MatrixXd a = inputs;
  for (const Layer& layer : layers_) {
    Eigen::MatrixXd z = layer.weights * a;
    z.colwise() += layer.bias;
    apply_activation(z);
    a = std::move(z);
    if (trace) trace->activations.push_back(a);
  }
  return a;
}

Eigen::MatrixXd RepresentationModel::embed_columns(const Eigen::MatrixXd& inputs) const {
  return forward(inputs, nullptr);
}

Eigen::VectorXd RepresentationModel::logits_columns(const Eigen::MatrixXd& inputs) const {
  return forward(inputs, nullptr).transpose() * head_;
}

FeatureVector RepresentationModel::embed(const FeatureRecord& rec) const {
  return forward(input_of(rec), nullptr).col(0);
}

double RepresentationModel::predict_logit(const FeatureRecord& rec) const {
  return embed(rec).dot(head_);
}

void RepresentationModel::backward(const Trace& trace, Eigen::MatrixXd d_a,
                                   std::vector<Layer>& grads) const {
  grads.resize(layers_.size());
  for (std::size_t l = layers_.size(); l-- > 0;) {
    const Eigen::MatrixXd& out = trace.activations[l + 1];
    const Eigen::MatrixXd& in = trace.activations[l];
    Eigen::MatrixXd d_z = std::move(d_a);
    if (config_.activation == Activation::Tanh) {
      d_z.array() *= (1.0 - out.array().square());
    }
    grads[l].weights = d_z * in.transpose();
    grads[l].bias = d_z.rowwise().sum();
    if (l > 0) d_a = layers_[l].weights.transpose() * d_z;
  }
}

double RepresentationModel::loss_and_gradient(const Eigen::MatrixXd& inputs,
                                              const Eigen::VectorXd& labels,
                                              Eigen::VectorXd* grad) const {
  const Eigen::Index batch = inputs.cols();
  if (batch == 0) throw std::invalid_argument("empty batch");
  if (labels.size() != batch) throw std::invalid_argument("label count does not match batch");
  Trace trace;
  const Eigen::MatrixXd phi = forward(inputs, &trace);
  const Eigen::VectorXd logits = phi.transpose() * head_;
  const double inv_b = 1.0 / static_cast<double>(batch);
  double loss = 0.0;
  Eigen::VectorXd d_logit(batch);
  for (Eigen::Index i = 0; i < batch; ++i) {
    loss += softplus(logits[i]) - labels[i] * logits[i];
    d_logit[i] = (sigmoid(logits[i]) - labels[i]) * inv_b;
  }
  loss *= inv_b;
  if (grad) {
    std::vector<Layer> grads;
    backward(trace, head_ * d_logit.transpose(), grads);
    const Eigen::VectorXd d_head = phi * d_logit;
    grad->resize(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index off = 0;
    for (const Layer& g : grads) {
      grad->segment(off, g.weights.size()) = g.weights.reshaped();
      off += g.weights.size();
      grad->segment(off, g.bias.size()) = g.bias;
      off += g.bias.size();
    }
    grad->segment(off, d_head.size()) = d_head;
  }
  return loss;
}

void RepresentationModel::sgd_step(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& labels) {
  Eigen::VectorXd grad;
  loss_and_gradient(inputs, labels, &grad);
  if (config_.learning_rate == 0.0) return;
  set_parameters(parameters() - config_.learning_rate * grad);
}

void RepresentationModel::sgd_step(std::span<const LabeledRecord> batch) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  Eigen::MatrixXd x(static_cast<Eigen::Index>(config_.input_dim()),
                    static_cast<Eigen::Index>(batch.size()));
  Eigen::VectorXd y(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t i = 0; i < batch.size(); ++i) {
    x.col(static_cast<Eigen::Index>(i)) = input_of(batch[i].first);
    y[static_cast<Eigen::Index>(i)] = batch[i].second;
  }
  sgd_step(x, y);
}

double RepresentationModel::sgd_step_shared(const Eigen::MatrixXd& inputs,
                                            const Eigen::VectorXd& labels,
                                            std::vector<Eigen::VectorXd>& extra_heads) {
  const Eigen::Index batch = inputs.cols();
  if (batch == 0) throw std::invalid_argument("empty batch");
  if (labels.size() != batch) throw std::invalid_argument("label count does not match batch");
  for (const auto& h : extra_heads) {
    if (h.size() != head_.size()) throw std::invalid_argument("head dimension mismatch");
  }
  Trace trace;
  const Eigen::MatrixXd phi = forward(inputs, &trace);
  const double inv_b = 1.0 / static_cast<double>(batch);
  const double lr = config_.learning_rate;

  Eigen::MatrixXd d_phi = Eigen::MatrixXd::Zero(phi.rows(), phi.cols());
  double loss = 0.0;
  auto step_head = [&](Eigen::VectorXd& head) {
    const Eigen::VectorXd logits = phi.transpose() * head;
    Eigen::VectorXd d_logit(batch);
    for (Eigen::Index i = 0; i < batch; ++i) {
      loss += (softplus(logits[i]) - labels[i] * logits[i]) * inv_b;
      d_logit[i] = (sigmoid(logits[i]) - labels[i]) * inv_b;
    }
    d_phi.noalias() += head * d_logit.transpose();
    head -= lr * (phi * d_logit);
  };
  step_head(head_);
  for (auto& h : extra_heads) step_head(h);

  std::vector<Layer> grads;
  backward(trace, std::move(d_phi), grads);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].weights -= lr * grads[l].weights;
    layers_[l].bias -= lr * grads[l].bias;
  }
  return loss;
}

std::size_t RepresentationModel::parameter_count() const {
  std::size_t n = static_cast<std::size_t>(head_.size());
  for (const Layer& l : layers_) n += static_cast<std::size_t>(l.weights.size() + l.bias.size());
  return n;
}

Eigen::VectorXd RepresentationModel::parameters() const {
  Eigen::VectorXd flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index off = 0;
  for (const Layer& l : layers_) {
    flat.segment(off, l.weights.size()) = l.weights.reshaped();
    off += l.weights.size();
    flat.segment(off, l.bias.size()) = l.bias;
    off += l.bias.size();
  }
  flat.segment(off, head_.size()) = head_;
  return flat;
}

void RepresentationModel::set_parameters(const Eigen::VectorXd& flat) {
  if (flat.size() != static_cast<Eigen::Index>(parameter_count())) {
    throw std::invalid_argument("parameter vector has wrong length");
  }
  Eigen::Index off = 0;
  for (Layer& l : layers_) {
    l.weights.reshaped() = flat.segment(off, l.weights.size());
    off += l.weights.size();
    l.bias = flat.segment(off, l.bias.size());
    off += l.bias.size();
  }
  head_ = flat.segment(off, head_.size());
}

void RepresentationModel::write(std::ostream& out) const {
  io::write_magic(out, "EXRM");
  io::write_u32(out, 1);
  io::write_u64(out, config_.user_dim);
  io::write_u64(out, config_.content_dim);
  io::write_u32(out, static_cast<std::uint32_t>(config_.activation));
  io::write_f64(out, config_.learning_rate);
  io::write_u64(out, config_.seed);
  io::write_u64(out, config_.hidden.size());
  for (std::size_t w : config_.hidden) io::write_u64(out, w);
  const Eigen::VectorXd flat = parameters();
  io::write_u64(out, static_cast<std::uint64_t>(flat.size()));
  for (Eigen::Index i = 0; i < flat.size(); ++i) io::write_f64(out, flat[i]);
}

RepresentationModel RepresentationModel::read(std::istream& in) {
  io::expect_magic(in, "EXRM");
  if (io::read_u32(in) != 1) throw std::runtime_error("unsupported model snapshot version");
  NetworkConfig cfg;
  cfg.user_dim = io::read_u64(in);
  cfg.content_dim = io::read_u64(in);
  const std::uint32_t act = io::read_u32(in);
  if (act > 1) throw std::runtime_error("unknown activation in model snapshot");
  cfg.activation = static_cast<Activation>(act);
  cfg.learning_rate = io::read_f64(in);
  cfg.seed = io::read_u64(in);
  const std::uint64_t n_layers = io::read_u64(in);
  if (n_layers == 0 || n_layers > 64) throw std::runtime_error("implausible layer count");
  cfg.hidden.clear();
  for (std::uint64_t i = 0; i < n_layers; ++i) cfg.hidden.push_back(io::read_u64(in));
  RepresentationModel m = initialize(cfg);
  m.config_.activation = cfg.activation;
  const std::uint64_t n = io::read_u64(in);
  if (n != m.parameter_count()) throw std::runtime_error("model snapshot parameter count mismatch");
  Eigen::VectorXd flat(static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] = io::read_f64(in);
  m.set_parameters(flat);
  return m;
}

FeatureVector embed(const RepresentationModel& model, const FeatureRecord& rec) {
  return model.embed(rec);
}

double predict_logit(const RepresentationModel& model, const FeatureRecord& rec) {
  return model.predict_logit(rec);
}

RepresentationModel sgd_step(RepresentationModel model, std::span<const LabeledRecord> batch) {
  model.sgd_step(batch);
  return model;
}

}  // namespace explab
