#include "explab/bayes_linear.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "explab/binary_io.hpp"

namespace explab {

const char* to_string(InverseStrategy s) {
  switch (s) {
    case InverseStrategy::PseudoInverse:
      return "pinv";
    case InverseStrategy::Cholesky:
      return "cholesky";
  }
  return "unknown";
}

CovarianceAccumulator::CovarianceAccumulator(Eigen::Index dim, double epsilon, double sigma_sq)
    : epsilon_(epsilon), sigma_sq_(sigma_sq) {
  if (dim <= 0) throw std::invalid_argument("accumulator dimension must be positive");
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw std::invalid_argument("epsilon must be positive and finite");
  }
  if (!(sigma_sq > 0.0) || !std::isfinite(sigma_sq)) {
    throw std::invalid_argument("sigma_sq must be positive and finite");
  }
  gram_ = Eigen::MatrixXd::Identity(dim, dim) * epsilon;
  moment_ = Eigen::VectorXd::Zero(dim);
}

void CovarianceAccumulator::accumulate(const FeatureVector& phi, double reward) {
  const Eigen::Index d = dim();
  if (phi.size() != d) {
    throw std::invalid_argument("feature length " + std::to_string(phi.size()) +
                                " does not match accumulator dimension " + std::to_string(d));
  }
  if (!std::isfinite(reward) || !phi.allFinite()) {
    throw std::invalid_argument("non-finite feature or reward");
  }
  for (Eigen::Index j = 0; j < d; ++j) {
    const double pj = phi[j];
    gram_(j, j) += pj * pj;
    for (Eigen::Index i = j + 1; i < d; ++i) {
      const double v = phi[i] * pj;
      gram_(i, j) += v;
      gram_(j, i) += v;
    }
  }
  moment_.noalias() += phi * reward;
  ++count_;
}

CovarianceAccumulator CovarianceAccumulator::merge(const CovarianceAccumulator& a,
                                                   const CovarianceAccumulator& b) {
  if (a.dim() != b.dim() || a.epsilon_ != b.epsilon_ || a.sigma_sq_ != b.sigma_sq_) {
    throw std::invalid_argument("cannot merge accumulators with different configuration");
  }
  CovarianceAccumulator out(a.dim(), a.epsilon_, a.sigma_sq_);
  // (a - eps I) + (b - eps I) + eps I, evaluated so that the diagonal prior
  // is added exactly once and off-diagonals are a plain sum.
  out.gram_ = a.gram_ + b.gram_;
  out.gram_.diagonal().array() -= a.epsilon_;
  out.moment_ = a.moment_ + b.moment_;
  out.count_ = a.count_ + b.count_;
  return out;
}

CovarianceAccumulator accumulate(CovarianceAccumulator acc, const FeatureVector& phi,
                                 double reward) {
  acc.accumulate(phi, reward);
  return acc;
}

CovarianceAccumulator merge(const CovarianceAccumulator& a, const CovarianceAccumulator& b) {
  return CovarianceAccumulator::merge(a, b);
}

namespace linalg {

Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& a) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("cholesky of non-square matrix");
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double diag = a(j, j);
    for (Eigen::Index k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > 0.0) || !std::isfinite(diag)) {
      throw std::runtime_error("cholesky: matrix is not positive definite (pivot " +
                               std::to_string(j) + ")");
    }
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (Eigen::Index k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

Eigen::VectorXd forward_substitute(const Eigen::MatrixXd& lower, const Eigen::VectorXd& b) {
  const Eigen::Index n = lower.rows();
  Eigen::VectorXd x(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double s = b[i];
    for (Eigen::Index k = 0; k < i; ++k) s -= lower(i, k) * x[k];
    x[i] = s / lower(i, i);
  }
  return x;
}

Eigen::VectorXd backward_substitute_transposed(const Eigen::MatrixXd& lower,
                                               const Eigen::VectorXd& b) {
  const Eigen::Index n = lower.rows();
  Eigen::VectorXd x(n);
  for (Eigen::Index i = n - 1; i >= 0; --i) {
    double s = b[i];
    for (Eigen::Index k = i + 1; k < n; ++k) s -= lower(k, i) * x[k];
    x[i] = s / lower(i, i);
  }
  return x;
}

Eigen::MatrixXd symmetric_pinv(const Eigen::MatrixXd& a, double rel_tol) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a);
  if (eig.info() != Eigen::Success) {
    throw std::runtime_error("pseudo-inverse: eigendecomposition failed");
  }
  const Eigen::VectorXd& values = eig.eigenvalues();
  const double largest = values.cwiseAbs().maxCoeff();
  const double cutoff = rel_tol * largest;
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(values.size());
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values[i] > cutoff) inv[i] = 1.0 / values[i];
  }
  const Eigen::MatrixXd& v = eig.eigenvectors();
  Eigen::MatrixXd p = v * inv.asDiagonal() * v.transpose();
  return 0.5 * (p + p.transpose());
}

}  // namespace linalg

PosteriorState PosteriorState::finalize(const CovarianceAccumulator& acc,
                                        InverseStrategy strategy) {
  PosteriorState s;
  s.strategy_ = strategy;
  s.sigma_sq_ = acc.sigma_sq();
  s.epsilon_ = acc.epsilon();
  s.source_count_ = acc.count();
  switch (strategy) {
    case InverseStrategy::PseudoInverse:
      s.precision_ = linalg::symmetric_pinv(acc.gram(), kPinvRelativeTolerance);
      s.beta_hat_ = s.precision_ * acc.moment();
      break;
    case InverseStrategy::Cholesky: {
      s.chol_ = linalg::cholesky_lower(acc.gram());
      const Eigen::VectorXd y = linalg::forward_substitute(s.chol_, acc.moment());
      s.beta_hat_ = linalg::backward_substitute_transposed(s.chol_, y);
      break;
    }
  }
  if (!s.beta_hat_.allFinite()) throw std::runtime_error("posterior mean is not finite");
  return s;
}

double PosteriorState::mean(const FeatureVector& phi) const {
  if (phi.size() != dim()) throw std::invalid_argument("feature length does not match posterior");
  return phi.dot(beta_hat_);
}

double PosteriorState::variance(const FeatureVector& phi) const {
  if (phi.size() != dim()) throw std::invalid_argument("feature length does not match posterior");
  double quad = 0.0;
  if (strategy_ == InverseStrategy::Cholesky) {
    quad = linalg::forward_substitute(chol_, phi).squaredNorm();
  } else {
    quad = phi.dot(precision_ * phi);
  }
  return sigma_sq_ * std::max(quad, 0.0);
}

ScoreDistribution PosteriorState::stats(const FeatureVector& phi) const {
  return {mean(phi), variance(phi)};
}

double PosteriorState::sample(const FeatureVector& phi, RandomStream& rng) const {
  const ScoreDistribution d = stats(phi);
  if (d.variance == 0.0) return d.mean;
  return rng.normal(d.mean, std::sqrt(d.variance));
}

void PosteriorState::write(std::ostream& out) const {
  io::write_magic(out, "EXPS");
  io::write_u32(out, 1);
  io::write_u32(out, static_cast<std::uint32_t>(strategy_));
  const auto d = static_cast<std::uint64_t>(dim());
  io::write_u64(out, d);
  io::write_f64(out, sigma_sq_);
  io::write_f64(out, epsilon_);
  io::write_u64(out, source_count_);
  for (Eigen::Index i = 0; i < dim(); ++i) io::write_f64(out, beta_hat_[i]);
  const Eigen::MatrixXd& m = strategy_ == InverseStrategy::Cholesky ? chol_ : precision_;
  for (Eigen::Index r = 0; r < dim(); ++r) {
    for (Eigen::Index c = 0; c < dim(); ++c) io::write_f64(out, m(r, c));
  }
}

PosteriorState PosteriorState::read(std::istream& in) {
  io::expect_magic(in, "EXPS");
  if (io::read_u32(in) != 1) throw std::runtime_error("unsupported posterior snapshot version");
  PosteriorState s;
  const std::uint32_t strategy = io::read_u32(in);
  if (strategy > 1) throw std::runtime_error("unknown inverse strategy in snapshot");
  s.strategy_ = static_cast<InverseStrategy>(strategy);
  const auto d = static_cast<Eigen::Index>(io::read_u64(in));
  if (d <= 0 || d > 4096) throw std::runtime_error("implausible snapshot dimension");
  s.sigma_sq_ = io::read_f64(in);
  s.epsilon_ = io::read_f64(in);
  s.source_count_ = io::read_u64(in);
  s.beta_hat_.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) s.beta_hat_[i] = io::read_f64(in);
  Eigen::MatrixXd m(d, d);
  for (Eigen::Index r = 0; r < d; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) m(r, c) = io::read_f64(in);
  }
  if (s.strategy_ == InverseStrategy::Cholesky) {
    s.chol_ = std::move(m);
  } else {
    s.precision_ = std::move(m);
  }
  return s;
}

PosteriorState finalize(const CovarianceAccumulator& acc, InverseStrategy strategy) {
  return PosteriorState::finalize(acc, strategy);
}

ScoreDistribution posterior_stats(const PosteriorState& state, const FeatureVector& phi) {
  return state.stats(phi);
}

double sample_score(const PosteriorState& state, const FeatureVector& phi, RandomStream& rng) {
  return state.sample(phi, rng);
}

}  // namespace explab
