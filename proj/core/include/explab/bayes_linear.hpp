#pragma once

// Streaming Bayesian linear regression over last-layer embeddings.
//
// Training accumulates the ridge Gram matrix and reward moment one sample at
// a time. The expensive factorization happens once per training run in
// finalize(); serving only evaluates quadratic forms against the frozen
// PosteriorState.

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>

#include "explab/random.hpp"

namespace explab {

using FeatureVector = Eigen::VectorXd;

enum class InverseStrategy : std::uint32_t { PseudoInverse = 0, Cholesky = 1 };

const char* to_string(InverseStrategy s);

struct ScoreDistribution {
  double mean = 0.0;
  double variance = 0.0;
};

/// Sufficient statistics of the ridge posterior:
///   gram   = epsilon * I + sum phi phi^T
///   moment = sum phi * reward
class CovarianceAccumulator {
 public:
  static constexpr double kDefaultEpsilon = 1e-6;
  static constexpr double kDefaultSigmaSq = 10.0;

  explicit CovarianceAccumulator(Eigen::Index dim, double epsilon = kDefaultEpsilon,
                                 double sigma_sq = kDefaultSigmaSq);

  /// Rank-one update. Both triangles of gram receive the same product, so
  /// gram stays bitwise symmetric. Throws std::invalid_argument on dimension
  /// mismatch or non-finite input.
  void accumulate(const FeatureVector& phi, double reward);

  /// Combines two accumulators built on disjoint data. The ridge prior is
  /// counted once. Throws std::invalid_argument if dim/epsilon/sigma_sq differ.
  static CovarianceAccumulator merge(const CovarianceAccumulator& a,
                                     const CovarianceAccumulator& b);

  Eigen::Index dim() const { return gram_.rows(); }
  double epsilon() const { return epsilon_; }
  double sigma_sq() const { return sigma_sq_; }
  const Eigen::MatrixXd& gram() const { return gram_; }
  const Eigen::VectorXd& moment() const { return moment_; }
  std::uint64_t count() const { return count_; }

 private:
  double epsilon_;
  double sigma_sq_;
  Eigen::MatrixXd gram_;
  Eigen::VectorXd moment_;
  std::uint64_t count_ = 0;
};

/// Functional form of CovarianceAccumulator::accumulate.
CovarianceAccumulator accumulate(CovarianceAccumulator acc, const FeatureVector& phi,
                                 double reward);
CovarianceAccumulator merge(const CovarianceAccumulator& a, const CovarianceAccumulator& b);

/// Frozen posterior snapshot used for serving. Immutable after construction;
/// concurrent readers are safe.
class PosteriorState {
 public:
  /// Relative singular-value cutoff of the pseudo-inverse path.
  static constexpr double kPinvRelativeTolerance = 1e-10;

  static PosteriorState finalize(const CovarianceAccumulator& acc, InverseStrategy strategy);

  /// Mean phi^T beta_hat and variance sigma^2 phi^T gram^-1 phi. The
  /// Cholesky path solves L z = phi by forward substitution (O(d^2)).
  ScoreDistribution stats(const FeatureVector& phi) const;
  double variance(const FeatureVector& phi) const;
  double mean(const FeatureVector& phi) const;

  /// Draw from Normal(mean, variance).
  double sample(const FeatureVector& phi, RandomStream& rng) const;

  Eigen::Index dim() const { return beta_hat_.size(); }
  InverseStrategy strategy() const { return strategy_; }
  double sigma_sq() const { return sigma_sq_; }
  double epsilon() const { return epsilon_; }
  std::uint64_t source_count() const { return source_count_; }
  const Eigen::VectorXd& beta_hat() const { return beta_hat_; }
  /// Pseudo-inverse of gram; empty under the Cholesky strategy.
  const Eigen::MatrixXd& precision() const { return precision_; }
  /// Lower-triangular L with gram = L L^T; empty under the pseudo-inverse strategy.
  const Eigen::MatrixXd& chol_factor() const { return chol_; }

  /// Binary snapshot: magic "EXPS", u32 version, u32 strategy, u64 d,
  /// f64 sigma_sq, f64 epsilon, u64 source_count, d f64 beta_hat, then d*d
  /// f64 of the stored matrix in row-major order. Everything little-endian.
  void write(std::ostream& out) const;
  static PosteriorState read(std::istream& in);

 private:
  PosteriorState() = default;

  Eigen::VectorXd beta_hat_;
  Eigen::MatrixXd precision_;
  Eigen::MatrixXd chol_;
  double sigma_sq_ = CovarianceAccumulator::kDefaultSigmaSq;
  double epsilon_ = CovarianceAccumulator::kDefaultEpsilon;
  InverseStrategy strategy_ = InverseStrategy::PseudoInverse;
  std::uint64_t source_count_ = 0;
};

PosteriorState finalize(const CovarianceAccumulator& acc, InverseStrategy strategy);
ScoreDistribution posterior_stats(const PosteriorState& state, const FeatureVector& phi);
double sample_score(const PosteriorState& state, const FeatureVector& phi, RandomStream& rng);

namespace linalg {

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
/// Throws std::runtime_error if a pivot is not strictly positive.
Eigen::MatrixXd cholesky_lower(const Eigen::MatrixXd& a);
/// Solves L x = b for lower-triangular L.
Eigen::VectorXd forward_substitute(const Eigen::MatrixXd& lower, const Eigen::VectorXd& b);
/// Solves L^T x = b for lower-triangular L.
Eigen::VectorXd backward_substitute_transposed(const Eigen::MatrixXd& lower,
                                               const Eigen::VectorXd& b);
/// Moore-Penrose pseudo-inverse of a symmetric positive semidefinite matrix;
/// eigenvalues at or below rel_tol * max eigenvalue are treated as zero.
Eigen::MatrixXd symmetric_pinv(const Eigen::MatrixXd& a, double rel_tol);

}  // namespace linalg

}  // namespace explab
