#ifndef BAEOED_GAUSSIAN_HPP
#define BAEOED_GAUSSIAN_HPP

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>

#include "baeoed/error.hpp"

namespace baeoed {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Jitter escalation bounds, relative to the mean diagonal entry.
inline constexpr double kJitterStart = 1e-12;
inline constexpr double kJitterLimit = 1e-6;

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

inline Matrix symmetrized(const Eigen::Ref<const Matrix>& m) {
  return 0.5 * (m + m.transpose());
}

/*
 * Cholesky factor of a symmetric positive (semi)definite matrix.
 *
 * Factorization is attempted on the matrix as given. On failure the diagonal
 * is shifted by kJitterStart * mean(diag), escalating by 10x up to
 * kJitterLimit * mean(diag); beyond that NotPositiveDefinite is thrown. An
 * exactly-zero matrix is accepted with a zero factor (degenerate density).
 */
class SpdFactor {
 public:
  SpdFactor() = default;

  explicit SpdFactor(const Eigen::Ref<const Matrix>& a, const std::string& label = "matrix") {
    require_dims(a.rows() == a.cols(), label + " must be square");
    if (!all_finite(a)) throw NonFiniteValue(label + " has non-finite entries");
    const Eigen::Index n = a.rows();
    if (n == 0) {
      lower_ = Matrix(0, 0);
      return;
    }
    if (a.isZero(0.0)) {
      lower_ = Matrix::Zero(n, n);
      degenerate_ = true;
      return;
    }
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() == Eigen::Success) {
      lower_ = llt.matrixL();
      return;
    }
    const double scale = a.diagonal().mean();
    if (!(scale > 0.0)) throw NotPositiveDefinite(label + " has non-positive mean diagonal");
    for (double rel = kJitterStart; rel <= kJitterLimit * (1.0 + 1e-9); rel *= 10.0) {
      Matrix shifted = a;
      shifted.diagonal().array() += rel * scale;
      llt.compute(shifted);
      if (llt.info() == Eigen::Success) {
        lower_ = llt.matrixL();
        jitter_ = rel * scale;
        return;
      }
    }
    throw NotPositiveDefinite(label + " is not positive definite after jitter escalation");
  }

  const Matrix& lower() const { return lower_; }
  Eigen::Index size() const { return lower_.rows(); }
  /// Absolute diagonal shift that was applied (0 when none).
  double jitter() const { return jitter_; }
  bool degenerate() const { return degenerate_; }

  /// Solves (L L^T) x = b.
  Matrix solve(const Eigen::Ref<const Matrix>& b) const {
    require_dims(b.rows() == size(), "solve: rhs rows do not match factor");
    if (degenerate_) throw NotPositiveDefinite("solve with a zero covariance");
    Matrix x = lower_.triangularView<Eigen::Lower>().solve(b);
    lower_.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
    return x;
  }

  /// L^{-1} b
  Matrix half_solve(const Eigen::Ref<const Matrix>& b) const {
    require_dims(b.rows() == size(), "half_solve: rhs rows do not match factor");
    if (degenerate_) throw NotPositiveDefinite("solve with a zero covariance");
    return lower_.triangularView<Eigen::Lower>().solve(b);
  }

 private:
  Matrix lower_;
  double jitter_ = 0.0;
  bool degenerate_ = false;
};

/// Finite-dimensional Gaussian density. Immutable; the factor is built on
/// construction so values can be shared across threads.
class GaussianDensity {
 public:
  GaussianDensity() = default;

  GaussianDensity(Vector mean, const Eigen::Ref<const Matrix>& cov)
      : mean_(std::move(mean)) {
    require_dims(cov.rows() == cov.cols(), "covariance must be square");
    require_dims(mean_.size() == cov.rows(), "mean length " + std::to_string(mean_.size()) +
                                                 " does not match covariance dimension " +
                                                 std::to_string(cov.rows()));
    if (!mean_.allFinite()) throw NonFiniteValue("mean has non-finite entries");
    cov_ = symmetrized(cov);
    factor_ = SpdFactor(cov_, "covariance");
  }

  Eigen::Index dim() const { return mean_.size(); }
  const Vector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }
  const Matrix& chol() const { return factor_.lower(); }
  const SpdFactor& factor() const { return factor_; }
  double jitter() const { return factor_.jitter(); }

 private:
  Vector mean_;
  Matrix cov_;
  SpdFactor factor_;
};

inline GaussianDensity make_gaussian(Vector mean, const Eigen::Ref<const Matrix>& cov) {
  return GaussianDensity(std::move(mean), cov);
}

/// Standard normal draws, count x n, filled row by row from a seeded generator.
inline Matrix standard_normal(Eigen::Index count, Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix xi(count, n);
  for (Eigen::Index i = 0; i < count; ++i)
    for (Eigen::Index j = 0; j < n; ++j) xi(i, j) = normal(gen);
  return xi;
}

/// i.i.d. draws mean + L xi, one per row (count x n).
inline Matrix sample(const GaussianDensity& g, Eigen::Index count, std::uint64_t seed) {
  if (count <= 0) throw InvalidArgument("sample count must be positive");
  const Matrix xi = standard_normal(count, g.dim(), seed);
  Matrix out = xi * g.chol().transpose();
  out.rowwise() += g.mean().transpose();
  return out;
}

inline double trace_of(const Eigen::Ref<const Matrix>& mat) {
  require_dims(mat.rows() == mat.cols(), "trace of a non-square matrix");
  return mat.trace();
}

/*
 * Posterior covariance of the linear-Gaussian model y = op v + e:
 *
 *   P - P op^T (noise + op P op^T)^{-1} op P
 *
 * which equals (P^{-1} + op^T noise^{-1} op)^{-1} whenever P is invertible.
 * P itself is never inverted, so singular priors are fine.
 */
inline Matrix woodbury_posterior_cov(const Eigen::Ref<const Matrix>& prior_cov,
                                     const Eigen::Ref<const Matrix>& op,
                                     const Eigen::Ref<const Matrix>& noise_cov) {
  require_dims(prior_cov.rows() == prior_cov.cols(), "prior covariance must be square");
  require_dims(op.cols() == prior_cov.rows(), "operator columns must match prior dimension");
  require_dims(noise_cov.rows() == op.rows() && noise_cov.cols() == op.rows(),
               "noise covariance must be k x k for a k-row operator");
  if (op.rows() == 0) return prior_cov;
  const Matrix op_p = op * prior_cov;
  const Matrix inner = symmetrized(noise_cov + op_p * op.transpose());
  const SpdFactor factor(inner, "woodbury inner matrix");
  const Matrix half = factor.half_solve(op_p);
  return symmetrized(prior_cov - half.transpose() * half);
}

/// Posterior mean and covariance for y = op v + e, e ~ N(0, noise_cov),
/// given the centred innovation y - op v0. Same Woodbury route as above.
inline GaussianDensity condition_linear(const Vector& prior_mean,
                                        const Eigen::Ref<const Matrix>& prior_cov,
                                        const Eigen::Ref<const Matrix>& op,
                                        const Eigen::Ref<const Matrix>& noise_cov,
                                        const Vector& innovation) {
  require_dims(innovation.size() == op.rows(), "innovation length must match operator rows");
  require_dims(prior_mean.size() == prior_cov.rows(), "prior mean/covariance mismatch");
  if (op.rows() == 0) return GaussianDensity(prior_mean, prior_cov);
  require_dims(op.cols() == prior_cov.rows(), "operator columns must match prior dimension");
  require_dims(noise_cov.rows() == op.rows() && noise_cov.cols() == op.rows(),
               "noise covariance must be k x k for a k-row operator");
  const Matrix op_p = op * prior_cov;
  const SpdFactor factor(symmetrized(noise_cov + op_p * op.transpose()), "woodbury inner matrix");
  const Matrix half = factor.half_solve(op_p);
  const Vector mean = prior_mean + op_p.transpose() * factor.solve(innovation);
  return GaussianDensity(mean, symmetrized(prior_cov - half.transpose() * half));
}

/// Joint parameter ordering [primary; auxiliary].
struct BlockSplit {
  Eigen::Index n_primary = 0;
  Eigen::Index n_aux = 0;

  Eigen::Index total() const { return n_primary + n_aux; }

  Vector project(const Eigen::Ref<const Vector>& v) const {
    require_dims(v.size() == total(), "vector length does not match block split");
    return v.head(n_primary);
  }

  Vector embed(const Eigen::Ref<const Vector>& primary) const {
    require_dims(primary.size() == n_primary, "primary block length mismatch");
    Vector v = Vector::Zero(total());
    v.head(n_primary) = primary;
    return v;
  }
};

inline GaussianDensity marginal_block(const GaussianDensity& g, const BlockSplit& split) {
  require_dims(split.total() == g.dim(), "block split " + std::to_string(split.total()) +
                                              " does not match density dimension " +
                                              std::to_string(g.dim()));
  if (split.n_aux == 0) return g;
  return GaussianDensity(g.mean().head(split.n_primary),
                         g.cov().topLeftCorner(split.n_primary, split.n_primary));
}

}  // namespace baeoed

#endif  // BAEOED_GAUSSIAN_HPP
