#ifndef BAEOED_POSTERIOR_HPP
#define BAEOED_POSTERIOR_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "baeoed/bae_stats.hpp"
#include "baeoed/error.hpp"
#include "baeoed/gaussian.hpp"

namespace baeoed {

/// Binary sensor weights plus the number of observation times per sensor.
/// Data indices follow the time-major layout t * s + j.
class DesignVector {
 public:
  DesignVector() = default;

  DesignVector(std::vector<std::uint8_t> weights, Eigen::Index time_steps)
      : weights_(std::move(weights)), time_steps_(time_steps) {
    if (time_steps_ < 1) throw InvalidArgument("design needs at least one time step");
    for (auto w : weights_)
      if (w > 1) throw InvalidArgument("design weights must be 0 or 1");
  }

  static DesignVector empty(Eigen::Index sensors, Eigen::Index time_steps) {
    return DesignVector(std::vector<std::uint8_t>(static_cast<std::size_t>(sensors), 0), time_steps);
  }

  static DesignVector full(Eigen::Index sensors, Eigen::Index time_steps) {
    return DesignVector(std::vector<std::uint8_t>(static_cast<std::size_t>(sensors), 1), time_steps);
  }

  static DesignVector from_indices(Eigen::Index sensors, Eigen::Index time_steps,
                                   const std::vector<Eigen::Index>& chosen) {
    auto d = empty(sensors, time_steps);
    for (auto j : chosen) {
      if (j < 0 || j >= sensors) throw InvalidArgument("sensor index " + std::to_string(j) + " out of range");
      if (d.weights_[static_cast<std::size_t>(j)]) throw InvalidArgument("duplicate sensor " + std::to_string(j));
      d.weights_[static_cast<std::size_t>(j)] = 1;
    }
    return d;
  }

  Eigen::Index sensors() const { return static_cast<Eigen::Index>(weights_.size()); }
  Eigen::Index time_steps() const { return time_steps_; }
  Eigen::Index data_dim() const { return sensors() * time_steps_; }
  const std::vector<std::uint8_t>& weights() const { return weights_; }
  bool selected(Eigen::Index j) const { return weights_[static_cast<std::size_t>(j)] != 0; }

  Eigen::Index count() const {
    Eigen::Index k = 0;
    for (auto w : weights_) k += w;
    return k;
  }

  std::vector<Eigen::Index> chosen() const {
    std::vector<Eigen::Index> out;
    for (Eigen::Index j = 0; j < sensors(); ++j)
      if (selected(j)) out.push_back(j);
    return out;
  }

  /// Ascending data indices {t * s + j : w_j = 1}.
  std::vector<Eigen::Index> data_indices() const {
    std::vector<Eigen::Index> idx;
    idx.reserve(static_cast<std::size_t>(count() * time_steps_));
    for (Eigen::Index t = 0; t < time_steps_; ++t)
      for (Eigen::Index j = 0; j < sensors(); ++j)
        if (selected(j)) idx.push_back(t * sensors() + j);
    return idx;
  }

  bool operator==(const DesignVector&) const = default;

 private:
  std::vector<std::uint8_t> weights_;
  Eigen::Index time_steps_ = 1;
};

/// W v without materializing W.
inline Vector apply_design(const DesignVector& d, const Eigen::Ref<const Vector>& v) {
  require_dims(v.size() == d.data_dim(), "vector length " + std::to_string(v.size()) +
                                             " != s * n_t = " + std::to_string(d.data_dim()));
  const auto idx = d.data_indices();
  Vector out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

/// W A: selected rows.
inline Matrix apply_design_rows(const DesignVector& d, const Eigen::Ref<const Matrix>& a) {
  require_dims(a.rows() == d.data_dim(), "matrix rows " + std::to_string(a.rows()) +
                                             " != s * n_t = " + std::to_string(d.data_dim()));
  const auto idx = d.data_indices();
  Matrix out(static_cast<Eigen::Index>(idx.size()), a.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = a.row(idx[i]);
  return out;
}

/// W A W^T: selected rows and columns.
inline Matrix apply_design_both(const DesignVector& d, const Eigen::Ref<const Matrix>& a) {
  require_dims(a.rows() == d.data_dim() && a.cols() == d.data_dim(),
               "matrix must be (s * n_t) square");
  const auto idx = d.data_indices();
  const auto k = static_cast<Eigen::Index>(idx.size());
  Matrix out(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j) out(i, j) = a(idx[i], idx[j]);
  return out;
}

/// Exact linear-Gaussian posterior for data = op v + e.
inline GaussianDensity linear_gaussian_posterior(const GaussianDensity& prior, const Matrix& op,
                                                 const GaussianDensity& noise, const Vector& data) {
  require_dims(op.cols() == prior.dim(), "operator columns must match prior dimension");
  require_dims(op.rows() == noise.dim() && data.size() == op.rows(),
               "operator rows, noise and data dimensions must agree");
  const Vector innovation = data - noise.mean() - op * prior.mean();
  return condition_linear(prior.mean(), prior.cov(), op, noise.cov(), innovation);
}

/*
 * Design-dependent posterior under the total-error model. With op = W F_tilde
 * and noise W Gamma_total W^T the Woodbury route needs op C_vv = W (F C_vv +
 * C_ev) and noise + op C_vv op^T = W M W^T, both available without C_vv^{-1}.
 */
inline GaussianDensity bae_posterior(const TotalErrorModel& t, const DesignVector& d,
                                     const Vector& data) {
  require_dims(d.data_dim() == t.data_dim(), "design does not match model data dimension");
  require_dims(data.size() == d.count() * d.time_steps(),
               "data length " + std::to_string(data.size()) + " != k * n_t = " +
                   std::to_string(d.count() * d.time_steps()));
  if (d.count() == 0) return GaussianDensity(t.v_mean, t.C_vv);
  const Matrix gain = apply_design_rows(d, t.cross_gain());
  const Matrix inner = apply_design_both(d, t.predictive_cov());
  const SpdFactor factor(inner, "W M W^T");
  const Matrix half = factor.half_solve(gain);
  const Vector innovation = data - apply_design(d, t.predicted_data_at_mean());
  const Vector mean = t.v_mean + gain.transpose() * factor.solve(innovation);
  return GaussianDensity(mean, symmetrized(t.C_vv - half.transpose() * half));
}

enum class KernelMode { joint, marginal };

/// Precomputed matrices behind the trace objective
///   trace[(W M W^T)^{-1} W N W^T]
/// with M = Gamma_total + F_tilde C_vv F_tilde^T and N = G G^T, G the rows of
/// F C_vv + C_ev (joint) or its primary columns (marginal).
struct ObjectiveKernel {
  Matrix M;
  Matrix N;
  KernelMode mode = KernelMode::joint;
  std::optional<BlockSplit> split;
  double prior_trace = 0.0;
  Eigen::Index sensors = 0;
  Eigen::Index time_steps = 1;

  Eigen::Index data_dim() const { return M.rows(); }
};

inline ObjectiveKernel build_kernel(const TotalErrorModel& t, Eigen::Index sensors,
                                    Eigen::Index time_steps, KernelMode mode = KernelMode::joint,
                                    std::optional<BlockSplit> split = std::nullopt) {
  require_dims(sensors * time_steps == t.data_dim(),
               "s * n_t = " + std::to_string(sensors * time_steps) + " != n_d = " +
                   std::to_string(t.data_dim()));
  ObjectiveKernel k;
  k.mode = mode;
  k.sensors = sensors;
  k.time_steps = time_steps;
  k.M = t.predictive_cov();
  (void)SpdFactor(k.M, "kernel M");
  Matrix gain = t.cross_gain();
  if (mode == KernelMode::marginal) {
    if (!split) throw InvalidArgument("marginal kernel requires a block split");
    require_dims(split->total() == t.param_dim(), "block split does not match parameter dimension");
    k.split = split;
    gain = Matrix(gain.leftCols(split->n_primary));
    k.prior_trace = t.C_vv.topLeftCorner(split->n_primary, split->n_primary).trace();
  } else {
    k.prior_trace = t.C_vv.trace();
  }
  k.N = symmetrized(gain * gain.transpose());
  return k;
}

/// trace[K(w)] (or K_m(w)); larger is better, 0 for the empty design.
inline double criterion(const ObjectiveKernel& kernel, const DesignVector& d) {
  require_dims(d.sensors() == kernel.sensors && d.time_steps() == kernel.time_steps,
               "design does not match kernel layout");
  if (d.count() == 0) return 0.0;
  const SpdFactor factor(apply_design_both(d, kernel.M), "W M W^T");
  const Matrix left = factor.half_solve(apply_design_both(d, kernel.N));
  return factor.half_solve(left.transpose()).trace();
}

/// Equivalent A-optimal objective: trace of the (marginal) posterior covariance.
inline double posterior_trace(const ObjectiveKernel& kernel, const DesignVector& d) {
  return kernel.prior_trace - criterion(kernel, d);
}

}  // namespace baeoed

#endif  // BAEOED_POSTERIOR_HPP
