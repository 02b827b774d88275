#ifndef BAEOED_BAE_STATS_HPP
#define BAEOED_BAE_STATS_HPP

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "baeoed/ensemble.hpp"
#include "baeoed/error.hpp"
#include "baeoed/gaussian.hpp"
#include "baeoed/problems.hpp"

namespace baeoed {

enum class SurrogateKind : std::uint32_t { zero = 0, matrix = 1, affine = 2, finite_difference = 3 };

inline std::string to_string(SurrogateKind k) {
  switch (k) {
    case SurrogateKind::zero: return "zero";
    case SurrogateKind::matrix: return "matrix";
    case SurrogateKind::affine: return "affine";
    case SurrogateKind::finite_difference: return "fd";
  }
  return "unknown";
}

/// Linear (or affine) surrogate F v + offset for the accurate forward model.
struct LinearSurrogate {
  SurrogateKind kind = SurrogateKind::zero;
  Matrix matrix;  // n_d x n_v, always materialized
  Vector offset;  // n_d
  std::string provenance;

  Eigen::Index data_dim() const { return matrix.rows(); }
  Eigen::Index param_dim() const { return matrix.cols(); }

  static LinearSurrogate zero(Eigen::Index n_d, Eigen::Index n_v) {
    return {SurrogateKind::zero, Matrix::Zero(n_d, n_v), Vector::Zero(n_d), "zero"};
  }

  static LinearSurrogate explicit_matrix(Matrix f, std::string provenance = "matrix") {
    if (!f.allFinite()) throw NonFiniteValue("surrogate matrix");
    const Eigen::Index n_d = f.rows();
    return {SurrogateKind::matrix, std::move(f), Vector::Zero(n_d), std::move(provenance)};
  }

  static LinearSurrogate affine(Matrix f, Vector offset) {
    require_dims(offset.size() == f.rows(), "affine offset length must match surrogate rows");
    if (!f.allFinite() || !offset.allFinite()) throw NonFiniteValue("affine surrogate");
    return {SurrogateKind::affine, std::move(f), std::move(offset), "affine"};
  }
};

/// Step used for coordinate i of a central-difference linearization.
inline double fd_step(double coordinate) { return 1e-5 * (1.0 + std::abs(coordinate)); }

/// Central-difference Jacobian of the problem at `point`.
inline LinearSurrogate finite_difference_surrogate(const TestProblem& problem, const Vector& point) {
  require_dims(point.size() == problem.n_v, "expansion point length must match problem");
  Matrix jac(problem.data_dim(), problem.n_v);
  parallel_for(static_cast<std::size_t>(problem.n_v), [&](std::size_t ui) {
    const auto i = static_cast<Eigen::Index>(ui);
    const double h = fd_step(point[i]);
    Vector plus = point, minus = point;
    plus[i] += h;
    minus[i] -= h;
    jac.col(i) = (problem(plus) - problem(minus)) / (2.0 * h);
  });
  LinearSurrogate s{SurrogateKind::finite_difference, std::move(jac),
                    Vector::Zero(problem.data_dim()), ""};
  s.provenance = "fd:" + problem.name + " at |point|=" + std::to_string(point.norm()) +
                 " step=1e-5*(1+|x_i|)";
  return s;
}

enum class StatsSource : std::uint32_t { sample = 0, analytic_prior = 1 };

inline std::string to_string(StatsSource s) {
  return s == StatsSource::sample ? "sample" : "analytic-prior";
}

/// Approximation-error statistics for one surrogate and the derived
/// quantities of the conditional error model.
struct TotalErrorModel {
  Vector eps_mean;     // eps_0
  Matrix C_ee;         // n_d x n_d
  Matrix C_ev;         // n_d x n_v
  Vector v_mean;       // v_0
  Matrix C_vv;         // n_v x n_v
  Matrix F_tilde;      // F + C_ev C_vv^{-1}
  Matrix gamma_total;  // Gamma_e + C_ee - C_ev C_vv^{-1} C_ve
  GaussianDensity noise;
  StatsSource stats_source = StatsSource::sample;
  bool enhanced = false;
  LinearSurrogate surrogate;

  Eigen::Index param_dim() const { return v_mean.size(); }
  Eigen::Index data_dim() const { return eps_mean.size(); }

  /// F C_vv + C_ev, which equals F_tilde C_vv without forming C_vv^{-1}.
  Matrix cross_gain() const { return surrogate.matrix * C_vv + C_ev; }

  /// Gamma_total + F_tilde C_vv F_tilde^T, expanded so C_vv^{-1} cancels:
  /// Gamma_e + C_ee + F C_vv F^T + F C_ve + C_ev F^T.
  Matrix predictive_cov() const {
    const Matrix& f = surrogate.matrix;
    const Matrix fc = f * C_vv;
    const Matrix fcev = f * C_ev.transpose();
    return symmetrized(noise.cov() + C_ee + fc * f.transpose() + fcev + fcev.transpose());
  }

  /// e_0 + eps_0 + offset + F v_0: the total-error model's data prediction at
  /// the prior mean. Data minus this is the centred innovation.
  Vector predicted_data_at_mean() const {
    return noise.mean() + eps_mean + surrogate.offset + surrogate.matrix * v_mean;
  }
};

struct StatsOptions {
  /// Unset: sample mode when q > n_v, analytic-prior otherwise.
  std::optional<StatsSource> source;
  bool enhanced = false;
};

/// Row l: accurate_data[l] - (F params[l] + offset).
inline Matrix error_samples(const Ensemble& e, const LinearSurrogate& s) {
  require_dims(s.param_dim() == e.param_dim(), "surrogate has " + std::to_string(s.param_dim()) +
                                                   " columns, ensemble has n_v=" +
                                                   std::to_string(e.param_dim()));
  require_dims(s.data_dim() == e.data_dim(), "surrogate has " + std::to_string(s.data_dim()) +
                                                 " rows, ensemble has n_d=" +
                                                 std::to_string(e.data_dim()));
  Matrix eps = e.accurate_data - e.params * s.matrix.transpose();
  eps.rowwise() -= s.offset.transpose();
  return eps;
}

inline StatsSource resolve_source(const StatsOptions& opts, const Ensemble& e) {
  if (opts.source) return *opts.source;
  return e.samples() > e.param_dim() ? StatsSource::sample : StatsSource::analytic_prior;
}

namespace detail {

inline void finish_model(TotalErrorModel& t) {
  if (t.C_ev.isZero(0.0)) {
    t.F_tilde = t.surrogate.matrix;
    t.gamma_total = symmetrized(t.noise.cov() + t.C_ee);
  } else {
    const SpdFactor cvv(t.C_vv, "C_vv");
    const Matrix gain = cvv.solve(t.C_ev.transpose());  // C_vv^{-1} C_ve
    t.F_tilde = t.surrogate.matrix + gain.transpose();
    t.gamma_total = symmetrized(t.noise.cov() + t.C_ee - t.C_ev * gain);
  }
  (void)SpdFactor(t.gamma_total, "gamma_total");
}

}  // namespace detail

/*
 * Monte Carlo error statistics with the 1/(q-1) estimators. In sample mode
 * v_0 and C_vv come from the ensemble, which makes the result exactly
 * surrogate-invariant; in analytic-prior mode they come from `prior`. The
 * cross-covariance is always centred on the sample parameter mean.
 */
inline TotalErrorModel estimate_stats(const Ensemble& e, const LinearSurrogate& s,
                                      const GaussianDensity& noise, const StatsOptions& opts = {},
                                      const GaussianDensity* prior = nullptr) {
  const Eigen::Index q = e.samples();
  if (q < 2) throw InsufficientSamples("need q >= 2, got " + std::to_string(q));
  require_dims(noise.dim() == e.data_dim(), "noise dimension must equal n_d");
  const Matrix eps = error_samples(e, s);

  TotalErrorModel t;
  t.surrogate = s;
  t.noise = noise;
  t.enhanced = opts.enhanced;
  t.stats_source = resolve_source(opts, e);

  const double norm = 1.0 / static_cast<double>(q - 1);
  t.eps_mean = eps.colwise().mean().transpose();
  const Vector sample_v_mean = e.params.colwise().mean().transpose();
  const Matrix ec = eps.rowwise() - t.eps_mean.transpose();
  const Matrix vc = e.params.rowwise() - sample_v_mean.transpose();
  t.C_ee = symmetrized(norm * (ec.transpose() * ec));
  t.C_ev = opts.enhanced ? Matrix::Zero(e.data_dim(), e.param_dim())
                         : Matrix(norm * (ec.transpose() * vc));

  if (t.stats_source == StatsSource::sample) {
    t.v_mean = sample_v_mean;
    t.C_vv = symmetrized(norm * (vc.transpose() * vc));
  } else {
    if (prior == nullptr) throw InvalidArgument("analytic-prior statistics require a prior");
    require_dims(prior->dim() == e.param_dim(), "prior dimension must equal n_v");
    t.v_mean = prior->mean();
    t.C_vv = prior->cov();
  }
  detail::finish_model(t);
  return t;
}

/// Linearized model that ignores approximation error entirely: F_tilde = F,
/// gamma_total = Gamma_e. C_vv need not be invertible, which allows fixing
/// nuisance blocks by zeroing their prior covariance.
inline TotalErrorModel surrogate_only_model(const LinearSurrogate& s, const Vector& v_mean,
                                            const Matrix& C_vv, const GaussianDensity& noise) {
  require_dims(s.param_dim() == v_mean.size() && C_vv.rows() == v_mean.size() &&
                   C_vv.cols() == v_mean.size(),
               "surrogate/prior dimension mismatch");
  require_dims(noise.dim() == s.data_dim(), "noise dimension must equal n_d");
  TotalErrorModel t;
  t.surrogate = s;
  t.noise = noise;
  t.enhanced = true;
  t.stats_source = StatsSource::analytic_prior;
  t.eps_mean = Vector::Zero(s.data_dim());
  t.C_ee = Matrix::Zero(s.data_dim(), s.data_dim());
  t.C_ev = Matrix::Zero(s.data_dim(), s.param_dim());
  t.v_mean = v_mean;
  t.C_vv = symmetrized(C_vv);
  detail::finish_model(t);
  return t;
}

inline const Matrix& corrected_operator(const TotalErrorModel& t) {
#ifndef NDEBUG
  if (!t.C_ev.isZero(0.0)) {
    const Matrix recomputed = t.surrogate.matrix + SpdFactor(t.C_vv).solve(t.C_ev.transpose()).transpose();
    const double scale = std::max(1.0, t.F_tilde.norm());
    if ((recomputed - t.F_tilde).norm() > 1e-6 * scale)
      throw NotPositiveDefinite("corrected operator cross-check failed (ill-conditioned C_vv)");
  }
#endif
  return t.F_tilde;
}

// ---------------------------------------------------------------------------
// BAES container: magic, u32 version, u64 n_v, u64 n_d, then float64 LE blocks
// eps_mean, C_ee, C_ev, v_mean, C_vv, F_tilde, gamma_total, noise mean,
// noise cov, u32 stats_source, u32 enhanced, then the surrogate
// (u32 kind, F, offset).

inline constexpr std::array<char, 4> kBaesMagic = {'B', 'A', 'E', 'S'};
inline constexpr std::uint32_t kBaesVersion = 1;

inline void save_stats(const TotalErrorModel& t, const std::filesystem::path& path) {
  auto os = detail::open_out(path);
  os.write(kBaesMagic.data(), 4);
  detail::put_le<std::uint32_t>(os, kBaesVersion);
  detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(t.param_dim()));
  detail::put_le<std::uint64_t>(os, static_cast<std::uint64_t>(t.data_dim()));
  detail::put_matrix(os, t.eps_mean.transpose());
  detail::put_matrix(os, t.C_ee);
  detail::put_matrix(os, t.C_ev);
  detail::put_matrix(os, t.v_mean.transpose());
  detail::put_matrix(os, t.C_vv);
  detail::put_matrix(os, t.F_tilde);
  detail::put_matrix(os, t.gamma_total);
  detail::put_matrix(os, t.noise.mean().transpose());
  detail::put_matrix(os, t.noise.cov());
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.stats_source));
  detail::put_le<std::uint32_t>(os, t.enhanced ? 1u : 0u);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.surrogate.kind));
  detail::put_matrix(os, t.surrogate.matrix);
  detail::put_matrix(os, t.surrogate.offset.transpose());
  if (!os.flush()) throw IoError("write failed: " + path.string());
}

inline TotalErrorModel load_stats(const std::filesystem::path& path) {
  auto is = detail::open_in(path);
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kBaesMagic) throw FormatError("bad BAES magic");
  if (detail::get_le<std::uint32_t>(is, "version") != kBaesVersion)
    throw FormatError("unsupported BAES version");
  const auto n_v = detail::get_le<std::uint64_t>(is, "n_v");
  const auto n_d = detail::get_le<std::uint64_t>(is, "n_d");
  if (n_v > (1u << 20) || n_d > (1u << 20)) throw FormatError("implausible BAES shape");
  TotalErrorModel t;
  t.eps_mean = detail::get_matrix(is, 1, n_d, "eps_mean").transpose();
  t.C_ee = detail::get_matrix(is, n_d, n_d, "C_ee");
  t.C_ev = detail::get_matrix(is, n_d, n_v, "C_ev");
  t.v_mean = detail::get_matrix(is, 1, n_v, "v_mean").transpose();
  t.C_vv = detail::get_matrix(is, n_v, n_v, "C_vv");
  t.F_tilde = detail::get_matrix(is, n_d, n_v, "F_tilde");
  t.gamma_total = detail::get_matrix(is, n_d, n_d, "gamma_total");
  const Vector noise_mean = detail::get_matrix(is, 1, n_d, "noise mean").transpose();
  const Matrix noise_cov = detail::get_matrix(is, n_d, n_d, "noise cov");
  t.noise = GaussianDensity(noise_mean, noise_cov);
  const auto source = detail::get_le<std::uint32_t>(is, "stats_source");
  if (source > 1) throw FormatError("bad stats_source tag");
  t.stats_source = static_cast<StatsSource>(source);
  t.enhanced = detail::get_le<std::uint32_t>(is, "enhanced") != 0;
  const auto kind = detail::get_le<std::uint32_t>(is, "surrogate kind");
  if (kind > 3) throw FormatError("bad surrogate kind tag");
  t.surrogate.kind = static_cast<SurrogateKind>(kind);
  t.surrogate.matrix = detail::get_matrix(is, n_d, n_v, "surrogate");
  t.surrogate.offset = detail::get_matrix(is, 1, n_d, "surrogate offset").transpose();
  t.surrogate.provenance = "baes:" + path.filename().string();
  detail::expect_eof(is, path.string());
  return t;
}

}  // namespace baeoed

#endif  // BAEOED_BAE_STATS_HPP
