#ifndef BAEOED_PROBLEMS_HPP
#define BAEOED_PROBLEMS_HPP

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "baeoed/config.hpp"
#include "baeoed/ensemble.hpp"
#include "baeoed/error.hpp"
#include "baeoed/gaussian.hpp"
#include "baeoed/parallel.hpp"

namespace baeoed {

/// Prior hyperparameters: c1 is the squared-exponential length scale of the
/// level-set field, c2 and c3 define the boundary-flux operator c2 - c3 d^2/dx^2.
struct PriorHyper {
  double c1 = 1.0 / 8.0;
  double c2 = 2.0;
  double c3 = 8e-2;
};

/// Built-in accurate forward model A(v) with its default prior.
struct TestProblem {
  std::string name;
  Eigen::Index n_v = 0;
  Eigen::Index sensors = 0;
  Eigen::Index time_steps = 1;
  std::function<Vector(const Vector&)> forward;
  std::function<GaussianDensity(const PriorHyper&)> prior_builder;
  std::optional<BlockSplit> split;

  Eigen::Index data_dim() const { return sensors * time_steps; }

  Vector operator()(const Vector& v) const {
    require_dims(v.size() == n_v, name + ": parameter length " + std::to_string(v.size()) +
                                      " != " + std::to_string(n_v));
    return forward(v);
  }
};

inline GaussianDensity build_priors(const TestProblem& problem, const PriorHyper& hyper = {}) {
  if (!(hyper.c1 > 0.0 && hyper.c2 > 0.0 && hyper.c3 > 0.0))
    throw InvalidArgument("prior hyperparameters must be positive");
  return problem.prior_builder(hyper);
}

inline GaussianDensity standard_prior(Eigen::Index n) {
  return GaussianDensity(Vector::Zero(n), Matrix::Identity(n, n));
}

namespace detail {
inline void check_layout(Eigen::Index rows, Eigen::Index s, Eigen::Index n_t) {
  if (s <= 0 || n_t <= 0) throw InvalidArgument("sensor and time-step counts must be positive");
  require_dims(rows == s * n_t, "operator rows " + std::to_string(rows) + " != s * n_t");
}
}  // namespace detail

/// forward(v) = F_true v. Default layout is one time step per sensor row.
inline TestProblem linear_problem(const Matrix& f_true, Eigen::Index sensors = 0,
                                  Eigen::Index time_steps = 1) {
  if (!f_true.allFinite()) throw NonFiniteValue("linear problem operator");
  if (sensors == 0) sensors = f_true.rows() / std::max<Eigen::Index>(time_steps, 1);
  detail::check_layout(f_true.rows(), sensors, time_steps);
  TestProblem p;
  p.name = "linear";
  p.n_v = f_true.cols();
  p.sensors = sensors;
  p.time_steps = time_steps;
  p.forward = [f_true](const Vector& v) -> Vector { return f_true * v; };
  const Eigen::Index n = p.n_v;
  p.prior_builder = [n](const PriorHyper&) { return standard_prior(n); };
  return p;
}

/// forward(v) = exp(alpha F v) - 1, entrywise.
inline TestProblem exp_problem(const Matrix& f, double alpha, Eigen::Index sensors = 0,
                               Eigen::Index time_steps = 1) {
  if (!f.allFinite() || !std::isfinite(alpha)) throw NonFiniteValue("exp problem inputs");
  if (sensors == 0) sensors = f.rows() / std::max<Eigen::Index>(time_steps, 1);
  detail::check_layout(f.rows(), sensors, time_steps);
  TestProblem p;
  p.name = "exp";
  p.n_v = f.cols();
  p.sensors = sensors;
  p.time_steps = time_steps;
  p.forward = [f, alpha](const Vector& v) -> Vector {
    return (alpha * (f * v)).array().exp() - 1.0;
  };
  const Eigen::Index n = p.n_v;
  p.prior_builder = [n](const PriorHyper&) { return standard_prior(n); };
  return p;
}

// ---------------------------------------------------------------------------
// Level-set parametrization

/// Piecewise-constant map: cell j is (l_{j-1}, l_j] with l_0 = -inf, l_L = +inf,
/// so a value exactly on a threshold belongs to the lower cell.
struct LevelSetMap {
  std::vector<double> thresholds{0.0};
  std::vector<double> values{0.0, 1.0};

  void check() const {
    if (values.size() != thresholds.size() + 1)
      throw InvalidArgument("level-set map needs one more value than thresholds");
    if (!std::is_sorted(thresholds.begin(), thresholds.end()))
      throw InvalidArgument("level-set thresholds must be sorted");
  }

  double operator()(double psi) const {
    const auto it = std::lower_bound(thresholds.begin(), thresholds.end(), psi);
    return values[static_cast<std::size_t>(it - thresholds.begin())];
  }
};

inline Vector level_set_apply(const LevelSetMap& ls, const Eigen::Ref<const Vector>& psi) {
  ls.check();
  Vector out(psi.size());
  for (Eigen::Index i = 0; i < psi.size(); ++i) out[i] = ls(psi[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Desk-scale Darcy flow
//
// Cell-centred finite volumes on an n x n grid of the unit square, h = 1/n.
// Cell (i, j) has centre ((i + 1/2) h, (j + 1/2) h) and index j * n + i.
// Boundary conditions: flux exp(m_i) through top face i, flux -1 through the
// bottom, u = 0 on the left (ghost at distance h/2), no flux on the right.
// Face permeabilities are harmonic means of the two cell values.

/// Evenly spaced sensor points over the closed unit square, x-fastest.
struct SensorGrid {
  Eigen::Index nx = 8;
  Eigen::Index ny = 8;
  Eigen::Index count() const { return nx * ny; }
  double x(Eigen::Index a) const { return nx == 1 ? 0.5 : static_cast<double>(a) / (nx - 1); }
  double y(Eigen::Index b) const { return ny == 1 ? 0.5 : static_cast<double>(b) / (ny - 1); }
};

struct DarcySolution {
  Eigen::Index n = 0;
  Vector pressure;        // per cell
  Vector permeability;    // exp(Phi(psi)) per cell
  Vector top_flux;        // exp(m) per top face
  double relative_residual = 0.0;
};

/// Inflow integrated over each boundary side (negative for outflow).
struct DarcyFluxes {
  double top = 0.0, bottom = 0.0, left = 0.0, right = 0.0;
  double net() const { return top + bottom + left + right; }
};

inline DarcySolution solve_darcy(Eigen::Index n, const Eigen::Ref<const Vector>& log_flux,
                                 const Eigen::Ref<const Vector>& psi, const LevelSetMap& ls = {}) {
  require_dims(log_flux.size() == n, "boundary flux length must equal grid_n");
  require_dims(psi.size() == n * n, "level-set field length must equal grid_n^2");
  const double h = 1.0 / static_cast<double>(n);
  DarcySolution sol;
  sol.n = n;
  sol.permeability = level_set_apply(ls, psi).array().exp();
  sol.top_flux = log_flux.array().exp();
  if (!sol.top_flux.allFinite()) throw SolverFailure("boundary flux overflow");
  const Vector& k = sol.permeability;
  auto idx = [n](Eigen::Index i, Eigen::Index j) { return j * n + i; };
  auto face = [&](Eigen::Index p, Eigen::Index q) { return 2.0 * k[p] * k[q] / (k[p] + k[q]); };

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(5 * n * n));
  Vector rhs = Vector::Zero(n * n);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Index p = idx(i, j);
      double diag = 0.0;
      auto couple = [&](Eigen::Index q) {
        const double t = face(p, q);
        diag += t;
        trips.emplace_back(p, q, -t);
      };
      if (i > 0) couple(idx(i - 1, j));
      if (i + 1 < n) couple(idx(i + 1, j));
      if (j > 0) couple(idx(i, j - 1));
      if (j + 1 < n) couple(idx(i, j + 1));
      if (i == 0) diag += 2.0 * k[p];
      if (j == n - 1) rhs[p] += sol.top_flux[i] * h;
      if (j == 0) rhs[p] += -1.0 * h;
      trips.emplace_back(p, p, diag);
    }
  }
  Eigen::SparseMatrix<double> a(n * n, n * n);
  a.setFromTriplets(trips.begin(), trips.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(a);
  if (ldlt.info() != Eigen::Success) throw SolverFailure("Darcy system factorization failed");
  sol.pressure = ldlt.solve(rhs);
  if (ldlt.info() != Eigen::Success || !sol.pressure.allFinite())
    throw SolverFailure("Darcy solve failed");
  sol.relative_residual = (a * sol.pressure - rhs).norm() / std::max(rhs.norm(), 1e-300);
  if (sol.relative_residual > 1e-10)
    throw SolverFailure("Darcy residual " + std::to_string(sol.relative_residual) + " above 1e-10");
  return sol;
}

inline DarcyFluxes boundary_fluxes(const DarcySolution& sol) {
  const Eigen::Index n = sol.n;
  const double h = 1.0 / static_cast<double>(n);
  DarcyFluxes f;
  for (Eigen::Index i = 0; i < n; ++i) {
    f.top += sol.top_flux[i] * h;
    f.bottom += -1.0 * h;
  }
  for (Eigen::Index j = 0; j < n; ++j) {
    const Eigen::Index p = j * n;
    f.left += -2.0 * sol.permeability[p] * sol.pressure[p];
  }
  return f;
}

/*
 * Pressure at an arbitrary point by bilinear interpolation over the cell
 * centres extended with boundary values: 0 on the left, zero-gradient on the
 * right, and one-sided flux extrapolation on the top and bottom.
 */
inline double pressure_at(const DarcySolution& sol, double x, double y) {
  const Eigen::Index n = sol.n;
  const double h = 1.0 / static_cast<double>(n);
  const Eigen::Index m = n + 2;
  auto coord = [&](Eigen::Index a) {
    if (a == 0) return 0.0;
    if (a == m - 1) return 1.0;
    return (static_cast<double>(a) - 0.5) * h;
  };
  // Extended value at extended index (a, b); a, b in [0, n + 1].
  auto value = [&](Eigen::Index a, Eigen::Index b) -> double {
    if (a == 0) return 0.0;
    const Eigen::Index i = std::min(a, n) - 1;
    const Eigen::Index j = std::clamp<Eigen::Index>(b, 1, n) - 1;
    const Eigen::Index p = j * n + i;
    double u = sol.pressure[p];
    if (b == 0) u -= 0.5 * h / sol.permeability[p];
    if (b == m - 1) u += 0.5 * h * sol.top_flux[i] / sol.permeability[p];
    return u;
  };
  x = std::clamp(x, 0.0, 1.0);
  y = std::clamp(y, 0.0, 1.0);
  auto locate = [&](double t) {
    Eigen::Index a = 0;
    while (a + 2 < m && coord(a + 1) <= t) ++a;
    return a;
  };
  const Eigen::Index a = locate(x), b = locate(y);
  const double tx = (x - coord(a)) / (coord(a + 1) - coord(a));
  const double ty = (y - coord(b)) / (coord(b + 1) - coord(b));
  if (tx == 0.0 && ty == 0.0) return value(a, b);
  return (1 - tx) * (1 - ty) * value(a, b) + tx * (1 - ty) * value(a + 1, b) +
         (1 - tx) * ty * value(a, b + 1) + tx * ty * value(a + 1, b + 1);
}

inline Vector sample_sensors(const DarcySolution& sol, const SensorGrid& grid) {
  Vector out(grid.count());
  for (Eigen::Index b = 0; b < grid.ny; ++b)
    for (Eigen::Index a = 0; a < grid.nx; ++a) out[b * grid.nx + a] = pressure_at(sol, grid.x(a), grid.y(b));
  return out;
}

inline Matrix squared_exponential_kernel(const std::vector<std::array<double, 2>>& points,
                                         double length_scale) {
  const auto n = static_cast<Eigen::Index>(points.size());
  Matrix k(n, n);
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) {
      const double dx = points[a][0] - points[b][0];
      const double dy = points[a][1] - points[b][1];
      k(a, b) = std::exp(-(dx * dx + dy * dy) / (length_scale * length_scale));
    }
  return k;
}

/// Covariance of point values of a field with covariance operator
/// (c2 - c3 d^2/dx^2)^{-2} on (0, 1), homogeneous Dirichlet ends, sampled at
/// n face midpoints: L^{-2} / h with L the 3-point discretization.
inline Matrix flux_prior_covariance(Eigen::Index n, double c2, double c3) {
  const double h = 1.0 / static_cast<double>(n);
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    l(i, i) = c2 + c3 * 2.0 / (h * h);
    if (i > 0) l(i, i - 1) = -c3 / (h * h);
    if (i + 1 < n) l(i, i + 1) = -c3 / (h * h);
  }
  // Ghost value -m at the mirrored end point enforces m = 0 on the boundary.
  l(0, 0) += c3 / (h * h);
  l(n - 1, n - 1) += c3 / (h * h);
  const Matrix l_inv = l.llt().solve(Matrix::Identity(n, n));
  return symmetrized(l_inv * l_inv) / h;
}

/// Parameters v = [m; psi]: m (length grid_n) is the top log-flux, psi
/// (grid_n^2) the level-set field. Data are pressures at the sensor grid.
inline TestProblem mini_darcy_problem(Eigen::Index grid_n, const SensorGrid& sensors = {},
                                      const LevelSetMap& ls = {}) {
  if (grid_n < 2 || grid_n > 64) throw InvalidArgument("grid_n must be in [2, 64]");
  if (sensors.nx < 1 || sensors.ny < 1) throw InvalidArgument("sensor grid must be non-empty");
  ls.check();
  TestProblem p;
  p.name = "darcy";
  p.n_v = grid_n + grid_n * grid_n;
  p.sensors = sensors.count();
  p.time_steps = 1;
  p.split = BlockSplit{grid_n, grid_n * grid_n};
  p.forward = [grid_n, sensors, ls](const Vector& v) -> Vector {
    const auto sol = solve_darcy(grid_n, v.head(grid_n), v.tail(grid_n * grid_n), ls);
    return sample_sensors(sol, sensors);
  };
  p.prior_builder = [grid_n](const PriorHyper& hyper) {
    const Eigen::Index nm = grid_n, nx = grid_n * grid_n;
    const double h = 1.0 / static_cast<double>(grid_n);
    std::vector<std::array<double, 2>> centres;
    centres.reserve(static_cast<std::size_t>(nx));
    for (Eigen::Index j = 0; j < grid_n; ++j)
      for (Eigen::Index i = 0; i < grid_n; ++i) centres.push_back({(i + 0.5) * h, (j + 0.5) * h});
    Matrix cov = Matrix::Zero(nm + nx, nm + nx);
    cov.topLeftCorner(nm, nm) = flux_prior_covariance(grid_n, hyper.c2, hyper.c3);
    cov.bottomRightCorner(nx, nx) = squared_exponential_kernel(centres, hyper.c1);
    return GaussianDensity(Vector::Zero(nm + nx), cov);
  };
  return p;
}

// ---------------------------------------------------------------------------

inline constexpr Eigen::Index kDefaultEnsembleSize = 10000;

/// params = sample(prior, q, seed); data row l = problem(params row l).
inline Ensemble synthesize_ensemble(const TestProblem& problem, const GaussianDensity& prior,
                                    Eigen::Index q = kDefaultEnsembleSize, std::uint64_t seed = 0) {
  require_dims(prior.dim() == problem.n_v, "prior dimension " + std::to_string(prior.dim()) +
                                               " != problem parameter dimension " +
                                               std::to_string(problem.n_v));
  Ensemble e;
  e.params = sample(prior, q, seed);
  e.accurate_data.resize(q, problem.data_dim());
  parallel_for(static_cast<std::size_t>(q), [&](std::size_t l) {
    const auto row = static_cast<Eigen::Index>(l);
    const Vector out = problem(e.params.row(row).transpose());
    require_dims(out.size() == problem.data_dim(), problem.name + ": forward output length");
    e.accurate_data.row(row) = out.transpose();
  });
  e.meta.sensors = static_cast<std::uint32_t>(problem.sensors);
  e.meta.time_steps = static_cast<std::uint32_t>(problem.time_steps);
  e.meta.seed = seed;
  e.meta.provenance = "problem:" + problem.name;
  validate(e);
  return e;
}

/// Isotropic noise with standard deviation fraction * RMS of the per-column
/// standard deviations of the ensemble's data.
inline GaussianDensity relative_noise(const Ensemble& e, double fraction = 0.01) {
  const Matrix centred = e.accurate_data.rowwise() - e.accurate_data.colwise().mean();
  const double mean_var = centred.colwise().squaredNorm().mean() / static_cast<double>(e.samples() - 1);
  const double sigma = fraction * std::sqrt(mean_var);
  if (!(sigma > 0.0)) throw NotPositiveDefinite("ensemble data have zero spread; cannot scale noise");
  const Eigen::Index n = e.data_dim();
  return GaussianDensity(Vector::Zero(n), Matrix::Identity(n, n) * sigma * sigma);
}

/// Built-in problems by name: "linear", "exp", "darcy".
///
/// Keys: n_v, s, n_t, alpha, matrix_seed (linear/exp); grid_n, sensors_x,
/// sensors_y, c1, c2, c3 (darcy).
inline TestProblem make_problem(const std::string& name, const Config& cfg) {
  if (name == "linear" || name == "exp") {
    const auto n_v = cfg.get_int("n_v", 8);
    const auto s = cfg.get_int("s", 10);
    const auto n_t = cfg.get_int("n_t", 2);
    if (n_v < 1 || s < 1 || n_t < 1) throw InvalidArgument("n_v, s, n_t must be positive");
    const Matrix f = standard_normal(s * n_t, n_v, static_cast<std::uint64_t>(cfg.get_int("matrix_seed", 1))) /
                     std::sqrt(static_cast<double>(n_v));
    if (name == "linear") return linear_problem(f, s, n_t);
    return exp_problem(f, cfg.get_double("alpha", 0.5), s, n_t);
  }
  if (name == "darcy") {
    const auto grid_n = cfg.get_int("grid_n", 16);
    SensorGrid g{cfg.get_int("sensors_x", 8), cfg.get_int("sensors_y", 8)};
    return mini_darcy_problem(grid_n, g);
  }
  throw InvalidArgument("unknown problem '" + name + "'");
}

inline PriorHyper prior_hyper_from(const Config& cfg) {
  PriorHyper h;
  h.c1 = cfg.get_double("c1", h.c1);
  h.c2 = cfg.get_double("c2", h.c2);
  h.c3 = cfg.get_double("c3", h.c3);
  return h;
}

}  // namespace baeoed

#endif  // BAEOED_PROBLEMS_HPP
