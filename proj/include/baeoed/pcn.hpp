#ifndef BAEOED_PCN_HPP
#define BAEOED_PCN_HPP

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "baeoed/black_box.hpp"
#include "baeoed/error.hpp"
#include "baeoed/gaussian.hpp"
#include "baeoed/parallel.hpp"
#include "baeoed/posterior.hpp"
#include "baeoed/problems.hpp"

namespace baeoed {

struct PcnConfig {
  double beta = 0.2;
  std::int64_t n_steps = 100000;
  std::int64_t n_burn = 10000;
  std::int64_t thin = 10;
  std::uint64_t seed = 0;
  bool keep_samples = false;

  void check() const {
    if (!(beta > 0.0 && beta <= 1.0)) throw InvalidArgument("pCN beta must be in (0, 1]");
    if (n_steps < 1 || n_burn < 0 || n_burn >= n_steps)
      throw InvalidArgument("pCN needs 0 <= n_burn < n_steps");
    if (thin < 1) throw InvalidArgument("pCN thinning must be >= 1");
  }
};

struct ChainSummary {
  Vector mean;
  Matrix cov;
  double trace = 0.0;
  double acceptance_rate = 0.0;
  Vector effective_sample_size;
  Eigen::Index kept = 0;
  Matrix samples;  // kept x n_v, only with keep_samples
};

/// Metropolis decision on the misfit difference; only J(v) - J(v') enters.
inline bool pcn_accept(double misfit_current, double misfit_proposed, double log_u) {
  return log_u < misfit_current - misfit_proposed;
}

/// Integrated autocorrelation via Geyer's initial positive sequence.
inline double integrated_autocorrelation(const Eigen::Ref<const Vector>& x) {
  const Eigen::Index n = x.size();
  if (n < 4) return 1.0;
  const Vector c = x.array() - x.mean();
  const double var = c.squaredNorm() / static_cast<double>(n);
  if (!(var > 0.0)) return 1.0;
  auto rho = [&](Eigen::Index lag) {
    return c.head(n - lag).dot(c.tail(n - lag)) / (static_cast<double>(n) * var);
  };
  double tau = -1.0;
  for (Eigen::Index k = 0; k + 1 < n; k += 2) {
    const double pair = rho(k) + rho(k + 1);
    if (pair <= 0.0) break;
    tau += 2.0 * pair;
  }
  return std::max(tau, 1.0);
}

/*
 * Generic pCN chain for a Gaussian prior and a misfit functional J:
 *   v' = v0 + sqrt(1 - beta^2) (v - v0) + beta xi,  xi ~ N(0, C),
 * accepted with probability min(1, exp(J(v) - J(v'))). The proposal is
 * prior-reversible, so the prior never enters the ratio.
 */
template <typename Misfit>
ChainSummary pcn_chain(const GaussianDensity& prior, Misfit&& misfit, const PcnConfig& cfg) {
  cfg.check();
  const Eigen::Index n = prior.dim();
  std::mt19937_64 gen(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double keep = std::sqrt(1.0 - cfg.beta * cfg.beta);
  const Matrix& chol = prior.chol();

  Vector v = prior.mean();
  double j_cur = misfit(v);
  std::int64_t accepted = 0;
  const std::int64_t n_kept = (cfg.n_steps - cfg.n_burn + cfg.thin - 1) / cfg.thin;
  Matrix kept(n_kept, n);
  Eigen::Index row = 0;
  Vector xi(n), proposal(n);
  for (std::int64_t step = 0; step < cfg.n_steps; ++step) {
    for (Eigen::Index i = 0; i < n; ++i) xi[i] = normal(gen);
    proposal = prior.mean() + keep * (v - prior.mean()) + cfg.beta * (chol * xi);
    double j_prop;
    try {
      j_prop = misfit(proposal);
    } catch (const Error& e) {
      throw SolverFailure("pCN chain aborted at step " + std::to_string(step) + ": " + e.what());
    }
    const double log_u = std::log(uniform(gen));
    if (pcn_accept(j_cur, j_prop, log_u)) {
      v = proposal;
      j_cur = j_prop;
      ++accepted;
    }
    if (step >= cfg.n_burn && (step - cfg.n_burn) % cfg.thin == 0) kept.row(row++) = v.transpose();
  }

  ChainSummary out;
  out.kept = row;
  out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(cfg.n_steps);
  out.mean = kept.colwise().mean().transpose();
  const Matrix centred = kept.rowwise() - out.mean.transpose();
  out.cov = row > 1 ? Matrix(symmetrized(centred.transpose() * centred) / static_cast<double>(row - 1))
                    : Matrix::Zero(n, n);
  out.trace = out.cov.trace();
  out.effective_sample_size.resize(n);
  for (Eigen::Index i = 0; i < n; ++i)
    out.effective_sample_size[i] = static_cast<double>(row) / integrated_autocorrelation(kept.col(i));
  if (cfg.keep_samples) out.samples = std::move(kept);
  return out;
}

/// pCN on the accurate model with the selected-data misfit
///   J(v) = 1/2 || W (d - A(v) - e0) ||^2 in the (W Gamma_e W^T)^{-1} norm,
/// where `data` already holds the k * n_t selected entries.
inline ChainSummary pcn_sample(const TestProblem& problem, const GaussianDensity& prior,
                               const GaussianDensity& noise, const Vector& data,
                               const DesignVector& design, const PcnConfig& cfg) {
  require_dims(prior.dim() == problem.n_v, "prior dimension must match problem");
  require_dims(noise.dim() == problem.data_dim() && design.data_dim() == problem.data_dim(),
               "noise/design must match problem data dimension");
  require_dims(data.size() == design.count() * design.time_steps(),
               "data length must equal the selected dimension");
  if (design.count() == 0)
    return pcn_chain(prior, [](const Vector&) { return 0.0; }, cfg);
  const SpdFactor gamma(apply_design_both(design, noise.cov()), "W Gamma_e W^T");
  const Vector offset = apply_design(design, noise.mean());
  auto misfit = [&](const Vector& v) {
    const Vector r = data - apply_design(design, problem(v)) - offset;
    return 0.5 * gamma.half_solve(r).squaredNorm();
  };
  return pcn_chain(prior, misfit, cfg);
}

struct McmcCell {
  std::size_t design_index = 0;
  std::uint64_t data_seed = 0;
  double trace = 0.0;
  double acceptance_rate = 0.0;
  Matrix samples;  // thinned chain, only with keep_samples
};

struct McmcComparison {
  std::vector<McmcCell> cells;        // design-major, then data seed
  std::vector<double> mean_trace;     // per design, across data seeds
  double estimated_forward_solves = 0.0;
};

inline double estimate_forward_solves(const PcnConfig& cfg, std::size_t designs, std::size_t seeds) {
  return static_cast<double>(cfg.n_steps) * static_cast<double>(designs) * static_cast<double>(seeds);
}

/// Chain seed for one (design, data seed) cell, derived from the design's
/// content so duplicated designs reproduce bit-identical rows.
inline std::uint64_t cell_seed(std::uint64_t master, const DesignVector& d, std::uint64_t data_seed) {
  std::uint64_t h = 1469598103934665603ULL;
  for (auto w : d.weights()) h = (h ^ w) * 1099511628211ULL;
  h = (h ^ static_cast<std::uint64_t>(d.time_steps())) * 1099511628211ULL;
  return derive_seed(derive_seed(master, h), data_seed);
}

/// Synthetic full-sensor data for one data seed: A(v_true) + noise with
/// v_true drawn from the prior.
inline Vector synthetic_data(const TestProblem& problem, const GaussianDensity& prior,
                             const GaussianDensity& noise, std::uint64_t data_seed) {
  const Vector v_true = sample(prior, 1, derive_seed(data_seed, 0)).row(0).transpose();
  const Vector e = sample(noise, 1, derive_seed(data_seed, 1)).row(0).transpose();
  return problem(v_true) + e;
}

inline McmcComparison compare_designs_mcmc(const TestProblem& problem, const GaussianDensity& prior,
                                           const GaussianDensity& noise,
                                           const std::vector<DesignVector>& designs,
                                           const std::vector<std::uint64_t>& data_seeds,
                                           const PcnConfig& cfg) {
  cfg.check();
  McmcComparison out;
  out.estimated_forward_solves = estimate_forward_solves(cfg, designs.size(), data_seeds.size());
  if (designs.empty()) return out;
  std::vector<Vector> data(data_seeds.size());
  for (std::size_t s = 0; s < data_seeds.size(); ++s)
    data[s] = synthetic_data(problem, prior, noise, data_seeds[s]);
  out.cells.resize(designs.size() * data_seeds.size());
  parallel_for(out.cells.size(), [&](std::size_t c) {
    const std::size_t di = c / data_seeds.size();
    const std::size_t si = c % data_seeds.size();
    PcnConfig local = cfg;
    local.seed = cell_seed(cfg.seed, designs[di], data_seeds[si]);
    auto summary = pcn_sample(problem, prior, noise, apply_design(designs[di], data[si]), designs[di], local);
    out.cells[c] = McmcCell{di, data_seeds[si], summary.trace, summary.acceptance_rate,
                            std::move(summary.samples)};
  });
  out.mean_trace.assign(designs.size(), 0.0);
  for (const auto& cell : out.cells) out.mean_trace[cell.design_index] += cell.trace;
  for (auto& m : out.mean_trace) m /= static_cast<double>(data_seeds.size());
  return out;
}

}  // namespace baeoed

#endif  // BAEOED_PCN_HPP
