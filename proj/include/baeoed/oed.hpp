#ifndef BAEOED_OED_HPP
#define BAEOED_OED_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "baeoed/error.hpp"
#include "baeoed/parallel.hpp"
#include "baeoed/posterior.hpp"

namespace baeoed {

/// Scores within this relative distance count as tied; ties go to the lowest
/// sensor index (greedy) or the lexicographically smallest set (brute force).
inline constexpr double kTieTolerance = 1e-12;

inline bool strictly_better(double candidate, double incumbent) {
  return candidate > incumbent + kTieTolerance * std::max(1.0, std::abs(incumbent));
}

struct GreedyTrace {
  std::vector<Eigen::Index> chosen;
  std::vector<double> criterion_path;
  std::vector<double> posterior_trace_path;
  /// candidate_scores[step] lists (sensor, score) for every candidate scored.
  std::vector<std::vector<std::pair<Eigen::Index, double>>> candidate_scores;
  std::vector<double> wall_times;

  DesignVector design(Eigen::Index sensors, Eigen::Index time_steps) const {
    return DesignVector::from_indices(sensors, time_steps, chosen);
  }
};

namespace detail {

/*
 * Incremental state for the greedy loop: the lower Cholesky factor of
 * W M W^T over the chosen blocks (insertion order) and the current trace.
 *
 * Scoring candidate block J against chosen set S uses
 *   b = L^{-1} M_SJ,  S_J = M_JJ - b^T b,  y = L^{-T} b,
 *   T = N_JJ - N_JS y - y^T N_SJ + y^T N_SS y,
 * and trace_new = trace_old + trace(c^{-1} T c^{-T}) with c = chol(S_J).
 */
class GreedyState {
 public:
  explicit GreedyState(const ObjectiveKernel& k) : k_(k) {}

  std::vector<Eigen::Index> block(Eigen::Index sensor) const {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index t = 0; t < k_.time_steps; ++t) idx.push_back(t * k_.sensors + sensor);
    return idx;
  }

  struct Trial {
    double score = 0.0;
    Matrix b;
    Matrix c;
  };

  Trial score(Eigen::Index sensor) const {
    const auto cand = block(sensor);
    const auto nt = static_cast<Eigen::Index>(cand.size());
    const auto ns = static_cast<Eigen::Index>(idx_.size());
    Matrix m_sj(ns, nt), n_sj(ns, nt), m_jj(nt, nt), n_jj(nt, nt);
    for (Eigen::Index a = 0; a < nt; ++a) {
      for (Eigen::Index r = 0; r < ns; ++r) {
        m_sj(r, a) = k_.M(idx_[r], cand[a]);
        n_sj(r, a) = k_.N(idx_[r], cand[a]);
      }
      for (Eigen::Index b = 0; b < nt; ++b) {
        m_jj(a, b) = k_.M(cand[a], cand[b]);
        n_jj(a, b) = k_.N(cand[a], cand[b]);
      }
    }
    Trial trial;
    Matrix schur = m_jj;
    Matrix t = n_jj;
    if (ns > 0) {
      trial.b = lower_.triangularView<Eigen::Lower>().solve(m_sj);
      const Matrix y = lower_.triangularView<Eigen::Lower>().transpose().solve(trial.b);
      schur -= trial.b.transpose() * trial.b;
      const Matrix nsj_t_y = n_sj.transpose() * y;
      t += y.transpose() * (n_ss_ * y) - nsj_t_y - nsj_t_y.transpose();
    } else {
      trial.b = Matrix(0, nt);
    }
    const SpdFactor c(symmetrized(schur), "Schur complement of trial block");
    const Matrix left = c.half_solve(symmetrized(t));
    trial.score = trace_ + c.half_solve(left.transpose()).trace();
    trial.c = c.lower();
    return trial;
  }

  void accept(Eigen::Index sensor, const Trial& trial) {
    const auto cand = block(sensor);
    const auto nt = static_cast<Eigen::Index>(cand.size());
    const auto ns = static_cast<Eigen::Index>(idx_.size());
    Matrix grown = Matrix::Zero(ns + nt, ns + nt);
    grown.topLeftCorner(ns, ns) = lower_;
    grown.bottomLeftCorner(nt, ns) = trial.b.transpose();
    grown.bottomRightCorner(nt, nt) = trial.c;
    lower_ = std::move(grown);
    idx_.insert(idx_.end(), cand.begin(), cand.end());
    const auto n = static_cast<Eigen::Index>(idx_.size());
    n_ss_.resize(n, n);
    for (Eigen::Index a = 0; a < n; ++a)
      for (Eigen::Index b = 0; b < n; ++b) n_ss_(a, b) = k_.N(idx_[a], idx_[b]);
    trace_ = trial.score;
  }

  double trace() const { return trace_; }

 private:
  const ObjectiveKernel& k_;
  std::vector<Eigen::Index> idx_;
  Matrix lower_ = Matrix(0, 0);
  Matrix n_ss_ = Matrix(0, 0);
  double trace_ = 0.0;
};

}  // namespace detail

/// Greedy cardinality-constrained maximization of trace[K(w)]. Step l scores
/// the s - (l - 1) remaining candidates (in parallel) and keeps the best,
/// lowest index on ties.
inline GreedyTrace greedy_design(const ObjectiveKernel& kernel, Eigen::Index k,
                                 bool keep_candidate_scores = false) {
  if (k < 1) throw InvalidArgument("k must be at least 1");
  if (k > kernel.sensors)
    throw KExceedsSensors("k = " + std::to_string(k) + " exceeds s = " + std::to_string(kernel.sensors));
  GreedyTrace trace;
  detail::GreedyState state(kernel);
  std::vector<Eigen::Index> candidates(static_cast<std::size_t>(kernel.sensors));
  for (Eigen::Index j = 0; j < kernel.sensors; ++j) candidates[static_cast<std::size_t>(j)] = j;

  for (Eigen::Index step = 0; step < k; ++step) {
    const auto start = std::chrono::steady_clock::now();
    std::vector<detail::GreedyState::Trial> trials(candidates.size());
    parallel_for(candidates.size(), [&](std::size_t i) { trials[i] = state.score(candidates[i]); });
    std::size_t best = 0;
    for (std::size_t i = 1; i < candidates.size(); ++i)
      if (strictly_better(trials[i].score, trials[best].score)) best = i;
    if (keep_candidate_scores) {
      std::vector<std::pair<Eigen::Index, double>> scores;
      for (std::size_t i = 0; i < candidates.size(); ++i) scores.emplace_back(candidates[i], trials[i].score);
      trace.candidate_scores.push_back(std::move(scores));
    }
    const Eigen::Index pick = candidates[best];
    state.accept(pick, trials[best]);
    candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(best));
    trace.chosen.push_back(pick);
    trace.criterion_path.push_back(state.trace());
    trace.posterior_trace_path.push_back(kernel.prior_trace - state.trace());
    trace.wall_times.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
  return trace;
}

inline constexpr std::size_t kDefaultRandomDesigns = 100;

/// `count` designs of exactly k distinct sensors each (uniform, without
/// replacement inside a design; designs drawn independently).
inline std::vector<DesignVector> random_designs(Eigen::Index sensors, Eigen::Index k,
                                                std::size_t count = kDefaultRandomDesigns,
                                                std::uint64_t seed = 0, Eigen::Index time_steps = 1) {
  if (k < 0 || k > sensors)
    throw KExceedsSensors("k = " + std::to_string(k) + " exceeds s = " + std::to_string(sensors));
  std::mt19937_64 gen(seed);
  std::vector<DesignVector> out;
  out.reserve(count);
  std::vector<Eigen::Index> pool(static_cast<std::size_t>(sensors));
  for (std::size_t n = 0; n < count; ++n) {
    for (Eigen::Index j = 0; j < sensors; ++j) pool[static_cast<std::size_t>(j)] = j;
    for (Eigen::Index i = 0; i < k; ++i) {
      std::uniform_int_distribution<Eigen::Index> pick(i, sensors - 1);
      std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(pick(gen))]);
    }
    out.push_back(DesignVector::from_indices(
        sensors, time_steps, std::vector<Eigen::Index>(pool.begin(), pool.begin() + k)));
  }
  return out;
}

inline double binomial(Eigen::Index n, Eigen::Index k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (Eigen::Index i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(r);
}

inline constexpr double kBruteForceLimit = 1e6;

/// Exact argmax over all k-subsets (lexicographic enumeration).
inline DesignVector brute_force_design(const ObjectiveKernel& kernel, Eigen::Index k) {
  const Eigen::Index s = kernel.sensors;
  if (k < 0 || k > s) throw KExceedsSensors("k = " + std::to_string(k) + " exceeds s = " + std::to_string(s));
  if (binomial(s, k) > kBruteForceLimit)
    throw CombinatorialBlowup("C(" + std::to_string(s) + ", " + std::to_string(k) + ") exceeds 1e6");
  std::vector<Eigen::Index> comb(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) comb[static_cast<std::size_t>(i)] = i;
  std::vector<Eigen::Index> best = comb;
  double best_score = criterion(kernel, DesignVector::from_indices(s, kernel.time_steps, comb));
  while (true) {
    Eigen::Index i = k - 1;
    while (i >= 0 && comb[static_cast<std::size_t>(i)] == s - k + i) --i;
    if (i < 0) break;
    ++comb[static_cast<std::size_t>(i)];
    for (Eigen::Index j = i + 1; j < k; ++j)
      comb[static_cast<std::size_t>(j)] = comb[static_cast<std::size_t>(j - 1)] + 1;
    const double score = criterion(kernel, DesignVector::from_indices(s, kernel.time_steps, comb));
    if (strictly_better(score, best_score)) {
      best_score = score;
      best = comb;
    }
  }
  return DesignVector::from_indices(s, kernel.time_steps, best);
}

struct Quantiles {
  double min = 0, q25 = 0, median = 0, q75 = 0, max = 0;
};

/// Linear-interpolation sample quantiles.
inline Quantiles quantiles(std::vector<double> values) {
  if (values.empty()) return {};
  std::sort(values.begin(), values.end());
  auto at = [&](double p) {
    const double pos = p * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  return {values.front(), at(0.25), at(0.5), at(0.75), values.back()};
}

struct DesignEvaluation {
  DesignVector design;
  double criterion = 0.0;
  double posterior_trace = 0.0;
};

struct DesignTable {
  std::vector<DesignEvaluation> rows;
  Quantiles criterion_summary;
  Quantiles posterior_trace_summary;
};

inline DesignTable evaluate_designs(const ObjectiveKernel& kernel, const std::vector<DesignVector>& designs) {
  DesignTable table;
  table.rows.resize(designs.size());
  parallel_for(designs.size(), [&](std::size_t i) {
    const double c = criterion(kernel, designs[i]);
    table.rows[i] = {designs[i], c, kernel.prior_trace - c};
  });
  std::vector<double> crit, post;
  for (const auto& r : table.rows) {
    crit.push_back(r.criterion);
    post.push_back(r.posterior_trace);
  }
  table.criterion_summary = quantiles(crit);
  table.posterior_trace_summary = quantiles(post);
  return table;
}

}  // namespace baeoed

#endif  // BAEOED_OED_HPP
