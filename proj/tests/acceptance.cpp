// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "support.hpp"

using namespace baeoed;
using testing_support::Gen;
using testing_support::rel_diff;
using testing_support::ScratchDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double limit_s;
  std::function<Outcome()> body;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

double max_rel(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(a[i]), 1e-300));
  return worst;
}

std::vector<DesignVector> all_designs(Eigen::Index s, Eigen::Index n_t) {
  std::vector<DesignVector> out;
  for (std::uint32_t mask = 0; mask < (1u << s); ++mask) {
    std::vector<std::uint8_t> w(static_cast<std::size_t>(s));
    for (Eigen::Index j = 0; j < s; ++j) w[static_cast<std::size_t>(j)] = (mask >> j) & 1u;
    out.emplace_back(w, n_t);
  }
  return out;
}

Config exp_config(Eigen::Index s) {
  Config c;
  c.set("n_v", "8");
  c.set("s", std::to_string(s));
  c.set("n_t", "2");
  return c;
}

// Exp problem with n_v = 8, s = 10, n_t = 2 and a q = 500 ensemble.
struct ExpSetup {
  TestProblem problem = make_problem("exp", exp_config(10));
  GaussianDensity prior = build_priors(problem);
  Ensemble ensemble = synthesize_ensemble(problem, prior, 500, 21);
  GaussianDensity noise = relative_noise(ensemble);

  std::vector<LinearSurrogate> surrogates() const {
    return {LinearSurrogate::zero(problem.data_dim(), problem.n_v),
            LinearSurrogate::explicit_matrix(standard_normal(problem.data_dim(), problem.n_v, 99)),
            finite_difference_surrogate(problem, prior.mean())};
  }
  ObjectiveKernel kernel(const LinearSurrogate& s, bool enhanced) const {
    StatsOptions opts;
    opts.source = StatsSource::sample;
    opts.enhanced = enhanced;
    return build_kernel(estimate_stats(ensemble, s, noise, opts), problem.sensors, problem.time_steps);
  }
};

Outcome surrogate_invariance() {
  const ExpSetup setup;
  std::vector<GreedyTrace> traces;
  for (const auto& s : setup.surrogates()) traces.push_back(greedy_design(setup.kernel(s, false), 10));
  bool same = true;
  double worst = 0.0;
  for (std::size_t i = 1; i < traces.size(); ++i) {
    same = same && traces[i].chosen == traces[0].chosen;
    worst = std::max(worst, max_rel(traces[0].criterion_path, traces[i].criterion_path));
  }
  return {same && worst <= 1e-7, "sets identical=" + std::string(same ? "yes" : "no") + ", max rel diff " + fmt(worst)};
}

Outcome enhanced_failure() {
  const ExpSetup setup;
  const auto sur = setup.surrogates();
  const auto zero = setup.kernel(sur[0], true), fd = setup.kernel(sur[2], true);
  // Compare both kernels on the nested designs chosen under the zero surrogate.
  const auto path = greedy_design(zero, 10);
  double worst = 0.0;
  for (std::size_t k = 1; k <= path.chosen.size(); ++k) {
    const auto d = DesignVector::from_indices(
        setup.problem.sensors, setup.problem.time_steps,
        std::vector<Eigen::Index>(path.chosen.begin(), path.chosen.begin() + static_cast<std::ptrdiff_t>(k)));
    worst = std::max(worst, std::abs(criterion(zero, d) - criterion(fd, d)));
  }
  return {worst > 1e-6, "max |zero - fd| criterion " + fmt(worst)};
}

Outcome linear_collapse() {
  Gen gen(7001);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Index n_v = gen.integer(1, 12), n_d = gen.integer(1, 8);
    const Matrix f = gen.normal(n_d, n_v);
    const auto e = synthesize_ensemble(linear_problem(f), standard_prior(n_v), n_v + 10, gen.seed());
    const GaussianDensity noise(gen.normal_vec(n_d), gen.spd(n_d, 0.1));
    const auto t = estimate_stats(e, LinearSurrogate::explicit_matrix(f), noise);
    const Vector d = gen.normal_vec(n_d);
    const auto bae = bae_posterior(t, DesignVector::full(n_d, 1), d);
    const auto ref = linear_gaussian_posterior(GaussianDensity(t.v_mean, t.C_vv), f, noise, d);
    worst = std::max({worst, rel_diff(bae.mean(), ref.mean()), rel_diff(bae.cov(), ref.cov())});
  }
  return {worst <= 1e-10, "50 instances, max rel diff " + fmt(worst)};
}

Outcome woodbury() {
  Gen gen(7002);
  double worst = 0.0;
  std::size_t checked = 0;
  for (Eigen::Index s = 1; s <= 6; ++s)
    for (Eigen::Index n_t = 1; n_t <= 2; ++n_t) {
      const Eigen::Index n_v = gen.integer(1, 10), n_d = s * n_t;
      const auto problem = exp_problem(gen.normal(n_d, n_v), gen.uniform(0.3, 1.0), s, n_t);
      const auto e = synthesize_ensemble(problem, standard_prior(n_v), n_v + n_d + 30, gen.seed());
      const GaussianDensity noise(Vector::Zero(n_d), gen.spd(n_d, 0.05) * 0.05);
      const auto t = estimate_stats(e, LinearSurrogate::zero(n_d, n_v), noise);
      const auto kernel = build_kernel(t, s, n_t);
      for (const auto& d : all_designs(s, n_t)) {
        const double direct = kernel.prior_trace - bae_posterior(t, d, Vector::Zero(d.count() * n_t)).cov().trace();
        const double crit = criterion(kernel, d);
        worst = std::max(worst, std::abs(crit - direct) / std::max(std::abs(direct), 1e-12));
        ++checked;
      }
    }
  return {worst <= 1e-8, std::to_string(checked) + " designs, max rel diff " + fmt(worst)};
}

Outcome greedy_vs_brute() {
  Gen gen(7003);
  double worst = 1.0;
  for (int trial = 0; trial < 25; ++trial) {
    const Eigen::Index n_v = gen.integer(2, 10), s = 8;
    const auto problem = exp_problem(gen.normal(s, n_v) / std::sqrt(double(n_v)), gen.uniform(0.2, 1.0), s, 1);
    const auto e = synthesize_ensemble(problem, standard_prior(n_v), 300, gen.seed());
    const GaussianDensity noise(Vector::Zero(s), gen.spd(s, 0.05) * 0.1);
    const auto kernel = build_kernel(estimate_stats(e, LinearSurrogate::zero(s, n_v), noise), s, 1);
    const double g = greedy_design(kernel, 3).criterion_path.back();
    const double b = criterion(kernel, brute_force_design(kernel, 3));
    worst = std::min(worst, g / b);
  }
  return {worst >= 0.9, "min greedy/optimum " + fmt(worst)};
}

struct DarcySetup {
  TestProblem problem = mini_darcy_problem(16, SensorGrid{8, 8});
  GaussianDensity prior = build_priors(problem);
  Ensemble ensemble = synthesize_ensemble(problem, prior, 2000, 31);
  GaussianDensity noise = relative_noise(ensemble);
  TotalErrorModel model =
      estimate_stats(ensemble, LinearSurrogate::zero(problem.data_dim(), problem.n_v), noise);
};

const DarcySetup& darcy() {
  static const DarcySetup setup;
  return setup;
}

Outcome darcy_vs_random() {
  const auto& setup = darcy();
  const auto kernel = build_kernel(setup.model, setup.problem.sensors, setup.problem.time_steps);
  const auto path = greedy_design(kernel, 20);
  bool ok = true;
  double min_margin = 1e300;
  for (Eigen::Index k = 5; k <= 20; ++k) {
    const auto table =
        evaluate_designs(kernel, random_designs(kernel.sensors, k, 100, derive_seed(77, static_cast<std::uint64_t>(k))));
    const double g = path.criterion_path[static_cast<std::size_t>(k - 1)];
    const double q75 = table.criterion_summary.q75;
    ok = ok && g > q75;
    min_margin = std::min(min_margin, (g - q75) / q75);
  }
  return {ok, "k=5..20, min relative margin over q75 " + fmt(min_margin)};
}

Outcome marginal_divergence() {
  const auto& setup = darcy();
  const auto split = *setup.problem.split;
  const auto aware = build_kernel(setup.model, setup.problem.sensors, 1, KernelMode::marginal, split);
  // Unaware: linearize at the prior mean, treat psi as known, ignore model error.
  Matrix c_vv = setup.prior.cov();
  c_vv.bottomRows(split.n_aux).setZero();
  c_vv.rightCols(split.n_aux).setZero();
  const auto t_unaware = surrogate_only_model(finite_difference_surrogate(setup.problem, setup.prior.mean()),
                                              setup.prior.mean(), c_vv, setup.noise);
  const auto unaware = build_kernel(t_unaware, setup.problem.sensors, 1, KernelMode::marginal, split);
  const auto d_aware = greedy_design(aware, 10).design(setup.problem.sensors, 1);
  const auto d_unaware = greedy_design(unaware, 10).design(setup.problem.sensors, 1);
  const bool differ = d_aware.weights() != d_unaware.weights();
  const double t_a = posterior_trace(aware, d_aware), t_u = posterior_trace(aware, d_unaware);
  return {differ && t_a < t_u,
          "designs differ=" + std::string(differ ? "yes" : "no") + ", aware trace " + fmt(t_a) + " vs unaware " + fmt(t_u)};
}

Outcome pcn_correctness() {
  Matrix f(2, 2);
  f << 1.0, 0.5, 0.0, 1.0;
  const auto problem = linear_problem(f);
  const auto prior = standard_prior(2);
  const GaussianDensity noise(Vector::Zero(2), Matrix::Identity(2, 2) * 0.5);
  const Vector y{{1.0, -0.5}};
  const auto exact = linear_gaussian_posterior(prior, f, noise, y);
  PcnConfig cfg;
  cfg.beta = 0.5;
  cfg.n_steps = 200000;
  cfg.n_burn = 10000;
  cfg.seed = 5;
  const auto chain = pcn_sample(problem, prior, noise, y, DesignVector::full(2, 1), cfg);
  double worst_z = 0.0;
  for (Eigen::Index i = 0; i < 2; ++i) {
    const double se = std::sqrt(chain.cov(i, i) / chain.effective_sample_size[i]);
    worst_z = std::max(worst_z, std::abs(chain.mean[i] - exact.mean()[i]) / se);
  }
  const double trace_err = std::abs(chain.trace / exact.cov().trace() - 1.0);
  cfg.beta = 0.6;
  const auto empty = pcn_sample(problem, prior, noise, Vector(0), DesignVector::empty(2, 1), cfg);
  const double prior_err = std::abs(empty.trace / prior.cov().trace() - 1.0);
  return {worst_z <= 3.0 && trace_err <= 0.05 && prior_err <= 0.05,
          "mean max |z| " + fmt(worst_z) + ", trace rel err " + fmt(trace_err) + ", zero-sensor rel err " +
              fmt(prior_err)};
}

Outcome sample_count_sensitivity() {
  // s = 30 so that k = 10 is a proper subset of the candidates.
  const auto problem = make_problem("exp", exp_config(30));
  const auto prior = build_priors(problem);
  const auto reference_ensemble = synthesize_ensemble(problem, prior, 1000, 41);
  const auto noise = relative_noise(reference_ensemble);
  auto kernel_for = [&](const Ensemble& e) {
    return build_kernel(estimate_stats(e, LinearSurrogate::zero(problem.data_dim(), problem.n_v), noise),
                        problem.sensors, problem.time_steps);
  };
  const auto reference = kernel_for(reference_ensemble);
  const double median = evaluate_designs(reference, random_designs(problem.sensors, 10, 100, 43, problem.time_steps))
                            .criterion_summary.median;
  bool ok = true;
  std::vector<double> scores;
  std::string detail = "median " + fmt(median) + "; q:score";
  for (Eigen::Index q : {50, 250, 500, 1000}) {
    const auto e = q == 1000 ? reference_ensemble : synthesize_ensemble(problem, prior, q, 41 + static_cast<std::uint64_t>(q));
    const auto d = greedy_design(kernel_for(e), 10).design(problem.sensors, problem.time_steps);
    const double score = criterion(reference, d);
    ok = ok && score > median;
    scores.push_back(score);
    detail += " " + std::to_string(q) + ":" + fmt(score);
  }
  const bool monotone = std::is_sorted(scores.begin(), scores.end());
  return {ok, detail + "; monotone (recorded) " + (monotone ? "yes" : "no")};
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(BAE_OED_EXE) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism() {
  ScratchDir dir;
  std::vector<std::string> artifacts;
  for (const std::string run : {"a", "b"}) {
    const auto r = dir / run;
    std::filesystem::create_directories(r);
    const std::string ens = (r / "ens.baem").string();
    const std::vector<std::string> steps = {
        "sample --problem exp --q 400 --seed 8 --out " + ens,
        "sample --problem darcy --set grid_n=8 --set sensors_x=4 --set sensors_y=4 --q 300 --seed 8 --format csv --out " +
            (r / "darcy.csv").string(),
        "stats --ensemble " + ens + " --surrogate fd --problem exp --out " + (r / "s.baes").string(),
        "design --ensemble " + ens + " --k 8 --out " + (r / "design").string(),
        "design --ensemble " + (r / "darcy.csv").string() + " --marginal 8 --k 5 --out " + (r / "marginal").string(),
        "baseline --stats " + (r / "s.baes").string() + " --time-steps 2 --k-range 1..10 --n-random 30 --seed 2 --out " +
            (r / "baseline").string(),
        "validate --problem exp --designs " + (r / "design" / "design.csv").string() +
            " --data-seeds 2 --n-steps 2000 --n-burn 200 --seed 3 --out " + (r / "validate").string()};
    for (const auto& s : steps)
      if (const int rc = run_cli(s); rc != 0) return {false, "exit " + std::to_string(rc) + " from: " + s};
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(r)) {
      const auto ext = entry.path().extension();
      if (ext == ".csv" || ext == ".baem" || ext == ".baes") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    std::string all;
    for (const auto& f : files) all += std::filesystem::relative(f, r).string() + "\n" + slurp(f);
    artifacts.push_back(all);
  }
  const bool same = artifacts[0] == artifacts[1];
  return {same, "7 pipelines rerun, artifacts " + std::string(same ? "byte-identical" : "DIFFER")};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"surrogate-invariance", 10, surrogate_invariance},
      {"enhanced-model-failure", 10, enhanced_failure},
      {"linear-gaussian-collapse", 5, linear_collapse},
      {"woodbury-consistency", 5, woodbury},
      {"greedy-vs-brute-force", 30, greedy_vs_brute},
      {"darcy-greedy-vs-random", 300, darcy_vs_random},
      {"marginal-design-divergence", 300, marginal_divergence},
      {"pcn-correctness", 120, pcn_correctness},
      {"sample-count-sensitivity", 120, sample_count_sensitivity},
      {"cli-determinism", 600, determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.body();
    } catch (const std::exception& e) {
      out = {false, std::string("threw ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.limit_s) {
      out.pass = false;
      out.detail += "; over time limit " + fmt(c.limit_s) + " s";
    }
    failures += out.pass ? 0 : 1;
    std::printf("%s %s: %s [%.2f s]\n", out.pass ? "PASS" : "FAIL", c.name.c_str(), out.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
