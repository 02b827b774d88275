#include <gtest/gtest.h>

#include "support.hpp"

using namespace baeoed;
using testing_support::Gen;

namespace {

/// Two-sided Kolmogorov-Smirnov statistic against a normal CDF.
double ks_statistic(std::vector<double> x, double mean, double sd) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = 0.5 * std::erfc(-(x[i] - mean) / (sd * std::sqrt(2.0)));
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

double standard_error(const ChainSummary& c, Eigen::Index i) {
  return std::sqrt(c.cov(i, i) / c.effective_sample_size[i]);
}

}  // namespace

TEST(PcnConfig, Validation) {
  PcnConfig cfg;
  EXPECT_NO_THROW(cfg.check());
  cfg.beta = 0.0;
  EXPECT_THROW(cfg.check(), InvalidArgument);
  cfg.beta = 1.5;
  EXPECT_THROW(cfg.check(), InvalidArgument);
  cfg = PcnConfig{};
  cfg.n_burn = cfg.n_steps;
  EXPECT_THROW(cfg.check(), InvalidArgument);
  EXPECT_EQ(PcnConfig{}.beta, 0.2);
}

TEST(Pcn, ConstantLikelihoodSamplesThePrior) {
  Gen gen(1);
  const GaussianDensity prior(gen.normal_vec(3), gen.spd(3, 0.3));
  PcnConfig cfg;
  cfg.beta = 0.5;
  cfg.n_steps = 100000;
  cfg.n_burn = 1000;
  cfg.seed = 3;
  const auto chain = pcn_chain(prior, [](const Vector&) { return 0.0; }, cfg);
  EXPECT_EQ(chain.acceptance_rate, 1.0);
  for (Eigen::Index i = 0; i < 3; ++i)
    EXPECT_LT(std::abs(chain.mean[i] - prior.mean()[i]), 3.0 * standard_error(chain, i)) << i;
  EXPECT_NEAR(chain.trace / prior.cov().trace(), 1.0, 0.05);
}

TEST(Pcn, BetaOneProposesIndependentPriorDraws) {
  const GaussianDensity prior(Vector{{1.0, -1.0}}, Vector{{4.0, 0.25}}.asDiagonal().toDenseMatrix());
  PcnConfig cfg;
  cfg.beta = 1.0;
  cfg.n_steps = 50;
  cfg.n_burn = 0;
  cfg.thin = 1;
  cfg.seed = 11;
  cfg.keep_samples = true;
  const auto chain = pcn_chain(prior, [](const Vector&) { return 0.0; }, cfg);
  // Replay the generator: each step draws n normals then one uniform.
  std::mt19937_64 gen(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (Eigen::Index step = 0; step < 50; ++step) {
    Vector xi(2);
    xi[0] = normal(gen);
    xi[1] = normal(gen);
    (void)uniform(gen);
    const Vector expect = prior.mean() + prior.chol() * xi;
    EXPECT_NEAR(chain.samples(step, 0), expect[0], 1e-14);
    EXPECT_NEAR(chain.samples(step, 1), expect[1], 1e-14);
  }
}

TEST(Pcn, LinearGaussianPosteriorMoments) {
  const auto problem = linear_problem(Matrix::Identity(2, 2));
  PcnConfig cfg;
  cfg.beta = 0.5;
  cfg.n_steps = 200000;
  cfg.n_burn = 10000;
  cfg.seed = 5;
  const auto chain = pcn_sample(problem, standard_prior(2), standard_prior(2), Vector{{1.0, 0.0}},
                                DesignVector::full(2, 1), cfg);
  EXPECT_LT(std::abs(chain.mean[0] - 0.5), 3.0 * standard_error(chain, 0));
  EXPECT_LT(std::abs(chain.mean[1] - 0.0), 3.0 * standard_error(chain, 1));
  EXPECT_NEAR(chain.trace, 1.0, 0.05);
  EXPECT_GT(chain.acceptance_rate, 0.0);
  EXPECT_LE(chain.acceptance_rate, 1.0);
  EXPECT_EQ(chain.cov, chain.cov.transpose());
}

TEST(Pcn, ZeroSensorChainKeepsPriorTrace) {
  Gen gen(2);
  const GaussianDensity prior(Vector::Zero(6), gen.spd(6, 0.2));
  const auto problem = linear_problem(gen.normal(4, 6));
  PcnConfig cfg;
  cfg.beta = 0.6;
  cfg.n_steps = 100000;
  cfg.n_burn = 1000;
  const auto chain = pcn_sample(problem, prior, standard_prior(4), Vector(0), DesignVector::empty(4, 1), cfg);
  EXPECT_EQ(chain.acceptance_rate, 1.0);
  EXPECT_NEAR(chain.trace / prior.cov().trace(), 1.0, 0.05);
}

TEST(Pcn, ShiftedMisfitGivesIdenticalDecisions) {
  Gen gen(3);
  const GaussianDensity prior(Vector::Zero(2), Matrix::Identity(2, 2));
  auto misfit = [](const Vector& v) { return 0.5 * ((v - Vector{{1.0, -0.5}}).squaredNorm() / 0.3); };
  PcnConfig cfg;
  cfg.n_steps = 20000;
  cfg.n_burn = 0;
  cfg.thin = 1;
  cfg.keep_samples = true;
  const auto a = pcn_chain(prior, misfit, cfg);
  const auto b = pcn_chain(prior, [&](const Vector& v) { return misfit(v) + 1234.5; }, cfg);
  EXPECT_EQ(a.acceptance_rate, b.acceptance_rate);
  EXPECT_EQ(a.samples, b.samples);
  for (int i = 0; i < 1000; ++i) {
    const double j0 = gen.uniform(0, 5), j1 = gen.uniform(0, 5), log_u = std::log(gen.uniform());
    EXPECT_EQ(pcn_accept(j0, j1, log_u), pcn_accept(j0 + 1e3, j1 + 1e3, log_u));
  }
}

TEST(Pcn, OneDimensionalHistogramMatchesPosterior) {
  // Prior N(0, 1), y = v + e, e ~ N(0, 1), y = 1: posterior N(0.5, 0.5).
  const auto problem = linear_problem(Matrix::Identity(1, 1));
  PcnConfig cfg;
  cfg.beta = 0.9;
  cfg.n_burn = 1000;
  cfg.thin = 10;
  cfg.n_steps = cfg.n_burn + 100000 * cfg.thin;
  cfg.seed = 17;
  cfg.keep_samples = true;
  const auto chain = pcn_sample(problem, standard_prior(1), standard_prior(1), Vector::Constant(1, 1.0),
                                DesignVector::full(1, 1), cfg);
  ASSERT_EQ(chain.kept, 100000);
  std::vector<double> x(chain.samples.data(), chain.samples.data() + chain.samples.size());
  const double d = ks_statistic(x, 0.5, std::sqrt(0.5));
  RecordProperty("ks", std::to_string(d));
  EXPECT_LT(d, 1.628 / std::sqrt(100000.0));
}

TEST(Pcn, ForwardFailureAbortsWithStep) {
  const GaussianDensity prior(Vector::Zero(1), Matrix::Identity(1, 1));
  PcnConfig cfg;
  cfg.n_steps = 10;
  cfg.n_burn = 0;
  int calls = 0;
  try {
    pcn_chain(prior, [&](const Vector&) -> double {
      if (++calls == 4) throw SolverFailure("boom");
      return 0.0;
    }, cfg);
    FAIL();
  } catch (const SolverFailure& e) {
    EXPECT_NE(std::string(e.what()).find("step 2"), std::string::npos) << e.what();
  }
}

TEST(CompareDesigns, EmptyDesignList) {
  const auto problem = linear_problem(Matrix::Identity(2, 2));
  const auto out = compare_designs_mcmc(problem, standard_prior(2), standard_prior(2), {}, {1, 2}, PcnConfig{});
  EXPECT_TRUE(out.cells.empty());
  EXPECT_TRUE(out.mean_trace.empty());
}

TEST(CompareDesigns, DuplicateDesignsAreBitwiseIdentical) {
  const auto problem = linear_problem(Matrix::Identity(3, 3));
  PcnConfig cfg;
  cfg.n_steps = 3000;
  cfg.n_burn = 500;
  const auto d = DesignVector::from_indices(3, 1, {0, 2});
  const auto out = compare_designs_mcmc(problem, standard_prior(3), standard_prior(3), {d, d}, {4, 5}, cfg);
  ASSERT_EQ(out.cells.size(), 4u);
  EXPECT_EQ(out.cells[0].trace, out.cells[2].trace);
  EXPECT_EQ(out.cells[1].trace, out.cells[3].trace);
  EXPECT_NE(out.cells[0].trace, out.cells[1].trace);
  EXPECT_EQ(out.estimated_forward_solves, 4.0 * 3000.0);
}

TEST(CompareDesigns, GreedyBeatsWorstRandomOnTwoSensorToy) {
  const auto problem = linear_problem(Matrix::Identity(2, 2));
  const GaussianDensity noise(Vector::Zero(2), Vector{{1.0, 0.01}}.asDiagonal().toDenseMatrix());
  const auto t = surrogate_only_model(LinearSurrogate::explicit_matrix(Matrix::Identity(2, 2)), Vector::Zero(2),
                                      Matrix::Identity(2, 2), noise);
  const auto greedy = greedy_design(build_kernel(t, 2, 1), 1).design(2, 1);
  std::vector<DesignVector> designs{greedy};
  for (const auto& d : random_designs(2, 1, 4, 3)) designs.push_back(d);
  PcnConfig cfg;
  cfg.beta = 0.3;
  cfg.n_steps = 20000;
  cfg.n_burn = 2000;
  const auto out = compare_designs_mcmc(problem, standard_prior(2), noise, designs, {1, 2, 3, 4, 5}, cfg);
  const double worst = *std::max_element(out.mean_trace.begin() + 1, out.mean_trace.end());
  EXPECT_LE(out.mean_trace[0], worst);
  // Analytic cross-check of the greedy design in the linear case.
  EXPECT_NEAR(out.mean_trace[0], 1.0 + 1.0 / 101.0, 0.1);
}
