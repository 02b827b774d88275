#ifndef BAEOED_TESTS_SUPPORT_HPP
#define BAEOED_TESTS_SUPPORT_HPP

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include <Eigen/Dense>

#include "baeoed/baeoed.hpp"

namespace testing_support {

using baeoed::Matrix;
using baeoed::Vector;

/// Hand-rolled generators for property tests; every draw comes from one
/// seeded engine so failures replay from the printed seed.
class Gen {
 public:
  explicit Gen(std::uint64_t seed) : eng_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(eng_);
  }
  Eigen::Index integer(Eigen::Index lo, Eigen::Index hi) {
    return std::uniform_int_distribution<Eigen::Index>(lo, hi)(eng_);
  }
  Matrix normal(Eigen::Index r, Eigen::Index c) {
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(eng_);
    return m;
  }
  Vector normal_vec(Eigen::Index n) { return normal(n, 1).col(0); }
  /// SPD with eigenvalues bounded below by `floor`.
  Matrix spd(Eigen::Index n, double floor = 0.1) {
    const Matrix a = normal(n, n);
    return a * a.transpose() / static_cast<double>(n) + floor * Matrix::Identity(n, n);
  }
  std::uint64_t seed() { return eng_(); }

 private:
  std::mt19937_64 eng_;
};

inline double rel_diff(const Matrix& a, const Matrix& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-300});
  return (a - b).norm() / scale;
}

inline double rel_diff(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  ScratchDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "baeoed_test_XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

/// Sample-mode total-error model for a linear problem A(v) = F v with
/// Gaussian noise, built from a fresh ensemble.
inline baeoed::TotalErrorModel linear_model(const Matrix& f, const baeoed::GaussianDensity& prior,
                                            const baeoed::GaussianDensity& noise, Eigen::Index q,
                                            std::uint64_t seed, const baeoed::LinearSurrogate& s) {
  const auto problem = baeoed::linear_problem(f);
  const auto e = baeoed::synthesize_ensemble(problem, prior, q, seed);
  return baeoed::estimate_stats(e, s, noise);
}

}  // namespace testing_support

#endif  // BAEOED_TESTS_SUPPORT_HPP
