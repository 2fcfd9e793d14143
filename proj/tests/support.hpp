// Shared fixtures for the test suite.

#ifndef ZOKW_TESTS_SUPPORT_HPP
#define ZOKW_TESTS_SUPPORT_HPP

#include <algorithm>
#include <cmath>
#include <limits>

#include "zokw/zokw.hpp"

namespace zokw::testing {

/// f(theta; zeta) = theta^T A theta + x^T theta with x ~ N(0, I): per-sample
/// Hessian 2A, exact under finite differences.
class QuadraticOracle {
 public:
  explicit QuadraticOracle(SymMatrix a, double noise = 1.0) : a_(std::move(a)), noise_(noise) {}
  std::size_t dim() const { return a_.dim(); }
  double loss(std::span<const double> theta, const DataPoint& z) const {
    return a_.quadratic_form(theta) + dot(z.x, theta);
  }
  DataPoint sample(Rng& rng) const {
    DataPoint z{standard_normal_vector(dim(), rng), 0.0};
    for (double& v : z.x) v *= noise_;
    return z;
  }
  const SymMatrix& a() const { return a_; }

 private:
  SymMatrix a_;
  double noise_;
};

/// f(theta; zeta) = c^T theta + y, affine in theta.
class AffineOracle {
 public:
  explicit AffineOracle(Vector c) : c_(std::move(c)) {}
  std::size_t dim() const { return c_.size(); }
  double loss(std::span<const double> theta, const DataPoint& z) const { return dot(c_, theta) + z.y; }
  DataPoint sample(Rng& rng) const { return {Vector(dim(), 0.0), standard_normal(rng)}; }

 private:
  Vector c_;
};

/// Returns NaN once theta leaves the unit ball.
class NanOracle {
 public:
  explicit NanOracle(std::size_t d) : d_(d) {}
  std::size_t dim() const { return d_; }
  double loss(std::span<const double> theta, const DataPoint&) const {
    return norm2(theta) > 1.0 ? std::numeric_limits<double>::quiet_NaN() : 0.0;
  }
  DataPoint sample(Rng&) const { return {Vector(d_, 0.0), 0.0}; }

 private:
  std::size_t d_;
};

inline SymMatrix random_symmetric(std::size_t d, Rng& rng) {
  Matrix m(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j <= i; ++j) m(i, j) = m(j, i) = standard_normal(rng);
  return SymMatrix(m);
}

/// G G^T / d + 0.1 I with G Gaussian.
inline SymMatrix random_psd(std::size_t d, Rng& rng) {
  Matrix g(d, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) g(i, j) = standard_normal(rng);
  SymMatrix s = SymMatrix::symmetric_part(g * g.transpose());
  s *= 1.0 / static_cast<double>(d);
  s += 0.1 * SymMatrix::identity(d);
  return s;
}

inline double max_abs_diff(const SymMatrix& a, const SymMatrix& b) { return (a - b).max_abs(); }

inline double max_abs_diff(const Matrix& a, const Matrix& b) { return (a - b).max_abs(); }

/// Empirical covariance of the rows of `samples` about their mean.
inline SymMatrix sample_covariance(const std::vector<Vector>& samples) {
  const std::size_t d = samples.front().size();
  Vector mean(d, 0.0);
  for (const auto& s : samples)
    for (std::size_t i = 0; i < d; ++i) mean[i] += s[i] / static_cast<double>(samples.size());
  SymMatrix cov(d);
  for (const auto& s : samples) cov.add_outer(subtract(s, mean), 1.0 / static_cast<double>(samples.size() - 1));
  return cov;
}

inline ExperimentConfig small_linear_config(std::size_t d = 5, std::uint64_t n = 2000, std::uint64_t reps = 4) {
  ExperimentConfig cfg;
  cfg.run_id = "unit";
  cfg.model.family = ModelFamily::Linear;
  cfg.model.theta_star = random_unit_vector(d, kDefaultThetaSeed);
  cfg.theta_seed = kDefaultThetaSeed;
  cfg.n = n;
  cfg.replications = reps;
  cfg.seed = 11;
  return cfg;
}

}  // namespace zokw::testing

#endif  // ZOKW_TESTS_SUPPORT_HPP
