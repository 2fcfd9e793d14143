// Random-scaling (fixed-b HAR) inference from the running averages alone.

#ifndef ZOKW_RANDOM_SCALING_HPP
#define ZOKW_RANDOM_SCALING_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "zokw/linalg.hpp"
#include "zokw/plugin.hpp"
#include "zokw/random.hpp"

namespace zokw {

struct KahanSum {
  double sum = 0.0;
  double compensation = 0.0;

  void add(double x) {
    const double y = x - compensation;
    const double t = sum + y;
    compensation = (t - sum) - y;
    sum = t;
  }
};

/// Accumulates A = sum i^2 theta_bar_i theta_bar_i^T, b = sum i^2 theta_bar_i
/// and s = sum i^2 so that V_n can be assembled at any n in O(d^2).
class ScalingAccumulator {
 public:
  explicit ScalingAccumulator(std::size_t d, bool diagonal_only = false)
      : d_(d), diagonal_only_(diagonal_only), a_(diagonal_only ? d : d * (d + 1) / 2), b_(d) {}

  void update(std::span<const double> theta_bar_i, std::uint64_t i) {
    if (i != n_ + 1) {
      std::ostringstream msg;
      msg << "ScalingAccumulator: expected iterate index " << n_ + 1 << ", got " << i;
      throw std::invalid_argument(msg.str());
    }
    if (theta_bar_i.size() != d_) throw DimensionError("ScalingAccumulator: dimension mismatch");
    const double w = static_cast<double>(i) * static_cast<double>(i);
    if (diagonal_only_) {
      for (std::size_t k = 0; k < d_; ++k) a_[k].add(w * theta_bar_i[k] * theta_bar_i[k]);
    } else {
      std::size_t idx = 0;
      for (std::size_t k = 0; k < d_; ++k) {
        const double wk = w * theta_bar_i[k];
        for (std::size_t l = k; l < d_; ++l) a_[idx++].add(wk * theta_bar_i[l]);
      }
    }
    for (std::size_t k = 0; k < d_; ++k) b_[k].add(w * theta_bar_i[k]);
    s_.add(w);
    n_ = i;
  }

  std::size_t dim() const { return d_; }
  std::uint64_t count() const { return n_; }
  bool diagonal_only() const { return diagonal_only_; }

  double a(std::size_t k, std::size_t l) const {
    if (k > l) std::swap(k, l);
    if (diagonal_only_) {
      if (k != l) throw std::logic_error("ScalingAccumulator: off-diagonal entry requested in diagonal-only mode");
      return a_[k].sum;
    }
    return a_[k * d_ - k * (k + 1) / 2 + l].sum;
  }
  double b(std::size_t k) const { return b_[k].sum; }
  double s() const { return s_.sum; }

 private:
  std::size_t d_;
  bool diagonal_only_;
  std::vector<KahanSum> a_;  // packed upper triangle (or diagonal)
  std::vector<KahanSum> b_;
  KahanSum s_;
  std::uint64_t n_ = 0;
};

inline ScalingAccumulator& scaling_update(ScalingAccumulator& acc, std::span<const double> theta_bar_i, std::uint64_t i) {
  acc.update(theta_bar_i, i);
  return acc;
}

/// V_n = (A - theta_bar b^T - b theta_bar^T + s theta_bar theta_bar^T) / n^2.
/// In diagonal-only mode the off-diagonal entries are left at zero.
inline SymMatrix assemble_v(const ScalingAccumulator& acc, std::span<const double> theta_bar_n) {
  const std::size_t d = acc.dim();
  if (theta_bar_n.size() != d) throw DimensionError("assemble_v: dimension mismatch");
  SymMatrix v(d);
  if (acc.count() == 0) return v;
  const double n = static_cast<double>(acc.count());
  const double inv_n2 = 1.0 / (n * n);
  for (std::size_t k = 0; k < d; ++k)
    for (std::size_t l = k; l < d; ++l) {
      if (acc.diagonal_only() && k != l) continue;
      const double value = acc.a(k, l) - theta_bar_n[k] * acc.b(l) - acc.b(k) * theta_bar_n[l] +
                           acc.s() * theta_bar_n[k] * theta_bar_n[l];
      v.set(k, l, value * inv_n2);
    }
  return v;
}

/// Critical values of W_1 / sqrt(int_0^1 (W_r - r W_1)^2 dr) at one-sided
/// cumulative probabilities 0.90, 0.95, 0.975, 0.99.
struct QuantileTable {
  static constexpr std::array<double, 4> probabilities{0.90, 0.95, 0.975, 0.99};
  static constexpr std::array<double, 4> critical_values{3.875, 5.323, 6.747, 8.613};

  /// Critical value for a two-sided interval at `level`; the limit law is
  /// symmetric, so this is the (1 + level)/2 one-sided entry. Untabled levels
  /// are refused.
  static double two_sided(double level) {
    const double one_sided = 0.5 * (1.0 + level);
    for (std::size_t k = 0; k < probabilities.size(); ++k)
      if (std::abs(probabilities[k] - one_sided) < 1e-9) return critical_values[k];
    std::ostringstream msg;
    msg << "random scaling: level " << level << " is not tabled (supported: 0.80, 0.90, 0.95, 0.98)";
    throw std::invalid_argument(msg.str());
  }
};

/// sqrt(n) w^T (theta_bar - theta_ref) / sqrt(w^T V w).
inline double scaling_statistic(std::span<const double> theta_bar, std::span<const double> theta_ref, const SymMatrix& v,
                                std::span<const double> w, std::uint64_t n) {
  const double denom = v.quadratic_form(w);
  if (!(denom > 1e-14)) {
    std::ostringstream msg;
    msg << "scaling_statistic: degenerate scaling w^T V w = " << denom;
    throw std::domain_error(msg.str());
  }
  const Vector diff = subtract(theta_bar, theta_ref);
  return std::sqrt(static_cast<double>(n)) * dot(w, diff) / std::sqrt(denom);
}

inline ConfidenceInterval scaling_ci(std::span<const double> theta_bar, const SymMatrix& v, std::span<const double> w,
                                     std::uint64_t n, double level) {
  if (n == 0) throw std::invalid_argument("scaling_ci: n must be at least 1");
  const double cv = QuantileTable::two_sided(level);
  const double var = std::max(0.0, v.quadratic_form(w));
  ConfidenceInterval ci;
  ci.center = dot(w, theta_bar);
  ci.half_width = cv * std::sqrt(var / static_cast<double>(n));
  ci.level = level;
  ci.method = CiMethod::RandomScaling;
  ci.degenerate = var == 0.0;
  return ci;
}

struct PivotQuantiles {
  std::vector<double> probabilities;
  std::vector<double> estimates;
  std::vector<double> tabled;
  double median = 0.0;
};

/// Monte-Carlo quantiles of W_1 / sqrt(int_0^1 (W_r - r W_1)^2 dr) from
/// discretized Brownian paths, with the integral as a right-endpoint Riemann sum.
inline PivotQuantiles simulate_pivot_quantiles(std::size_t num_paths, std::size_t path_steps, Rng& rng) {
  if (num_paths == 0 || path_steps == 0) throw std::invalid_argument("simulate_pivot_quantiles: empty simulation");
  std::normal_distribution<double> increment(0.0, std::sqrt(1.0 / static_cast<double>(path_steps)));
  std::vector<double> path(path_steps);
  std::vector<double> stats(num_paths);
  const double steps = static_cast<double>(path_steps);
  for (std::size_t p = 0; p < num_paths; ++p) {
    double w = 0.0;
    for (std::size_t j = 0; j < path_steps; ++j) {
      w += increment(rng);
      path[j] = w;
    }
    const double w1 = w;
    double integral = 0.0;
    for (std::size_t j = 0; j < path_steps; ++j) {
      const double bridge = path[j] - (static_cast<double>(j + 1) / steps) * w1;
      integral += bridge * bridge;
    }
    integral /= steps;
    stats[p] = w1 / std::sqrt(integral);
  }

  auto quantile = [&](double prob) {
    const auto idx = static_cast<std::size_t>(std::clamp(std::ceil(prob * static_cast<double>(num_paths)) - 1.0, 0.0,
                                                         static_cast<double>(num_paths - 1)));
    std::nth_element(stats.begin(), stats.begin() + static_cast<std::ptrdiff_t>(idx), stats.end());
    return stats[idx];
  };

  PivotQuantiles out;
  for (std::size_t k = 0; k < QuantileTable::probabilities.size(); ++k) {
    out.probabilities.push_back(QuantileTable::probabilities[k]);
    out.tabled.push_back(QuantileTable::critical_values[k]);
    out.estimates.push_back(quantile(QuantileTable::probabilities[k]));
  }
  out.median = quantile(0.5);
  return out;
}

}  // namespace zokw

#endif  // ZOKW_RANDOM_SCALING_HPP
