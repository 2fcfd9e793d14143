// Online plug-in covariance estimation: finite-difference Hessian with
// Bernoulli entry subsampling, eigenvalue thresholding, the gradient Gram
// accumulator, and normal-theory confidence intervals.

#ifndef ZOKW_PLUGIN_HPP
#define ZOKW_PLUGIN_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "zokw/kw.hpp"
#include "zokw/linalg.hpp"
#include "zokw/models.hpp"
#include "zokw/random.hpp"

namespace zokw {

enum class CiMethod { PlugIn, RandomScaling, Oracle };

inline std::string_view to_string(CiMethod m) {
  switch (m) {
    case CiMethod::PlugIn: return "plugin";
    case CiMethod::RandomScaling: return "random_scaling";
    case CiMethod::Oracle: return "oracle";
  }
  return "unknown";
}

struct ConfidenceInterval {
  double center = 0.0;
  double half_width = 0.0;
  double level = 0.95;
  CiMethod method = CiMethod::PlugIn;
  bool degenerate = false;

  double lower() const { return center - half_width; }
  double upper() const { return center + half_width; }
  double length() const { return 2.0 * half_width; }
  bool contains(double x) const { return lower() <= x && x <= upper(); }
};

/// One iteration's finite-difference Hessian G~_n. Only entries with
/// sampled(k, l) set were computed; the others are zero.
struct HessianBlock {
  Matrix values;
  std::vector<char> sampled;  // row-major d x d mask
  std::uint64_t evaluations = 0;

  bool is_sampled(std::size_t k, std::size_t l) const { return sampled[k * values.cols() + l] != 0; }
  std::size_t sampled_count() const { return static_cast<std::size_t>(std::count(sampled.begin(), sampled.end(), 1)); }
};

/// G~_kl = [f(theta + h e_k + h e_l) - f(theta + h e_l) - f(theta + h e_k) + f(theta)] / h^2,
/// each (k, l) computed independently with probability p. Function values are
/// cached within the call, so every distinct point is evaluated once.
template <LossOracle O>
HessianBlock hessian_entry_block(const O& oracle, std::span<const double> theta, const DataPoint& zeta, double h,
                                 Rng& rng, double p) {
  if (!(h > 0.0)) throw std::invalid_argument("hessian_entry_block: spacing h must be positive");
  if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("hessian_entry_block: p must lie in (0, 1]");
  const std::size_t d = theta.size();
  HessianBlock block{Matrix(d, d), std::vector<char>(d * d, 0), 0};

  if (p == 1.0) {
    std::fill(block.sampled.begin(), block.sampled.end(), 1);
  } else {
    std::bernoulli_distribution coin(p);
    for (char& s : block.sampled) s = coin(rng) ? 1 : 0;
  }

  constexpr double kUnset = std::numeric_limits<double>::quiet_NaN();
  Vector point(theta.begin(), theta.end());
  auto evaluate = [&](std::span<const double> at) {
    ++block.evaluations;
    const double f = oracle.loss(at, zeta);
    if (!std::isfinite(f)) throw OracleError("hessian_entry_block: loss oracle returned a non-finite value");
    return f;
  };

  std::optional<double> base;
  Vector single(d, kUnset);
  Matrix pair(d, d, kUnset);  // upper triangle used

  auto single_value = [&](std::size_t k) {
    if (std::isnan(single[k])) {
      point[k] += h;
      single[k] = evaluate(point);
      point[k] = theta[k];
    }
    return single[k];
  };
  auto pair_value = [&](std::size_t k, std::size_t l) {
    const std::size_t a = std::min(k, l);
    const std::size_t b = std::max(k, l);
    if (std::isnan(pair(a, b))) {
      point[a] += h;
      point[b] += h;
      pair(a, b) = evaluate(point);
      point[a] = theta[a];
      point[b] = theta[b];
    }
    return pair(a, b);
  };

  const double inv_h2 = 1.0 / (h * h);
  for (std::size_t k = 0; k < d; ++k)
    for (std::size_t l = 0; l < d; ++l) {
      if (!block.is_sampled(k, l)) continue;
      if (!base) base = evaluate(theta);
      block.values(k, l) = (pair_value(k, l) - single_value(l) - single_value(k) + *base) * inv_h2;
    }
  return block;
}

/// Randomized two-direction Hessian contribution
///   (1 / (m h^2)) sum_j [Delta_{h v_j} f(theta + h u_j) - Delta_{h v_j} f(theta)] u_j v_j^T
/// with u_j, v_j the rows of the two batches.
template <LossOracle O>
Matrix naive_hessian_update(const O& oracle, std::span<const double> theta, const DataPoint& zeta, double h,
                            const Matrix& u_batch, const Matrix& v_batch) {
  if (u_batch.rows() == 0) throw std::invalid_argument("naive_hessian_update: empty direction batch");
  if (u_batch.rows() != v_batch.rows()) throw std::invalid_argument("naive_hessian_update: batch lengths differ");
  const std::size_t d = theta.size();
  if (u_batch.cols() != d || v_batch.cols() != d) throw DimensionError("naive_hessian_update: direction dimension mismatch");
  const std::size_t m = u_batch.rows();
  const double base = oracle.loss(theta, zeta);
  Matrix out(d, d);
  Vector point(d);
  auto at = [&](std::span<const double> a, double sa, std::span<const double> b, double sb) {
    for (std::size_t i = 0; i < d; ++i) point[i] = theta[i] + sa * a[i] + sb * b[i];
    return oracle.loss(point, zeta);
  };
  for (std::size_t j = 0; j < m; ++j) {
    const auto u = u_batch.row(j);
    const auto v = v_batch.row(j);
    const double second = at(u, h, v, h) - at(u, h, v, 0.0) - at(u, 0.0, v, h) + base;
    const double w = second / (static_cast<double>(m) * h * h);
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t l = 0; l < d; ++l) out(k, l) += w * u[k] * v[l];
  }
  return out;
}

/// How entries that were not sampled this iteration enter the running sum.
enum class Subsampling {
  InverseProbability,  // sampled entries weighted by 1/p, others contribute 0
  InheritPrevious,     // others repeat their most recent computed value
};

/// Running sum of symmetrized per-iteration Hessian estimates.
class HessianAccumulator {
 public:
  HessianAccumulator(std::size_t d, double p = 1.0, double kappa1 = 1e-3, std::optional<double> kappa2 = std::nullopt,
                     Subsampling mode = Subsampling::InverseProbability)
      : running_sum_(d), p_(p), kappa1_(kappa1), kappa2_(kappa2), mode_(mode), last_(d, d) {
    if (!(p > 0.0 && p <= 1.0)) throw std::invalid_argument("HessianAccumulator: p must lie in (0, 1]");
    if (!(kappa1 > 0.0)) throw std::invalid_argument("HessianAccumulator: kappa1 must be positive");
    if (kappa2 && !(*kappa2 > kappa1)) throw std::invalid_argument("HessianAccumulator: kappa2 must exceed kappa1");
  }

  void add(const HessianBlock& block) {
    const std::size_t d = dim();
    if (block.values.rows() != d) throw DimensionError("HessianAccumulator::add: dimension mismatch");
    if (mode_ == Subsampling::InverseProbability) {
      running_sum_.add_symmetric_part(block.values, 1.0 / p_);
    } else {
      for (std::size_t k = 0; k < d; ++k)
        for (std::size_t l = 0; l < d; ++l)
          if (block.is_sampled(k, l)) last_(k, l) = block.values(k, l);
      running_sum_.add_symmetric_part(last_);
    }
    ++count_;
  }

  /// Adds a full (unsubsampled) contribution such as naive_hessian_update output.
  void add(const Matrix& contribution) {
    running_sum_.add_symmetric_part(contribution);
    ++count_;
  }

  std::size_t dim() const { return running_sum_.dim(); }
  std::uint64_t count() const { return count_; }
  double p() const { return p_; }
  double kappa1() const { return kappa1_; }
  std::optional<double> kappa2() const { return kappa2_; }
  const SymMatrix& running_sum() const { return running_sum_; }

  /// H~_n = running_sum / n.
  SymMatrix mean() const {
    if (count_ == 0) throw std::logic_error("HessianAccumulator: no iterations accumulated");
    return (1.0 / static_cast<double>(count_)) * running_sum_;
  }

 private:
  SymMatrix running_sum_;
  std::uint64_t count_ = 0;
  double p_;
  double kappa1_;
  std::optional<double> kappa2_;
  Subsampling mode_;
  Matrix last_;
};

namespace detail {

inline double clamp_eigenvalue(double lambda, double kappa1, std::optional<double> kappa2) {
  if (kappa2) lambda = std::min(*kappa2, lambda);
  return std::max(kappa1, lambda);
}

}  // namespace detail

/// U max(kappa1, min(kappa2, Lambda)) U^T from the eigendecomposition of H~_n.
inline SymMatrix thresholded_hessian(const HessianAccumulator& acc) {
  const auto eig = sym_eigen(acc.mean(), {.label = "averaged Hessian estimate"});
  return eig.reconstruct([&](double x) { return detail::clamp_eigenvalue(x, acc.kappa1(), acc.kappa2()); });
}

/// Inverse of thresholded_hessian, from the same eigendecomposition.
inline SymMatrix thresholded_hessian_inverse(const HessianAccumulator& acc) {
  const auto eig = sym_eigen(acc.mean(), {.label = "averaged Hessian estimate"});
  return eig.reconstruct([&](double x) { return 1.0 / detail::clamp_eigenvalue(x, acc.kappa1(), acc.kappa2()); });
}

/// Q^_n = (1/n) sum g_i g_i^T, one pass.
class GramAccumulator {
 public:
  explicit GramAccumulator(std::size_t d) : running_sum_(d) {}

  void update(std::span<const double> g) {
    running_sum_.add_outer(g);
    ++count_;
  }

  std::uint64_t count() const { return count_; }
  const SymMatrix& running_sum() const { return running_sum_; }

  SymMatrix mean() const {
    if (count_ == 0) throw std::logic_error("GramAccumulator: no gradients accumulated");
    return (1.0 / static_cast<double>(count_)) * running_sum_;
  }

 private:
  SymMatrix running_sum_;
  std::uint64_t count_ = 0;
};

inline GramAccumulator& gram_update(GramAccumulator& acc, std::span<const double> g_hat) {
  acc.update(g_hat);
  return acc;
}

/// H^^{-1} Q^ H^^{-1}.
inline SymMatrix plugin_covariance(const HessianAccumulator& h_acc, const GramAccumulator& g_acc) {
  return sandwich(thresholded_hessian_inverse(h_acc), g_acc.mean());
}

/// w^T theta_bar +- z_{level} sqrt(w^T cov w / n).
inline ConfidenceInterval normal_ci(std::span<const double> theta_bar, const SymMatrix& cov, std::span<const double> w,
                                    std::uint64_t n, double level, CiMethod method) {
  if (n == 0) throw std::invalid_argument("confidence interval: n must be at least 1");
  double var = cov.quadratic_form(w);
  if (var < -1e-10) {
    std::ostringstream msg;
    msg << "confidence interval: w^T cov w = " << var << " is negative";
    throw std::runtime_error(msg.str());
  }
  var = std::max(var, 0.0);
  ConfidenceInterval ci;
  ci.center = dot(w, theta_bar);
  ci.half_width = two_sided_z(level) * std::sqrt(var / static_cast<double>(n));
  ci.level = level;
  ci.method = method;
  ci.degenerate = var == 0.0;
  return ci;
}

inline ConfidenceInterval plugin_ci(std::span<const double> theta_bar, const SymMatrix& cov, std::span<const double> w,
                                    std::uint64_t n, double level) {
  return normal_ci(theta_bar, cov, w, n, level, CiMethod::PlugIn);
}

}  // namespace zokw

#endif  // ZOKW_PLUGIN_HPP
