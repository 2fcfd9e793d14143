// Loss oracles for linear, logistic and quantile regression together with the
// population Hessian H, gradient Gram matrix S and the limiting covariances
// built from them.

#ifndef ZOKW_MODELS_HPP
#define ZOKW_MODELS_HPP

#include <cmath>
#include <concepts>
#include <cstdint>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

#include "zokw/directions.hpp"
#include "zokw/linalg.hpp"
#include "zokw/random.hpp"

namespace zokw {

struct DataPoint {
  Vector x;
  double y = 0.0;
};

/// Anything the optimizer can query: a loss value f(theta; zeta) and a sampler
/// for fresh data points zeta.
template <class O>
concept LossOracle = requires(const O& o, std::span<const double> theta, const DataPoint& z, Rng& rng) {
  { o.loss(theta, z) } -> std::convertible_to<double>;
  { o.sample(rng) } -> std::same_as<DataPoint>;
  { o.dim() } -> std::convertible_to<std::size_t>;
};

enum class ModelFamily { Linear, Logistic, Quantile };
enum class DesignKind { Identity, Equicorr };

inline std::string_view to_string(ModelFamily f) {
  switch (f) {
    case ModelFamily::Linear: return "linear";
    case ModelFamily::Logistic: return "logistic";
    case ModelFamily::Quantile: return "quantile";
  }
  return "unknown";
}

inline std::string_view to_string(DesignKind k) { return k == DesignKind::Identity ? "identity" : "equicorr"; }

struct ModelSpec {
  ModelFamily family = ModelFamily::Linear;
  double sigma2 = 0.2;  // noise variance (linear, quantile)
  double tau = 0.5;     // quantile level
  Vector theta_star;
  DesignKind design = DesignKind::Identity;
  double rho = 0.2;  // equicorrelation off-diagonal

  std::size_t dim() const { return theta_star.size(); }
};

inline void validate(const ModelSpec& spec) {
  const std::size_t d = spec.dim();
  if (d == 0) throw std::invalid_argument("model: theta_star must be non-empty");
  if (!all_finite(spec.theta_star)) throw std::invalid_argument("model: theta_star has non-finite entries");
  if (spec.family != ModelFamily::Logistic && !(spec.sigma2 > 0.0))
    throw std::invalid_argument("model: sigma2 must be positive");
  if (spec.family == ModelFamily::Quantile && !(spec.tau > 0.0 && spec.tau < 1.0))
    throw std::invalid_argument("model: tau must lie in (0, 1)");
  if (spec.design == DesignKind::Equicorr && d > 1) {
    const double lower = -1.0 / static_cast<double>(d - 1);
    if (!(spec.rho > lower && spec.rho < 1.0)) {
      std::ostringstream msg;
      msg << "model: equicorrelation rho must lie in (" << lower << ", 1) for d = " << d;
      throw std::invalid_argument(msg.str());
    }
  }
}

inline SymMatrix design_covariance(const ModelSpec& spec) {
  const std::size_t d = spec.dim();
  SymMatrix sigma = SymMatrix::identity(d);
  if (spec.design == DesignKind::Equicorr)
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) sigma.set(i, j, spec.rho);
  return sigma;
}

/// Uniform draw from the unit sphere in R^d.
inline Vector random_unit_vector(std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Vector v;
  do {
    v = standard_normal_vector(d, rng);
  } while (norm2(v) == 0.0);
  const double n = norm2(v);
  for (double& x : v) x /= n;
  return v;
}

inline double check_loss(double z, double tau) { return z * (tau - (z < 0.0 ? 1.0 : 0.0)); }

inline double softplus(double t) {
  // log(1 + exp(t)) without overflow
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

inline double logistic_sigmoid(double t) { return 1.0 / (1.0 + std::exp(-t)); }

/// Regression loss oracle with its data-generating process.
class RegressionOracle {
 public:
  explicit RegressionOracle(ModelSpec spec) : spec_(std::move(spec)) {
    validate(spec_);
    chol_ = cholesky(design_covariance(spec_));
    if (spec_.family == ModelFamily::Quantile) noise_shift_ = -std::sqrt(spec_.sigma2) * normal_quantile(spec_.tau);
  }

  std::size_t dim() const { return spec_.dim(); }
  const ModelSpec& spec() const { return spec_; }

  double loss(std::span<const double> theta, const DataPoint& z) const {
    const double fit = dot(z.x, theta);
    switch (spec_.family) {
      case ModelFamily::Linear: {
        const double r = z.y - fit;
        return r * r;
      }
      case ModelFamily::Logistic: return softplus(-z.y * fit);
      case ModelFamily::Quantile: return check_loss(z.y - fit, spec_.tau);
    }
    return 0.0;
  }

  /// Per-sample (sub)gradient, used only by the first-order baseline.
  Vector gradient(std::span<const double> theta, const DataPoint& z) const {
    const double fit = dot(z.x, theta);
    double scale = 0.0;
    switch (spec_.family) {
      case ModelFamily::Linear: scale = 2.0 * (fit - z.y); break;
      case ModelFamily::Logistic: scale = -z.y * logistic_sigmoid(-z.y * fit); break;
      case ModelFamily::Quantile: scale = (z.y - fit < 0.0 ? 1.0 : 0.0) - spec_.tau; break;
    }
    Vector g(z.x);
    for (double& v : g) v *= scale;
    return g;
  }

  DataPoint sample(Rng& rng) const {
    const std::size_t d = dim();
    DataPoint z{Vector(d, 0.0), 0.0};
    const Vector e = standard_normal_vector(d, rng);
    for (std::size_t i = 0; i < d; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k <= i; ++k) s += chol_(i, k) * e[k];
      z.x[i] = s;
    }
    const double fit = dot(z.x, spec_.theta_star);
    switch (spec_.family) {
      case ModelFamily::Linear: z.y = fit + std::sqrt(spec_.sigma2) * standard_normal(rng); break;
      case ModelFamily::Logistic: z.y = uniform01(rng) < logistic_sigmoid(fit) ? 1.0 : -1.0; break;
      case ModelFamily::Quantile:
        z.y = fit + noise_shift_ + std::sqrt(spec_.sigma2) * standard_normal(rng);
        break;
    }
    return z;
  }

 private:
  ModelSpec spec_;
  Matrix chol_;
  double noise_shift_ = 0.0;
};

static_assert(LossOracle<RegressionOracle>);

inline RegressionOracle make_oracle(const ModelSpec& spec) { return RegressionOracle(spec); }

namespace detail {

// E[g(s)] and E[g(s) s^2] for s ~ N(0, var), composite Simpson on +-12 sd.
template <class G>
std::pair<double, double> gaussian_moments(G&& g, double var) {
  const double sd = std::sqrt(var);
  constexpr int intervals = 8000;
  const double lo = -12.0 * sd;
  const double step = 24.0 * sd / intervals;
  double m0 = 0.0;
  double m2 = 0.0;
  for (int i = 0; i <= intervals; ++i) {
    const double s = lo + i * step;
    const double w = (i == 0 || i == intervals) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    const double density = std::exp(-0.5 * s * s / var) / (sd * std::sqrt(2.0 * std::numbers::pi));
    const double gs = g(s) * density * w;
    m0 += gs;
    m2 += gs * s * s;
  }
  return {m0 * step / 3.0, m2 * step / 3.0};
}

}  // namespace detail

/// Logistic-model Hessian E[x x^T s'(x^T theta*)] by reduction to one
/// dimension: with s = x^T theta*, x | s is Gaussian, so the expectation splits
/// into E[g(s)] (Sigma - Sigma t t^T Sigma / v) + E[g(s) s^2] Sigma t t^T Sigma / v^2.
inline SymMatrix logistic_hessian(const ModelSpec& spec) {
  const SymMatrix sigma = design_covariance(spec);
  const Vector st = sigma * std::span<const double>(spec.theta_star);
  const double var = dot(spec.theta_star, st);
  if (var == 0.0) return 0.25 * sigma;
  const auto g = [](double s) {
    const double p = logistic_sigmoid(s);
    return p * (1.0 - p);
  };
  const auto [m0, m2] = detail::gaussian_moments(g, var);
  SymMatrix out = m0 * sigma;
  SymMatrix rank_one(spec.dim());
  rank_one.add_outer(st);
  out += (m2 / (var * var) - m0 / var) * rank_one;
  return out;
}

struct MonteCarloMatrix {
  SymMatrix mean;
  SymMatrix standard_error;
};

/// Plain Monte-Carlo estimate of the logistic Hessian; kept as an independent
/// check on logistic_hessian.
inline MonteCarloMatrix logistic_hessian_monte_carlo(const ModelSpec& spec, std::size_t draws, std::uint64_t seed) {
  const RegressionOracle oracle(spec);
  Rng rng(seed);
  const std::size_t d = spec.dim();
  SymMatrix sum(d);
  SymMatrix sum_sq(d);
  Matrix term(d, d);
  for (std::size_t r = 0; r < draws; ++r) {
    const DataPoint z = oracle.sample(rng);
    const double p = logistic_sigmoid(dot(z.x, spec.theta_star));
    const double w = p * (1.0 - p);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) term(i, j) = w * z.x[i] * z.x[j];
    sum.add_symmetric_part(term);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) term(i, j) *= term(i, j);
    sum_sq.add_symmetric_part(term);
  }
  const double n = static_cast<double>(draws);
  MonteCarloMatrix out{(1.0 / n) * sum, SymMatrix(d)};
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      const double mean = out.mean(i, j);
      const double var = std::max(0.0, sum_sq(i, j) / n - mean * mean);
      out.standard_error.set(i, j, std::sqrt(var / n));
    }
  return out;
}

/// Population Hessian H at theta*.
inline SymMatrix analytic_hessian(const ModelSpec& spec) {
  validate(spec);
  const SymMatrix sigma = design_covariance(spec);
  switch (spec.family) {
    case ModelFamily::Linear: return 2.0 * sigma;
    case ModelFamily::Logistic: return logistic_hessian(spec);
    case ModelFamily::Quantile: {
      const double density = normal_pdf(normal_quantile(spec.tau)) / std::sqrt(spec.sigma2);
      return density * sigma;
    }
  }
  throw std::logic_error("analytic_hessian: unhandled family");
}

/// Gram matrix S = E[grad f(theta*) grad f(theta*)^T].
inline SymMatrix analytic_gram(const ModelSpec& spec) {
  validate(spec);
  const SymMatrix sigma = design_covariance(spec);
  switch (spec.family) {
    case ModelFamily::Linear: return (4.0 * spec.sigma2) * sigma;
    case ModelFamily::Logistic: return logistic_hessian(spec);  // information equality
    case ModelFamily::Quantile: return (spec.tau * (1.0 - spec.tau)) * sigma;
  }
  throw std::logic_error("analytic_gram: unhandled family");
}

/// H^{-1} Q_m H^{-1}: limiting covariance of sqrt(n)(theta_bar - theta*).
inline SymMatrix oracle_covariance(const ModelSpec& spec, const DirectionDistribution& dist, const QueryMode& mode) {
  const SymMatrix h_inv = inverse_spd(analytic_hessian(spec));
  return sandwich(h_inv, analytic_q_multi(dist, analytic_gram(spec), mode));
}

/// H^{-1} S H^{-1}: the first-order (Robbins-Monro) limiting covariance.
inline SymMatrix first_order_covariance(const ModelSpec& spec) {
  return sandwich(inverse_spd(analytic_hessian(spec)), analytic_gram(spec));
}

}  // namespace zokw

#endif  // ZOKW_MODELS_HPP
