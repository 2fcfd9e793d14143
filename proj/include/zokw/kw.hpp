// Kiefer-Wolfowitz stochastic approximation with random search directions,
// Polyak-Ruppert averaging, and the finite-difference stochastic Newton variant.

#ifndef ZOKW_KW_HPP
#define ZOKW_KW_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "zokw/directions.hpp"
#include "zokw/linalg.hpp"
#include "zokw/models.hpp"
#include "zokw/random.hpp"

namespace zokw {

class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when an iterate leaves the ball ||theta|| <= kDivergenceBound.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::uint64_t iteration, double norm)
      : std::runtime_error(message(iteration, norm)), iteration_(iteration) {}
  std::uint64_t iteration() const { return iteration_; }

 private:
  static std::string message(std::uint64_t iteration, double norm) {
    std::ostringstream msg;
    msg << "KW iterate diverged at n = " << iteration << " (||theta|| = " << norm << ")";
    return msg.str();
  }
  std::uint64_t iteration_;
};

inline constexpr double kDivergenceBound = 1e8;

/// eta_n = eta0 n^-alpha and h_n = h0 n^-gamma.
struct Schedules {
  double eta0 = 0.05;
  double alpha = 0.501;
  double h0 = 0.01;
  double gamma = 0.501;

  double eta(std::uint64_t n) const { return eta0 * std::pow(static_cast<double>(n), -alpha); }
  double h(std::uint64_t n) const { return h0 * std::pow(static_cast<double>(n), -gamma); }
};

/// All range violations, empty when the schedules are admissible.
inline std::vector<std::string> schedule_violations(const Schedules& s) {
  std::vector<std::string> out;
  if (!(s.eta0 > 0.0)) out.emplace_back("eta0 must be positive");
  if (!(s.alpha > 0.5 && s.alpha < 1.0)) out.emplace_back("alpha must lie in (0.5, 1)");
  if (!(s.h0 > 0.0)) out.emplace_back("h0 must be positive");
  if (!(s.gamma > 0.5 && s.gamma < 1.0)) out.emplace_back("gamma must lie in (0.5, 1)");
  return out;
}

inline void validate(const Schedules& s) {
  const auto v = schedule_violations(s);
  if (!v.empty()) throw std::invalid_argument("schedules: " + v.front());
}

struct KwRunState {
  std::uint64_t n = 0;
  Vector theta;
  Vector theta_bar;
  Vector last_gradient;
  std::uint64_t query_count = 0;

  bool keep_log = false;
  std::vector<Vector> iterate_log;  // theta_1..theta_n when keep_log is set

  static KwRunState initial(Vector theta0) {
    KwRunState s;
    s.theta_bar = Vector(theta0.size(), 0.0);
    s.last_gradient = Vector(theta0.size(), 0.0);
    s.theta = std::move(theta0);
    return s;
  }
};

namespace detail {

template <LossOracle O>
double checked_loss(const O& oracle, std::span<const double> theta, const DataPoint& z, double h,
                    std::span<const double> v) {
  const double f = oracle.loss(theta, z);
  if (!std::isfinite(f)) {
    std::ostringstream msg;
    msg << "loss oracle returned " << f << " at ||theta|| = " << norm2(theta) << ", h = " << h
        << ", ||v|| = " << norm2(v);
    throw OracleError(msg.str());
  }
  return f;
}

}  // namespace detail

/// Two-query finite-difference gradient [f(theta + h v) - f(theta)] / h * v.
template <LossOracle O>
Vector kw_gradient(const O& oracle, std::span<const double> theta, const DataPoint& zeta, double h,
                   std::span<const double> v) {
  if (!(h > 0.0)) throw std::invalid_argument("kw_gradient: spacing h must be positive");
  const double base = detail::checked_loss(oracle, theta, zeta, h, v);
  const Vector shifted = axpy(theta, h, v);
  const double moved = detail::checked_loss(oracle, shifted, zeta, h, v);
  const double slope = (moved - base) / h;
  Vector g(v.begin(), v.end());
  for (double& x : g) x *= slope;
  return g;
}

/// (m+1)-query estimator: mean of the per-direction finite differences, all
/// sharing a single base evaluation f(theta; zeta). Directions are the rows.
template <LossOracle O>
Vector multi_query_gradient(const O& oracle, std::span<const double> theta, const DataPoint& zeta, double h,
                            const Matrix& directions) {
  if (directions.rows() == 0) throw std::invalid_argument("multi_query_gradient: empty direction batch");
  if (directions.cols() != theta.size()) throw DimensionError("multi_query_gradient: direction dimension mismatch");
  if (!(h > 0.0)) throw std::invalid_argument("multi_query_gradient: spacing h must be positive");
  const std::size_t d = theta.size();
  const std::size_t m = directions.rows();
  const double base = detail::checked_loss(oracle, theta, zeta, h, directions.row(0));
  Vector g(d, 0.0);
  Vector shifted(d);
  for (std::size_t j = 0; j < m; ++j) {
    const auto v = directions.row(j);
    for (std::size_t i = 0; i < d; ++i) shifted[i] = theta[i] + h * v[i];
    const double slope = (detail::checked_loss(oracle, shifted, zeta, h, v) - base) / h;
    for (std::size_t i = 0; i < d; ++i) g[i] += slope * v[i];
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  for (double& x : g) x *= inv_m;
  return g;
}

/// What a step saw before moving: the point theta_{n-1}, the data point and the
/// spacing used. Inference accumulators hook in through this.
struct StepContext {
  std::uint64_t n;  // index of the iterate being produced
  std::span<const double> theta_prev;
  const DataPoint& zeta;
  double h;
  const Vector& gradient;
};

struct NoObserver {
  void operator()(const StepContext&) const {}
};

namespace detail {

inline void advance(KwRunState& state, const Vector& gradient, double gain) {
  for (std::size_t i = 0; i < state.theta.size(); ++i) state.theta[i] -= gain * gradient[i];
  const double nrm = norm2(state.theta);
  if (!(nrm <= kDivergenceBound)) throw DivergenceError(state.n, nrm);
  const double inv_n = 1.0 / static_cast<double>(state.n);
  for (std::size_t i = 0; i < state.theta.size(); ++i)
    state.theta_bar[i] += (state.theta[i] - state.theta_bar[i]) * inv_n;
  if (state.keep_log) state.iterate_log.push_back(state.theta);
}

}  // namespace detail

/// One AKW iteration: draw zeta and a direction batch, form the multi-query
/// gradient at theta_n with h_{n+1}, move by eta_{n+1}, update the average.
///
/// The observer runs after the gradient is formed and before the iterate
/// moves, so it sees theta_n, the same zeta and the same spacing.
template <LossOracle O, class Observer = NoObserver>
void step(KwRunState& state, const O& oracle, const DirectionDistribution& dist, const QueryMode& mode,
          const Schedules& sched, Rng& rng, Observer&& observer = {}) {
  const std::uint64_t n = state.n + 1;
  const DataPoint zeta = oracle.sample(rng);
  const Matrix directions = sample_batch(dist, mode, rng);
  const double h = sched.h(n);
  Vector g = multi_query_gradient(oracle, state.theta, zeta, h, directions);
  state.query_count += mode.m + 1;
  observer(StepContext{n, state.theta, zeta, h, g});
  state.n = n;
  detail::advance(state, g, sched.eta(n));
  state.last_gradient = std::move(g);
}

/// Checkpoint record streamed by run(): (n, theta_bar_n, queries so far).
struct TrajectoryPoint {
  std::uint64_t n;
  Vector theta_bar;
  std::uint64_t queries;
};

struct RunParameters {
  QueryMode mode;
  Schedules sched;
  Vector theta0;
  std::vector<std::uint64_t> checkpoints;  // ascending iteration marks
};

template <LossOracle O>
KwRunState run(const O& oracle, const DirectionDistribution& dist, const RunParameters& params, std::uint64_t n,
               Rng& rng, const std::function<void(const TrajectoryPoint&)>& on_checkpoint = {}) {
  validate(params.mode, dist);
  KwRunState state = KwRunState::initial(params.theta0.empty() ? Vector(oracle.dim(), 0.0) : params.theta0);
  auto next_mark = params.checkpoints.begin();
  for (std::uint64_t i = 0; i < n; ++i) {
    step(state, oracle, dist, params.mode, params.sched, rng);
    while (next_mark != params.checkpoints.end() && *next_mark <= state.n) {
      if (*next_mark == state.n && on_checkpoint) on_checkpoint({state.n, state.theta_bar, state.query_count});
      ++next_mark;
    }
  }
  return state;
}

/// Finite-difference stochastic Newton step
///   theta_n = theta_{n-1} - (1/n) H^{-1} g_hat(theta_{n-1}; zeta_n).
/// The final iterate (not the average) is the estimator in this mode.
template <LossOracle O, class Observer = NoObserver>
void newton_step(KwRunState& state, const O& oracle, const DirectionDistribution& dist, const QueryMode& mode,
                 const Schedules& sched, const SymMatrix& hessian_inverse, Rng& rng, Observer&& observer = {}) {
  if (hessian_inverse.dim() != state.theta.size()) throw DimensionError("newton_step: inverse Hessian dimension mismatch");
  const std::uint64_t n = state.n + 1;
  const DataPoint zeta = oracle.sample(rng);
  const Matrix directions = sample_batch(dist, mode, rng);
  const double h = sched.h(n);
  Vector g = multi_query_gradient(oracle, state.theta, zeta, h, directions);
  state.query_count += mode.m + 1;
  observer(StepContext{n, state.theta, zeta, h, g});
  state.n = n;
  detail::advance(state, hessian_inverse * std::span<const double>(g), 1.0 / static_cast<double>(n));
  state.last_gradient = std::move(g);
}

}  // namespace zokw

#endif  // ZOKW_KW_HPP
