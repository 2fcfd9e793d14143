// Monte-Carlo experiment runner: replications over a worker pool, metrics,
// aggregation, CSV/JSON output, the Robbins-Monro baseline and the Newton driver.

#ifndef ZOKW_HARNESS_HPP
#define ZOKW_HARNESS_HPP

#include <atomic>
#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <vector>

#include "zokw/config.hpp"
#include "zokw/experiment.hpp"
#include "zokw/kw.hpp"
#include "zokw/models.hpp"
#include "zokw/plugin.hpp"
#include "zokw/random_scaling.hpp"

namespace zokw {

inline constexpr std::size_t kDiagonalScalingThreshold = 500;

inline std::size_t default_workers() {
  if (const char* env = std::getenv("ZOKW_WORKERS"); env && *env) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end && *end == '\0' && v > 0) return v;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, count) on up to `workers` threads. The first
/// exception thrown by any task is rethrown after all threads join.
template <class F>
void parallel_for(std::size_t count, std::size_t workers, F&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next.store(count);
      }
    }
  };
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < workers; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// One Robbins-Monro step with the exact per-sample (sub)gradient. Charges one
/// query per step.
template <class Observer = NoObserver>
void first_order_step(KwRunState& state, const RegressionOracle& oracle, const Schedules& sched, Rng& rng,
                      Observer&& observer = {}) {
  const std::uint64_t n = state.n + 1;
  const DataPoint zeta = oracle.sample(rng);
  Vector g = oracle.gradient(state.theta, zeta);
  state.query_count += 1;
  observer(StepContext{n, state.theta, zeta, sched.h(n), g});
  state.n = n;
  detail::advance(state, g, sched.eta(n));
  state.last_gradient = std::move(g);
}

/// Everything a replication needs that does not change across replications.
struct ExperimentContext {
  ExperimentConfig cfg;
  RegressionOracle oracle;
  DirectionDistribution dist;
  SymMatrix oracle_cov;  // H^{-1} Q_m H^{-1} (AKW) or H^{-1} S H^{-1} (RM)
  double oracle_cov_norm;
  Vector w;
  double target;  // w^T theta*
  std::vector<CiMethod> methods;

  explicit ExperimentContext(ExperimentConfig c)
      : cfg(std::move(c)),
        oracle(cfg.model),
        dist(build_distribution(cfg.directions, cfg.dim())),
        oracle_cov(cfg.algorithm == Algorithm::Akw ? oracle_covariance(cfg.model, dist, cfg.mode)
                                                   : first_order_covariance(cfg.model)),
        oracle_cov_norm(spectral_norm(oracle_cov)),
        w(cfg.projection()),
        target(dot(w, cfg.model.theta_star)),
        methods(cfg.methods()) {}
};

struct MethodResult {
  CiMethod method;
  double cov_error = std::nan("");
  ConfidenceInterval ci;
  bool valid = false;
};

struct ReplicationResult {
  std::uint64_t replication = 0;
  bool aborted = false;
  std::string abort_reason;
  double est_error = std::nan("");
  std::uint64_t queries = 0;
  Vector theta_bar;
  std::vector<MethodResult> methods;
  std::vector<CheckpointRow> checkpoints;
};

namespace detail {

struct InferenceState {
  std::optional<HessianAccumulator> hessian;
  std::optional<GramAccumulator> gram;
  std::optional<ScalingAccumulator> scaling;
  std::uint64_t hessian_queries = 0;
};

inline double relative_error(std::span<const double> theta_bar, std::span<const double> theta_star) {
  return norm2(subtract(theta_bar, theta_star)) / norm2(theta_star);
}

inline std::vector<MethodResult> evaluate_methods(const ExperimentContext& ctx, const KwRunState& state,
                                                  const InferenceState& inf) {
  std::vector<MethodResult> out;
  for (CiMethod method : ctx.methods) {
    MethodResult r{method};
    if (state.n > 0) {
      switch (method) {
        case CiMethod::PlugIn: {
          const SymMatrix cov = plugin_covariance(*inf.hessian, *inf.gram);
          r.cov_error = spectral_norm(cov - ctx.oracle_cov) / ctx.oracle_cov_norm;
          r.ci = plugin_ci(state.theta_bar, cov, ctx.w, state.n, ctx.cfg.level);
          break;
        }
        case CiMethod::RandomScaling:
          r.ci = scaling_ci(state.theta_bar, assemble_v(*inf.scaling, state.theta_bar), ctx.w, state.n, ctx.cfg.level);
          break;
        case CiMethod::Oracle:
          r.ci = normal_ci(state.theta_bar, ctx.oracle_cov, ctx.w, state.n, ctx.cfg.level, CiMethod::Oracle);
          break;
      }
      r.valid = true;
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace detail

/// One replication on its own stream seed + r. With the plug-in method on,
/// each step also draws the Bernoulli mask and evaluates the Hessian block at
/// the pre-step iterate with the same data point and spacing.
inline ReplicationResult run_replication(const ExperimentContext& ctx, std::uint64_t r) {
  const auto& cfg = ctx.cfg;
  const std::size_t d = cfg.dim();
  Rng rng = replication_stream(cfg.seed, r);
  KwRunState state = KwRunState::initial(cfg.theta0.empty() ? Vector(d, 0.0) : cfg.theta0);

  detail::InferenceState inf;
  if (cfg.inference.plugin) {
    inf.hessian.emplace(d, cfg.inference.p, cfg.inference.kappa1, std::nullopt, cfg.inference.subsampling);
    inf.gram.emplace(d);
  }
  if (cfg.inference.random_scaling) inf.scaling.emplace(d, d > kDiagonalScalingThreshold);

  const Schedules hessian_spacing{cfg.sched.eta0, cfg.sched.alpha, cfg.inference.h0, cfg.sched.gamma};
  auto observer = [&](const StepContext& s) {
    if (!inf.hessian) return;
    HessianBlock block =
        hessian_entry_block(ctx.oracle, s.theta_prev, s.zeta, hessian_spacing.h(s.n), rng, cfg.inference.p);
    inf.hessian_queries += block.evaluations;
    inf.hessian->add(block);
    inf.gram->update(s.gradient);
  };

  ReplicationResult result;
  result.replication = r;
  auto next_mark = cfg.checkpoints.begin();
  try {
    for (std::uint64_t i = 0; i < cfg.n; ++i) {
      if (cfg.algorithm == Algorithm::Akw)
        step(state, ctx.oracle, ctx.dist, cfg.mode, cfg.sched, rng, observer);
      else
        first_order_step(state, ctx.oracle, cfg.sched, rng, observer);
      if (inf.scaling) inf.scaling->update(state.theta_bar, state.n);
      if (next_mark != cfg.checkpoints.end() && *next_mark == state.n) {
        const double err = detail::relative_error(state.theta_bar, cfg.model.theta_star);
        const auto methods = detail::evaluate_methods(ctx, state, inf);
        const std::uint64_t queries = state.query_count + inf.hessian_queries;
        if (methods.empty())
          result.checkpoints.push_back({cfg.run_id, r, state.n, "none", err, std::nan(""), std::nan(""), 0, queries});
        for (const auto& m : methods)
          result.checkpoints.push_back({cfg.run_id, r, state.n, std::string(to_string(m.method)), err, m.ci.center,
                                        m.ci.length(), m.ci.contains(ctx.target) ? 1 : 0, queries});
        ++next_mark;
      }
    }
  } catch (const DivergenceError& e) {
    result.aborted = true;
    result.abort_reason = e.what();
  } catch (const OracleError& e) {
    result.aborted = true;
    result.abort_reason = e.what();
  }
  result.queries = state.query_count + inf.hessian_queries;
  result.theta_bar = state.theta_bar;
  if (!result.aborted) {
    result.est_error = detail::relative_error(state.theta_bar, cfg.model.theta_star);
    result.methods = detail::evaluate_methods(ctx, state, inf);
  }
  return result;
}

inline std::vector<ReplicationRow> to_rows(const ExperimentContext& ctx, const ReplicationResult& res) {
  std::vector<ReplicationRow> rows;
  auto base = [&](std::string method) {
    ReplicationRow row;
    row.run_id = ctx.cfg.run_id;
    row.replication = res.replication;
    row.method = std::move(method);
    row.queries = res.queries;
    row.aborted = res.aborted ? 1 : 0;
    if (!res.aborted) row.est_error = res.est_error;
    return row;
  };
  if (ctx.methods.empty()) {
    rows.push_back(base("none"));
    return rows;
  }
  if (res.aborted) {
    for (CiMethod m : ctx.methods) rows.push_back(base(std::string(to_string(m))));
    return rows;
  }
  for (const auto& m : res.methods) {
    ReplicationRow row = base(std::string(to_string(m.method)));
    row.cov_error = m.cov_error;
    if (m.valid) {
      row.ci_center = m.ci.center;
      row.ci_length = m.ci.length();
      row.covered = m.ci.contains(ctx.target) ? 1 : 0;
    }
    rows.push_back(row);
  }
  return rows;
}

namespace detail {

inline MeanSe mean_se(const std::vector<double>& xs) {
  MeanSe out;
  double sum = 0.0;
  for (double x : xs)
    if (!std::isnan(x)) {
      sum += x;
      ++out.count;
    }
  if (out.count == 0) return out;
  out.mean = sum / static_cast<double>(out.count);
  if (out.count < 2) return out;
  double ss = 0.0;
  for (double x : xs)
    if (!std::isnan(x)) ss += (x - out.mean) * (x - out.mean);
  out.se = std::sqrt(ss / static_cast<double>(out.count - 1) / static_cast<double>(out.count));
  return out;
}

}  // namespace detail

/// Per (run_id, method) aggregates over non-aborted rows, in first-appearance order.
inline std::vector<MethodAggregate> aggregate(const std::vector<ReplicationRow>& rows) {
  std::vector<std::pair<std::string, std::string>> keys;
  for (const auto& row : rows) {
    const std::pair key{row.run_id, row.method};
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
  }
  std::vector<MethodAggregate> out;
  for (const auto& [run_id, method] : keys) {
    MethodAggregate agg;
    agg.run_id = run_id;
    agg.method = method;
    std::vector<double> est, cov, covered, length, queries;
    for (const auto& row : rows) {
      if (row.run_id != run_id || row.method != method) continue;
      if (row.aborted) {
        ++agg.aborted;
        continue;
      }
      ++agg.completed;
      est.push_back(row.est_error);
      cov.push_back(row.cov_error);
      length.push_back(row.ci_length);
      covered.push_back(std::isnan(row.ci_length) ? std::nan("") : static_cast<double>(row.covered));
      queries.push_back(static_cast<double>(row.queries));
    }
    agg.est_error = detail::mean_se(est);
    agg.cov_error = detail::mean_se(cov);
    agg.coverage = detail::mean_se(covered);
    agg.ci_length = detail::mean_se(length);
    agg.mean_queries = detail::mean_se(queries).mean;
    out.push_back(agg);
  }
  return out;
}

inline const MethodAggregate* find_aggregate(const ExperimentReport& report, std::string_view method) {
  for (const auto& a : report.aggregates)
    if (a.method == method) return &a;
  return nullptr;
}

/// Runs every replication of cfg. Replication r uses stream seed cfg.seed + r;
/// results are ordered by r regardless of the worker count.
inline ExperimentReport run_experiment(const ExperimentConfig& cfg, std::size_t workers = 1,
                                       std::vector<ReplicationResult>* raw = nullptr) {
  if (auto v = config_violations(cfg); !v.empty()) throw ConfigError(std::move(v));
  const auto start = std::chrono::steady_clock::now();
  const ExperimentContext ctx(cfg);
  std::vector<ReplicationResult> results(cfg.replications);
  parallel_for(cfg.replications, workers, [&](std::size_t r) { results[r] = run_replication(ctx, r); });

  ExperimentReport report;
  report.run_id = cfg.run_id;
  report.config_hash = config_hash(cfg);
  for (const auto& res : results) {
    for (auto& row : to_rows(ctx, res)) report.rows.push_back(std::move(row));
    report.checkpoints.insert(report.checkpoints.end(), res.checkpoints.begin(), res.checkpoints.end());
    if (res.aborted) ++report.aborted;
  }
  report.aggregates = aggregate(report.rows);
  if (cfg.n > 0)
    report.oracle_ci_length =
        2.0 * two_sided_z(cfg.level) * std::sqrt(ctx.oracle_cov.quadratic_form(ctx.w) / static_cast<double>(cfg.n));
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (raw) *raw = std::move(results);
  return report;
}

/// Same metrics for first-order SGD with exact per-sample gradients; the
/// oracle covariance is H^{-1} S H^{-1}.
inline ExperimentReport run_rm_baseline(ExperimentConfig cfg, std::size_t workers = 1,
                                        std::vector<ReplicationResult>* raw = nullptr) {
  cfg.algorithm = Algorithm::RobbinsMonro;
  return run_experiment(cfg, workers, raw);
}

inline SweepReport sweep(const std::vector<ExperimentConfig>& cfgs, std::size_t workers = 1) {
  std::set<std::string> ids;
  for (const auto& c : cfgs)
    if (!ids.insert(c.run_id).second) throw ConfigError({"sweep: duplicate run_id '" + c.run_id + "'"});
  SweepReport out;
  for (const auto& c : cfgs) out.reports.push_back(run_experiment(c, workers));
  return out;
}

/// Finite-difference stochastic Newton run: a warm-up AKW phase supplies the
/// initial Hessian estimate, then every step uses the current thresholded
/// inverse (eigenvalues clamped to [kappa1, kappa2]). Returns the final state;
/// its theta (not theta_bar) is the estimator.
inline KwRunState run_newton(const ExperimentConfig& cfg, std::uint64_t replication, std::uint64_t warmup,
                             double kappa2 = 1e3, std::uint64_t refresh_every = 1) {
  if (auto v = config_violations(cfg); !v.empty()) throw ConfigError(std::move(v));
  if (warmup == 0) throw std::invalid_argument("run_newton: warmup must be at least 1");
  if (refresh_every == 0) throw std::invalid_argument("run_newton: refresh_every must be at least 1");
  const std::size_t d = cfg.dim();
  const RegressionOracle oracle(cfg.model);
  const DirectionDistribution dist = build_distribution(cfg.directions, d);
  Rng rng = replication_stream(cfg.seed, replication);
  KwRunState state = KwRunState::initial(cfg.theta0.empty() ? Vector(d, 0.0) : cfg.theta0);
  HessianAccumulator hacc(d, cfg.inference.p, cfg.inference.kappa1, kappa2, cfg.inference.subsampling);
  std::uint64_t extra = 0;
  const Schedules hessian_spacing{cfg.sched.eta0, cfg.sched.alpha, cfg.inference.h0, cfg.sched.gamma};
  auto observer = [&](const StepContext& s) {
    HessianBlock block =
        hessian_entry_block(oracle, s.theta_prev, s.zeta, hessian_spacing.h(s.n), rng, cfg.inference.p);
    extra += block.evaluations;
    hacc.add(block);
  };
  for (std::uint64_t i = 0; i < warmup && i < cfg.n; ++i) step(state, oracle, dist, cfg.mode, cfg.sched, rng, observer);
  SymMatrix h_inv = thresholded_hessian_inverse(hacc);
  for (std::uint64_t i = state.n; i < cfg.n; ++i) {
    if ((i - warmup) % refresh_every == 0) h_inv = thresholded_hessian_inverse(hacc);
    newton_step(state, oracle, dist, cfg.mode, cfg.sched, h_inv, rng, observer);
  }
  state.query_count += extra;
  return state;
}

// ---------------------------------------------------------------------------
// Output

namespace detail {

inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::nan("");
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw std::invalid_argument("bad number '" + s + "'");
  return v;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace detail

inline constexpr std::string_view kReplicationHeader =
    "run_id,replication,method,est_error,cov_error,ci_center,ci_length,covered,queries,aborted";
inline constexpr std::string_view kCheckpointHeader =
    "run_id,replication,n,method,est_error,ci_center,ci_length,covered,queries";

inline void write_replications_csv(std::ostream& out, const std::vector<ReplicationRow>& rows) {
  using detail::format_double;
  out << kReplicationHeader << '\n';
  for (const auto& r : rows)
    out << r.run_id << ',' << r.replication << ',' << r.method << ',' << format_double(r.est_error) << ','
        << format_double(r.cov_error) << ',' << format_double(r.ci_center) << ',' << format_double(r.ci_length) << ','
        << r.covered << ',' << r.queries << ',' << r.aborted << '\n';
}

inline std::vector<ReplicationRow> read_replications_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kReplicationHeader)
    throw std::runtime_error("replications CSV: unexpected header");
  std::vector<ReplicationRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 10) throw std::runtime_error("replications CSV line " + std::to_string(lineno) + ": expected 10 fields");
    ReplicationRow r;
    r.run_id = f[0];
    r.replication = std::stoull(f[1]);
    r.method = f[2];
    r.est_error = detail::parse_double(f[3]);
    r.cov_error = detail::parse_double(f[4]);
    r.ci_center = detail::parse_double(f[5]);
    r.ci_length = detail::parse_double(f[6]);
    r.covered = std::stoi(f[7]);
    r.queries = std::stoull(f[8]);
    r.aborted = std::stoi(f[9]);
    rows.push_back(std::move(r));
  }
  return rows;
}

inline void write_checkpoints_csv(std::ostream& out, const std::vector<CheckpointRow>& rows) {
  using detail::format_double;
  out << kCheckpointHeader << '\n';
  for (const auto& r : rows)
    out << r.run_id << ',' << r.replication << ',' << r.n << ',' << r.method << ',' << format_double(r.est_error) << ','
        << format_double(r.ci_center) << ',' << format_double(r.ci_length) << ',' << r.covered << ',' << r.queries
        << '\n';
}

inline json to_json(const MeanSe& m) {
  json j;
  j["mean"] = std::isnan(m.mean) ? json(nullptr) : json(m.mean);
  j["se"] = std::isnan(m.se) ? json(nullptr) : json(m.se);
  j["count"] = m.count;
  return j;
}

/// Table-cell summary: mean and standard error of every metric per method,
/// plus run metadata.
inline json summary_json(const ExperimentReport& report, const ExperimentConfig& cfg) {
  json j;
  j["run_id"] = report.run_id;
  j["config_hash"] = report.config_hash;
  j["algorithm"] = std::string(to_string(cfg.algorithm));
  j["model"] = std::string(to_string(cfg.model.family));
  j["design"] = std::string(to_string(cfg.model.design));
  j["d"] = cfg.dim();
  j["directions"] = std::string(to_string(cfg.directions.kind));
  j["m"] = cfg.mode.m;
  j["n"] = cfg.n;
  j["replications"] = cfg.replications;
  j["seed"] = cfg.seed;
  j["stream_seeds"] = {cfg.seed, cfg.seed + cfg.replications - 1};
  j["level"] = cfg.level;
  j["aborted"] = report.aborted;
  j["oracle_ci_length"] = std::isnan(report.oracle_ci_length) ? json(nullptr) : json(report.oracle_ci_length);
  j["wall_seconds"] = report.wall_seconds;
  json methods = json::object();
  for (const auto& a : report.aggregates) {
    json m;
    m["completed"] = a.completed;
    m["aborted"] = a.aborted;
    m["est_error"] = to_json(a.est_error);
    m["cov_error"] = to_json(a.cov_error);
    m["coverage"] = to_json(a.coverage);
    m["ci_length"] = to_json(a.ci_length);
    m["mean_queries"] = std::isnan(a.mean_queries) ? json(nullptr) : json(a.mean_queries);
    methods[a.method] = m;
  }
  j["methods"] = methods;
  return j;
}

/// Writes `contents` to `path` through a temporary file and a rename.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.parent_path() / ("." + path.filename().string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

/// <out>/<run_id>/{replications.csv, summary.json, config.resolved.json[, checkpoints.csv]}.
inline std::filesystem::path write_report_files(const ExperimentReport& report, const ExperimentConfig& cfg,
                                                const std::filesystem::path& out_dir) {
  const auto dir = out_dir / report.run_id;
  std::ostringstream csv;
  write_replications_csv(csv, report.rows);
  write_file_atomic(dir / "replications.csv", csv.str());
  if (!report.checkpoints.empty()) {
    std::ostringstream cp;
    write_checkpoints_csv(cp, report.checkpoints);
    write_file_atomic(dir / "checkpoints.csv", cp.str());
  }
  write_file_atomic(dir / "summary.json", summary_json(report, cfg).dump(2) + "\n");
  write_file_atomic(dir / "config.resolved.json", to_json(cfg).dump(2) + "\n");
  return dir;
}

}  // namespace zokw

#endif  // ZOKW_HARNESS_HPP
