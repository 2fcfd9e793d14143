#include <gtest/gtest.h>

#include <algorithm>
#include <sstream>

#include "support.hpp"

using namespace zokw;
using zokw::testing::small_linear_config;

namespace {

std::string csv_of(const ExperimentReport& report) {
  std::ostringstream out;
  write_replications_csv(out, report.rows);
  return out.str();
}

double median(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  const std::size_t n = xs.size();
  return n % 2 ? xs[n / 2] : 0.5 * (xs[n / 2 - 1] + xs[n / 2]);
}

std::vector<std::string> diagnostics_of(const std::string& text) {
  ExperimentConfig cfg;
  return read_config(parse_json_text(text, "inline"), cfg);
}

bool any_contains(const std::vector<std::string>& lines, const std::string& needle) {
  return std::any_of(lines.begin(), lines.end(), [&](const auto& l) { return l.find(needle) != std::string::npos; });
}

}  // namespace

TEST(RunExperiment, ZeroIterationsGiveUnitError) {
  ExperimentConfig cfg = small_linear_config(5, 0, 1);
  cfg.inference.plugin = false;
  cfg.inference.random_scaling = false;
  cfg.inference.oracle = false;
  const ExperimentReport report = run_experiment(cfg);
  ASSERT_EQ(report.rows.size(), 1u);
  EXPECT_EQ(report.rows[0].method, "none");
  EXPECT_NEAR(report.rows[0].est_error, 1.0, 1e-15);
}

TEST(RunExperiment, RowsPerMethodAndQueryCounts) {
  const ExperimentConfig cfg = small_linear_config(3, 500, 2);
  const ExperimentReport report = run_experiment(cfg);
  ASSERT_EQ(report.rows.size(), 6u);
  EXPECT_EQ(report.rows[0].method, "plugin");
  EXPECT_EQ(report.rows[1].method, "random_scaling");
  EXPECT_EQ(report.rows[2].method, "oracle");
  // Two gradient queries plus 1 + d + d(d+1)/2 Hessian queries per step.
  EXPECT_EQ(report.rows[0].queries, 500u * (2 + 1 + 3 + 6));
  EXPECT_TRUE(std::isfinite(report.rows[0].cov_error));
  EXPECT_TRUE(std::isnan(report.rows[1].cov_error));
  EXPECT_EQ(report.aborted, 0u);
  EXPECT_EQ(report.config_hash.size(), 16u);
}

TEST(RunExperiment, DeterministicAcrossRunsAndWorkers) {
  const ExperimentConfig cfg = small_linear_config(4, 1000, 4);
  const std::string a = csv_of(run_experiment(cfg, 1));
  EXPECT_EQ(a, csv_of(run_experiment(cfg, 1)));
  EXPECT_EQ(a, csv_of(run_experiment(cfg, 3)));
  ExperimentConfig other = cfg;
  other.seed = 12;
  EXPECT_NE(a, csv_of(run_experiment(other, 1)));
}

TEST(RunExperiment, CsvRoundTripReproducesAggregates) {
  ExperimentConfig cfg = small_linear_config(3, 800, 5);
  const ExperimentReport report = run_experiment(cfg);
  std::istringstream in(csv_of(report));
  const auto rows = read_replications_csv(in);
  ASSERT_EQ(rows.size(), report.rows.size());
  const auto again = aggregate(rows);
  ASSERT_EQ(again.size(), report.aggregates.size());
  for (std::size_t i = 0; i < again.size(); ++i) {
    EXPECT_EQ(again[i].method, report.aggregates[i].method);
    EXPECT_EQ(again[i].coverage.mean, report.aggregates[i].coverage.mean);
    EXPECT_EQ(again[i].est_error.mean, report.aggregates[i].est_error.mean);
    EXPECT_EQ(again[i].ci_length.mean, report.aggregates[i].ci_length.mean);
    EXPECT_EQ(again[i].ci_length.se, report.aggregates[i].ci_length.se);
  }
}

TEST(RunExperiment, AbortsAreRecordedAndExcluded) {
  ExperimentConfig cfg = small_linear_config(5, 3000, 3);
  cfg.sched.eta0 = 5.0;
  const ExperimentReport report = run_experiment(cfg);
  EXPECT_EQ(report.aborted, 3u);
  for (const auto& row : report.rows) {
    EXPECT_EQ(row.aborted, 1);
    EXPECT_TRUE(std::isnan(row.est_error));
  }
  const MethodAggregate* plugin = find_aggregate(report, "plugin");
  ASSERT_NE(plugin, nullptr);
  EXPECT_EQ(plugin->aborted, 3u);
  EXPECT_EQ(plugin->completed, 0u);
}

TEST(RunExperiment, CheckpointsEmitted) {
  ExperimentConfig cfg = small_linear_config(3, 1000, 2);
  cfg.checkpoints = {10, 100, 1000};
  const ExperimentReport report = run_experiment(cfg);
  EXPECT_EQ(report.checkpoints.size(), 2u * 3u * 3u);
  EXPECT_EQ(report.checkpoints.front().n, 10u);
  EXPECT_EQ(report.checkpoints.back().n, 1000u);
}

TEST(RunExperiment, InvalidConfigThrowsWithAllDiagnostics) {
  ExperimentConfig cfg = small_linear_config();
  cfg.sched.alpha = 1.2;
  cfg.level = 0.5;
  try {
    run_experiment(cfg);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_GE(e.diagnostics().size(), 2u);
    EXPECT_TRUE(any_contains(e.diagnostics(), "alpha must lie in (0.5, 1)"));
  }
}

TEST(RunExperiment, OracleCoverageNearNominal) {
  ExperimentConfig cfg = small_linear_config(5, 20000, 200);
  cfg.inference.plugin = false;
  cfg.inference.random_scaling = false;
  const ExperimentReport report = run_experiment(cfg);
  const MethodAggregate* oracle = find_aggregate(report, "oracle");
  ASSERT_NE(oracle, nullptr);
  const double se = std::sqrt(0.95 * 0.05 / 200.0);
  EXPECT_NEAR(oracle->coverage.mean, 0.95, 3.0 * se);
}

TEST(RmBaseline, OracleCovarianceRelations) {
  const ExperimentConfig cfg = small_linear_config(5);
  const auto dist = DirectionDistribution::canonical(5);
  const SymMatrix akw = oracle_covariance(cfg.model, dist, {1, Replacement::With});
  const SymMatrix rm = first_order_covariance(cfg.model);
  EXPECT_GT(akw.trace() - rm.trace(), 0.0);
  EXPECT_GE(min_eigenvalue(akw - rm), -1e-12);
  EXPECT_LT(zokw::testing::max_abs_diff(oracle_covariance(cfg.model, dist, {5, Replacement::Without}), rm), 1e-14);
}

TEST(RmBaseline, FirstOrderErrorIsSmaller) {
  ExperimentConfig cfg = small_linear_config(5, 20000, 30);
  cfg.inference.plugin = false;
  cfg.inference.random_scaling = false;
  const ExperimentReport akw = run_experiment(cfg);
  const ExperimentReport rm = run_rm_baseline(cfg);
  std::vector<double> ea, er;
  for (const auto& row : akw.rows) ea.push_back(row.est_error);
  for (const auto& row : rm.rows) er.push_back(row.est_error);
  EXPECT_LE(median(er), median(ea));
  EXPECT_EQ(rm.rows.front().queries, 20000u);
}

TEST(Sweep, EmptyAndDuplicate) {
  EXPECT_TRUE(sweep({}).reports.empty());
  const ExperimentConfig cfg = small_linear_config(2, 10, 1);
  EXPECT_THROW(sweep({cfg, cfg}), ConfigError);
  ExperimentConfig other = cfg;
  other.run_id = "other";
  const SweepReport both = sweep({cfg, other});
  ASSERT_EQ(both.reports.size(), 2u);
  EXPECT_EQ(both.reports[1].run_id, "other");
}

TEST(Sweep, CovarianceErrorDecreasesWithQueries) {
  std::vector<ExperimentConfig> cfgs;
  for (std::size_t m : {1u, 10u}) {
    ExperimentConfig cfg;
    cfg.run_id = "m" + std::to_string(m);
    cfg.model.family = ModelFamily::Logistic;
    cfg.model.theta_star = random_unit_vector(20, kDefaultThetaSeed);
    cfg.directions.kind = DirectionKind::CanonicalUniform;
    cfg.mode = {m, Replacement::With};
    cfg.sched.eta0 = 0.05;
    cfg.n = 10000;
    cfg.replications = 6;
    cfg.inference.random_scaling = false;
    cfg.inference.oracle = false;
    cfgs.push_back(cfg);
  }
  const SweepReport report = sweep(cfgs);
  const double e1 = find_aggregate(report.reports[0], "plugin")->cov_error.mean;
  const double e10 = find_aggregate(report.reports[1], "plugin")->cov_error.mean;
  EXPECT_LT(e10, e1);
}

TEST(Recipes, AllResolveAndAbortRateIsZeroAtModerateDimension) {
  const auto recipes = list_recipes();
  EXPECT_GE(recipes.size(), 20u);
  for (const auto& recipe : recipes) {
    const auto cfgs = resolve_recipe(recipe);
    EXPECT_FALSE(cfgs.empty()) << recipe.name;
    for (auto cfg : cfgs) {
      if (cfg.dim() > 20 || cfg.mode.m > 1) continue;
      cfg.n = 20000;
      cfg.replications = 3;
      cfg.checkpoints.clear();
      cfg.inference.plugin = false;
      cfg.inference.random_scaling = false;
      EXPECT_EQ(run_experiment(cfg).aborted, 0u) << cfg.run_id;
    }
  }
  EXPECT_THROW(find_recipe("no-such-recipe"), ConfigError);
}

TEST(Config, ExampleDiagnostics) {
  EXPECT_TRUE(any_contains(diagnostics_of(R"({"model": {"family": "linear", "d": 3}, "schedule": {"alpha": 1.2}})"),
                           "alpha must lie in (0.5, 1)"));
  EXPECT_FALSE(diagnostics_of(R"({"model": {"family": "logistic", "d": 4}, "directions": {"kind": "gaussian"},
                                  "query": {"m": 2, "replacement": "without"}})")
                   .empty());
  EXPECT_TRUE(diagnostics_of(R"({"model": {"family": "linear", "d": 3}})").empty());
  EXPECT_TRUE(any_contains(diagnostics_of(R"({"model": {"family": "linear", "d": 3, "colour": 1}})"), "colour"));
  const auto many = diagnostics_of(R"({"model": {"family": "cubic", "d": 3}, "n": -1, "replications": "x"})");
  EXPECT_GE(many.size(), 3u);
  EXPECT_FALSE(diagnostics_of(R"({"n": 10})").empty());
}

TEST(Config, SyntaxErrorReportsLineAndColumn) {
  try {
    parse_json_text("{\n  \"n\": 10,\n  oops\n}", "cfg.json");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("cfg.json:3:"), std::string::npos) << e.what();
  }
}

TEST(Config, OverridesApply) {
  json root = parse_json_text(R"({"model": {"family": "linear", "d": 3}})", "inline");
  apply_override(root, "schedule.eta0=0.02");
  apply_override(root, "run_id=custom");
  apply_override(root, "model.d=4");
  const ExperimentConfig cfg = parse_config(root);
  EXPECT_DOUBLE_EQ(cfg.sched.eta0, 0.02);
  EXPECT_EQ(cfg.run_id, "custom");
  EXPECT_EQ(cfg.dim(), 4u);
  EXPECT_THROW(apply_override(root, "novalue"), ConfigError);
}

TEST(Config, ResolvedJsonRoundTripsAndHashIsStable) {
  const json root = parse_json_text(R"({"model": {"family": "quantile", "d": 4, "tau": 0.3, "design": "equicorr"},
                                        "directions": {"kind": "orthonormal", "u_seed": 5},
                                        "query": {"m": 2, "replacement": "without"}, "checkpoints": [10, 100]})",
                                    "inline");
  const ExperimentConfig cfg = parse_config(root);
  const json resolved = to_json(cfg);
  const ExperimentConfig again = parse_config(resolved);
  EXPECT_EQ(to_json(again).dump(), resolved.dump());
  EXPECT_EQ(config_hash(again), config_hash(cfg));
  EXPECT_EQ(again.model.theta_star, cfg.model.theta_star);
  ExperimentConfig changed = cfg;
  changed.n += 1;
  EXPECT_NE(config_hash(changed), config_hash(cfg));
}

TEST(Newton, ReachesFirstOrderAccuracy) {
  ExperimentConfig cfg = small_linear_config(3, 5000, 1);
  std::vector<Vector> finals;
  for (std::uint64_t r = 0; r < 40; ++r) finals.push_back(subtract(run_newton(cfg, r, 500).theta, cfg.model.theta_star));
  const SymMatrix cov = zokw::testing::sample_covariance(finals);
  // n * Cov(theta_n) targets H^{-1} Q H^{-1} = 0.2 d I for this model.
  const double scaled = cov.trace() * 5000.0 / 3.0;
  EXPECT_GT(scaled, 0.3);
  EXPECT_LT(scaled, 1.2);
}
