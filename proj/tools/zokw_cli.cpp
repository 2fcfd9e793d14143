// zokw: run AKW experiments, recipes and diagnostics from the command line.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "zokw/zokw.hpp"

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::size_t workers = 0;
  std::string output_dir = "results";
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_config) {
  if (with_config) cmd->add_option("--config", f.config, "JSON experiment config")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", f.seed, "base seed (overrides the config)");
  cmd->add_option("--workers", f.workers, "worker threads (default: ZOKW_WORKERS or available cores)");
  cmd->add_option("--output-dir", f.output_dir, "directory for report files");
  cmd->add_option("--override", f.overrides, "dotted key=value applied after the file, repeatable");
}

std::size_t workers_of(const CommonFlags& f) { return f.workers > 0 ? f.workers : zokw::default_workers(); }

zokw::json with_overrides(zokw::json j, const CommonFlags& f) {
  for (const auto& o : f.overrides) zokw::apply_override(j, o);
  if (f.seed) j["seed"] = *f.seed;
  return j;
}

void print_report_line(const zokw::ExperimentReport& r) {
  std::cerr << r.run_id << ": " << r.rows.size() << " rows, " << r.aborted << " aborted, " << r.wall_seconds << " s\n";
}

int run_configs(const std::vector<zokw::ExperimentConfig>& cfgs, const CommonFlags& f, zokw::json& out) {
  const auto reports = zokw::sweep(cfgs, workers_of(f));
  out = zokw::json::array();
  for (std::size_t i = 0; i < cfgs.size(); ++i) {
    zokw::write_report_files(reports.reports[i], cfgs[i], f.output_dir);
    print_report_line(reports.reports[i]);
    out.push_back(zokw::summary_json(reports.reports[i], cfgs[i]));
  }
  return 0;
}

std::vector<zokw::ExperimentConfig> configs_from_file(const CommonFlags& f) {
  const zokw::json root = zokw::load_json_file(f.config);
  std::vector<zokw::json> raw;
  if (root.is_array()) {
    for (const auto& c : root) raw.push_back(c);
  } else if (root.is_object() && root.contains("configs") && root.size() == 1) {
    for (const auto& c : root["configs"]) raw.push_back(c);
  } else {
    raw.push_back(root);
  }
  std::vector<zokw::ExperimentConfig> cfgs;
  std::vector<std::string> diagnostics;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    zokw::ExperimentConfig cfg;
    for (auto& d : zokw::read_config(with_overrides(raw[i], f), cfg))
      diagnostics.push_back(raw.size() > 1 ? "configs[" + std::to_string(i) + "]." + d : d);
    cfgs.push_back(std::move(cfg));
  }
  if (!diagnostics.empty()) throw zokw::ConfigError(diagnostics);
  return cfgs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Averaged Kiefer-Wolfowitz optimizer with online inference"};
  app.require_subcommand(1);

  CommonFlags run_flags, sweep_flags, recipe_flags;
  auto* run_cmd = app.add_subcommand("run", "run one experiment config");
  add_common(run_cmd, run_flags, true);

  auto* sweep_cmd = app.add_subcommand("sweep", "run a list of configs (JSON array or {\"configs\": [...]})");
  add_common(sweep_cmd, sweep_flags, true);

  std::string recipe_name;
  bool recipe_list = false;
  auto* recipe_cmd = app.add_subcommand("recipe", "run a named recipe");
  recipe_cmd->add_option("name", recipe_name, "recipe name");
  recipe_cmd->add_flag("--list", recipe_list, "list available recipes");
  add_common(recipe_cmd, recipe_flags, false);

  std::size_t paths = 100000, steps = 1000;
  std::uint64_t q_seed = 1;
  auto* quantile_cmd = app.add_subcommand("quantile-check", "simulate the random-scaling pivot and compare with the table");
  quantile_cmd->add_option("--paths", paths, "Brownian paths")->check(CLI::PositiveNumber);
  quantile_cmd->add_option("--steps", steps, "increments per path")->check(CLI::PositiveNumber);
  quantile_cmd->add_option("--seed", q_seed, "seed");

  std::string validate_path;
  std::vector<std::string> validate_overrides;
  auto* validate_cmd = app.add_subcommand("validate-config", "check a config without running it");
  validate_cmd->add_option("path", validate_path, "config file")->required();
  validate_cmd->add_option("--override", validate_overrides, "dotted key=value, repeatable");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run_cmd || *sweep_cmd) {
      const CommonFlags& f = *run_cmd ? run_flags : sweep_flags;
      const auto cfgs = configs_from_file(f);
      zokw::json out;
      run_configs(cfgs, f, out);
      std::cout << (cfgs.size() == 1 ? out[0] : out).dump(2) << '\n';
      return 0;
    }
    if (*recipe_cmd) {
      if (recipe_list) {
        for (const auto& r : zokw::list_recipes())
          std::cout << r.name << (r.long_running ? " [long-running]" : "") << "  " << r.description << '\n';
        return 0;
      }
      if (recipe_name.empty()) throw zokw::ConfigError({"recipe: name required (or --list)"});
      const auto recipe = zokw::find_recipe(recipe_name);
      if (recipe.long_running) std::cerr << "note: recipe " << recipe.name << " is long-running\n";
      auto overrides = recipe_flags.overrides;
      if (recipe_flags.seed) overrides.push_back("seed=" + std::to_string(*recipe_flags.seed));
      const auto cfgs = zokw::resolve_recipe(recipe, overrides);
      zokw::json runs;
      run_configs(cfgs, recipe_flags, runs);
      zokw::json out;
      out["recipe"] = recipe.name;
      out["description"] = recipe.description;
      out["runs"] = runs;
      const std::string text = out.dump(2) + "\n";
      zokw::write_file_atomic(std::filesystem::path(recipe_flags.output_dir) / (recipe.name + ".summary.json"), text);
      std::cout << text;
      return 0;
    }
    if (*quantile_cmd) {
      zokw::Rng rng(q_seed);
      const auto q = zokw::simulate_pivot_quantiles(paths, steps, rng);
      std::printf("%-12s %-10s %-10s %-10s\n", "probability", "estimate", "tabled", "diff");
      for (std::size_t k = 0; k < q.probabilities.size(); ++k)
        std::printf("%-12.3f %-10.4f %-10.3f %+-10.4f\n", q.probabilities[k], q.estimates[k], q.tabled[k],
                    q.estimates[k] - q.tabled[k]);
      std::printf("median %.4f\n", q.median);
      return 0;
    }
    if (*validate_cmd) {
      zokw::json j = zokw::load_json_file(validate_path);
      for (const auto& o : validate_overrides) zokw::apply_override(j, o);
      zokw::ExperimentConfig cfg;
      const auto diagnostics = zokw::read_config(j, cfg);
      for (const auto& d : diagnostics) std::cerr << validate_path << ": " << d << '\n';
      if (!diagnostics.empty()) return kExitConfig;
      std::cout << "ok " << zokw::config_hash(cfg) << '\n';
      return 0;
    }
  } catch (const zokw::ConfigError& e) {
    for (const auto& d : e.diagnostics()) std::cerr << "config error: " << d << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
