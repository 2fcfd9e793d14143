// Strict JSON experiment configs: parsing with full diagnostics, dotted-key
// overrides, canonical serialization, config hashing and recipe loading.

#ifndef ZOKW_CONFIG_HPP
#define ZOKW_CONFIG_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "zokw/experiment.hpp"
#include "zokw/random_scaling.hpp"

#ifndef ZOKW_RECIPE_DIR
#define ZOKW_RECIPE_DIR "recipes"
#endif

namespace zokw {

using json = nlohmann::ordered_json;

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> diagnostics)
      : std::runtime_error(join(diagnostics)), diagnostics_(std::move(diagnostics)) {}
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  static std::string join(const std::vector<std::string>& d) {
    std::string out;
    for (const auto& line : d) out += (out.empty() ? "" : "\n") + line;
    return out;
  }
  std::vector<std::string> diagnostics_;
};

inline constexpr std::uint64_t kDefaultThetaSeed = 2023;

namespace detail {

class ConfigReader {
 public:
  std::vector<std::string> diagnostics;

  void error(const std::string& path, const std::string& what) { diagnostics.push_back(path + ": " + what); }

  bool expect_object(const json& j, const std::string& path) {
    if (j.is_object()) return true;
    error(path, "expected an object");
    return false;
  }

  void reject_unknown(const json& obj, const std::string& path, std::initializer_list<std::string_view> allowed) {
    for (const auto& [key, value] : obj.items())
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
        error(join(path, key), "unknown key");
  }

  static std::string join(const std::string& path, std::string_view key) {
    return path.empty() ? std::string(key) : path + "." + std::string(key);
  }

  void read(const json& obj, const std::string& path, std::string_view key, double& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(std::string(key));
    if (!v.is_number()) return error(join(path, key), "expected a number");
    out = v.get<double>();
  }

  void read(const json& obj, const std::string& path, std::string_view key, std::uint64_t& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(std::string(key));
    if (v.is_number_unsigned()) {
      out = v.get<std::uint64_t>();
    } else if (v.is_number_float() && v.get<double>() >= 0.0 && v.get<double>() == std::floor(v.get<double>()) &&
               v.get<double>() < 1.8e19) {
      out = static_cast<std::uint64_t>(v.get<double>());
    } else {
      error(join(path, key), "expected a non-negative integer");
    }
  }

  void read(const json& obj, const std::string& path, std::string_view key, bool& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(std::string(key));
    if (!v.is_boolean()) return error(join(path, key), "expected true or false");
    out = v.get<bool>();
  }

  void read(const json& obj, const std::string& path, std::string_view key, std::string& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(std::string(key));
    if (!v.is_string()) return error(join(path, key), "expected a string");
    out = v.get<std::string>();
  }

  void read(const json& obj, const std::string& path, std::string_view key, Vector& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(std::string(key));
    if (!v.is_array()) return error(join(path, key), "expected an array of numbers");
    Vector tmp;
    for (const auto& x : v) {
      if (!x.is_number()) return error(join(path, key), "expected an array of numbers");
      tmp.push_back(x.get<double>());
    }
    out = std::move(tmp);
  }

  void read(const json& obj, const std::string& path, std::string_view key, std::vector<std::uint64_t>& out) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(std::string(key));
    if (!v.is_array()) return error(join(path, key), "expected an array of integers");
    std::vector<std::uint64_t> tmp;
    for (const auto& x : v) {
      if (!x.is_number_unsigned()) return error(join(path, key), "expected an array of non-negative integers");
      tmp.push_back(x.get<std::uint64_t>());
    }
    out = std::move(tmp);
  }

  template <class Enum>
  void read_enum(const json& obj, const std::string& path, std::string_view key, Enum& out,
                 const std::vector<std::pair<std::string_view, Enum>>& names) {
    if (!obj.contains(key)) return;
    const auto& v = obj.at(std::string(key));
    std::string allowed;
    for (const auto& [name, value] : names) allowed += (allowed.empty() ? "" : ", ") + std::string(name);
    if (v.is_string())
      for (const auto& [name, value] : names)
        if (v.get<std::string>() == name) {
          out = value;
          return;
        }
    error(join(path, key), "expected one of " + allowed);
  }
};

inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

inline const std::vector<std::pair<std::string_view, DirectionKind>> kDirectionNames{
    {"gaussian", DirectionKind::Gaussian},
    {"spherical", DirectionKind::Spherical},
    {"canonical", DirectionKind::CanonicalUniform},
    {"orthonormal", DirectionKind::OrthonormalUniform},
    {"nonuniform", DirectionKind::CoordinateNonUniform}};

/// Semantic checks on an assembled config; one message per violation.
inline std::vector<std::string> config_violations(const ExperimentConfig& cfg) {
  std::vector<std::string> out;
  auto check = [&](const std::string& path, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      out.push_back(path + ": " + e.what());
    }
  };
  const std::size_t d = cfg.dim();
  if (cfg.run_id.empty() || cfg.run_id.find_first_of("/\\") != std::string::npos || cfg.run_id == "." ||
      cfg.run_id == "..")
    out.emplace_back("run_id: must be a non-empty name without path separators");
  check("model", [&] { validate(cfg.model); });
  for (const auto& v : schedule_violations(cfg.sched)) out.push_back("schedule: " + v);
  if (cfg.replications < 1) out.emplace_back("replications: must be at least 1");
  if (!(cfg.level > 0.0 && cfg.level < 1.0)) out.emplace_back("level: must lie in (0, 1)");
  if (d > 0) {
    std::optional<DirectionDistribution> dist;
    check("directions", [&] { dist = build_distribution(cfg.directions, d); });
    if (dist) check("query", [&] { validate(cfg.mode, *dist); });
    if (!cfg.w.empty() && cfg.w.size() != d) out.emplace_back("w: must have length d");
    if (!cfg.w.empty() && norm2(cfg.w) == 0.0) out.emplace_back("w: must be non-zero");
    if (!cfg.theta0.empty() && cfg.theta0.size() != d) out.emplace_back("theta0: must have length d");
  }
  if (!cfg.directions.p.empty() && cfg.directions.kind != DirectionKind::CoordinateNonUniform)
    out.emplace_back("directions.p: only valid for the nonuniform kind");
  if (cfg.directions.u_seed && cfg.directions.kind != DirectionKind::OrthonormalUniform)
    out.emplace_back("directions.u_seed: only valid for the orthonormal kind");
  if (!(cfg.inference.p > 0.0 && cfg.inference.p <= 1.0)) out.emplace_back("inference.plugin.p: must lie in (0, 1]");
  if (!(cfg.inference.kappa1 > 0.0)) out.emplace_back("inference.plugin.kappa1: must be positive");
  if (!(cfg.inference.h0 > 0.0)) out.emplace_back("inference.plugin.h0: must be positive");
  if (cfg.inference.random_scaling && cfg.level > 0.0 && cfg.level < 1.0)
    check("level", [&] { QuantileTable::two_sided(cfg.level); });
  for (std::size_t i = 0; i < cfg.checkpoints.size(); ++i) {
    if (cfg.checkpoints[i] == 0 || cfg.checkpoints[i] > cfg.n) {
      out.emplace_back("checkpoints: entries must lie in [1, n]");
      break;
    }
    if (i > 0 && cfg.checkpoints[i] <= cfg.checkpoints[i - 1]) {
      out.emplace_back("checkpoints: must be strictly increasing");
      break;
    }
  }
  return out;
}

/// Builds a config from parsed JSON. Returns every diagnostic; the config is
/// only meaningful when the list is empty.
inline std::vector<std::string> read_config(const json& root, ExperimentConfig& cfg) {
  detail::ConfigReader r;
  if (!r.expect_object(root, "<root>")) return r.diagnostics;
  r.reject_unknown(root, "", {"run_id", "algorithm", "model", "directions", "query", "schedule", "n", "replications",
                              "seed", "inference", "w", "level", "checkpoints", "theta0"});
  r.read(root, "", "run_id", cfg.run_id);
  r.read_enum(root, "", "algorithm", cfg.algorithm, {{"akw", Algorithm::Akw}, {"rm", Algorithm::RobbinsMonro}});

  std::size_t d = 0;
  std::optional<Vector> theta_star;
  if (root.contains("model") && r.expect_object(root["model"], "model")) {
    const auto& m = root["model"];
    r.reject_unknown(m, "model", {"family", "d", "design", "rho", "sigma2", "tau", "theta_seed", "theta_star"});
    r.read_enum(m, "model", "family", cfg.model.family,
                {{"linear", ModelFamily::Linear}, {"logistic", ModelFamily::Logistic}, {"quantile", ModelFamily::Quantile}});
    r.read_enum(m, "model", "design", cfg.model.design,
                {{"identity", DesignKind::Identity}, {"equicorr", DesignKind::Equicorr}});
    r.read(m, "model", "d", d);
    r.read(m, "model", "rho", cfg.model.rho);
    r.read(m, "model", "sigma2", cfg.model.sigma2);
    r.read(m, "model", "tau", cfg.model.tau);
    std::uint64_t seed = kDefaultThetaSeed;
    r.read(m, "model", "theta_seed", seed);
    cfg.theta_seed = seed;
    if (m.contains("theta_star")) {
      Vector ts;
      r.read(m, "model", "theta_star", ts);
      theta_star = ts;
      if (m.contains("d") && d != ts.size()) r.error("model.d", "does not match the length of model.theta_star");
      d = ts.size();
    }
    if (d == 0) r.error("model.d", "must be given and positive");
  } else if (!root.contains("model")) {
    r.error("model", "required");
  }
  if (d > 0) cfg.model.theta_star = theta_star ? *theta_star : random_unit_vector(d, *cfg.theta_seed);

  if (root.contains("directions") && r.expect_object(root["directions"], "directions")) {
    const auto& j = root["directions"];
    r.reject_unknown(j, "directions", {"kind", "p", "u_seed"});
    r.read_enum(j, "directions", "kind", cfg.directions.kind, kDirectionNames);
    r.read(j, "directions", "p", cfg.directions.p);
    if (j.contains("u_seed")) {
      std::uint64_t s = 0;
      r.read(j, "directions", "u_seed", s);
      cfg.directions.u_seed = s;
    }
  }
  if (root.contains("query") && r.expect_object(root["query"], "query")) {
    const auto& j = root["query"];
    r.reject_unknown(j, "query", {"m", "replacement"});
    r.read(j, "query", "m", cfg.mode.m);
    r.read_enum(j, "query", "replacement", cfg.mode.replacement,
                {{"with", Replacement::With}, {"without", Replacement::Without}});
  }
  if (root.contains("schedule") && r.expect_object(root["schedule"], "schedule")) {
    const auto& j = root["schedule"];
    r.reject_unknown(j, "schedule", {"eta0", "alpha", "h0", "gamma"});
    r.read(j, "schedule", "eta0", cfg.sched.eta0);
    r.read(j, "schedule", "alpha", cfg.sched.alpha);
    r.read(j, "schedule", "h0", cfg.sched.h0);
    r.read(j, "schedule", "gamma", cfg.sched.gamma);
  }
  r.read(root, "", "n", cfg.n);
  r.read(root, "", "replications", cfg.replications);
  r.read(root, "", "seed", cfg.seed);
  if (root.contains("inference") && r.expect_object(root["inference"], "inference")) {
    const auto& j = root["inference"];
    r.reject_unknown(j, "inference", {"plugin", "random_scaling", "oracle"});
    if (j.contains("plugin") && r.expect_object(j["plugin"], "inference.plugin")) {
      const auto& p = j["plugin"];
      r.reject_unknown(p, "inference.plugin", {"enabled", "p", "kappa1", "h0", "subsampling"});
      r.read(p, "inference.plugin", "enabled", cfg.inference.plugin);
      r.read(p, "inference.plugin", "p", cfg.inference.p);
      r.read(p, "inference.plugin", "kappa1", cfg.inference.kappa1);
      r.read(p, "inference.plugin", "h0", cfg.inference.h0);
      r.read_enum(p, "inference.plugin", "subsampling", cfg.inference.subsampling,
                  {{"ipw", Subsampling::InverseProbability}, {"inherit", Subsampling::InheritPrevious}});
    }
    r.read(j, "inference", "random_scaling", cfg.inference.random_scaling);
    r.read(j, "inference", "oracle", cfg.inference.oracle);
  }
  if (root.contains("w")) {
    const auto& w = root["w"];
    if (w.is_string()) {
      if (w.get<std::string>() != "ones") r.error("w", "expected \"ones\" or an array of numbers");
    } else {
      r.read(root, "", "w", cfg.w);
    }
  }
  r.read(root, "", "level", cfg.level);
  r.read(root, "", "checkpoints", cfg.checkpoints);
  r.read(root, "", "theta0", cfg.theta0);

  if (r.diagnostics.empty())
    for (auto& v : config_violations(cfg)) r.diagnostics.push_back(std::move(v));
  return r.diagnostics;
}

inline ExperimentConfig parse_config(const json& root) {
  ExperimentConfig cfg;
  auto diagnostics = read_config(root, cfg);
  if (!diagnostics.empty()) throw ConfigError(std::move(diagnostics));
  return cfg;
}

/// Parses JSON text; syntax errors report line and column.
inline json parse_json_text(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    std::ostringstream msg;
    msg << source << ":" << line << ":" << col << ": JSON syntax error";
    const std::string what = e.what();
    const auto pos = what.find("syntax error");
    if (pos != std::string::npos) msg << what.substr(pos + std::string_view("syntax error").size());
    throw ConfigError({msg.str()});
  }
}

inline json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({path.string() + ": cannot open file"});
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_json_text(buffer.str(), path.string());
}

/// Applies "a.b.c=value". The value is read as JSON when it parses, otherwise
/// taken as a string.
inline void apply_override(json& root, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError({"override '" + assignment + "': expected key=value"});
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError({"override '" + assignment + "': empty key segment"});
    if (!node->is_object()) throw ConfigError({"override '" + key + "': parent is not an object"});
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

/// Fully resolved config; parse_config(to_json(cfg)) reproduces cfg.
inline json to_json(const ExperimentConfig& cfg) {
  json j;
  j["run_id"] = cfg.run_id;
  j["algorithm"] = std::string(to_string(cfg.algorithm));
  json model;
  model["family"] = std::string(to_string(cfg.model.family));
  model["d"] = cfg.dim();
  model["design"] = std::string(to_string(cfg.model.design));
  model["rho"] = cfg.model.rho;
  model["sigma2"] = cfg.model.sigma2;
  model["tau"] = cfg.model.tau;
  if (cfg.theta_seed) model["theta_seed"] = *cfg.theta_seed;
  model["theta_star"] = cfg.model.theta_star;
  j["model"] = model;
  json dirs;
  dirs["kind"] = std::string(to_string(cfg.directions.kind));
  if (!cfg.directions.p.empty()) dirs["p"] = cfg.directions.p;
  if (cfg.directions.u_seed) dirs["u_seed"] = *cfg.directions.u_seed;
  j["directions"] = dirs;
  j["query"] = {{"m", cfg.mode.m}, {"replacement", cfg.mode.replacement == Replacement::With ? "with" : "without"}};
  j["schedule"] = {{"eta0", cfg.sched.eta0}, {"alpha", cfg.sched.alpha}, {"h0", cfg.sched.h0}, {"gamma", cfg.sched.gamma}};
  j["n"] = cfg.n;
  j["replications"] = cfg.replications;
  j["seed"] = cfg.seed;
  j["inference"] = {
      {"plugin",
       {{"enabled", cfg.inference.plugin},
        {"p", cfg.inference.p},
        {"kappa1", cfg.inference.kappa1},
        {"h0", cfg.inference.h0},
        {"subsampling", cfg.inference.subsampling == Subsampling::InverseProbability ? "ipw" : "inherit"}}},
      {"random_scaling", cfg.inference.random_scaling},
      {"oracle", cfg.inference.oracle}};
  j["w"] = cfg.projection();
  j["level"] = cfg.level;
  j["checkpoints"] = cfg.checkpoints;
  j["theta0"] = cfg.theta0.empty() ? Vector(cfg.dim(), 0.0) : cfg.theta0;
  return j;
}

/// FNV-1a of the canonical resolved JSON, as 16 hex digits.
inline std::string config_hash(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << detail::fnv1a(to_json(cfg).dump());
  return out.str();
}

struct Recipe {
  std::string name;
  std::string description;
  bool long_running = false;
  std::vector<json> configs;  // raw, before overrides
};

inline std::filesystem::path recipe_dir() {
  if (const char* env = std::getenv("ZOKW_RECIPE_DIR"); env && *env) return env;
  return ZOKW_RECIPE_DIR;
}

inline Recipe load_recipe_file(const std::filesystem::path& path) {
  const json j = load_json_file(path);
  detail::ConfigReader r;
  Recipe recipe;
  if (r.expect_object(j, path.string())) {
    r.reject_unknown(j, path.string(), {"recipe", "description", "long_running", "configs"});
    r.read(j, path.string(), "recipe", recipe.name);
    r.read(j, path.string(), "description", recipe.description);
    r.read(j, path.string(), "long_running", recipe.long_running);
    if (!j.contains("configs") || !j["configs"].is_array() || j["configs"].empty())
      r.error(path.string() + ".configs", "expected a non-empty array");
    else
      for (const auto& c : j["configs"]) recipe.configs.push_back(c);
  }
  if (recipe.name.empty()) r.error(path.string() + ".recipe", "name required");
  if (!r.diagnostics.empty()) throw ConfigError(r.diagnostics);
  return recipe;
}

inline std::vector<Recipe> list_recipes(const std::filesystem::path& dir = recipe_dir()) {
  std::vector<Recipe> out;
  if (!std::filesystem::is_directory(dir)) throw ConfigError({dir.string() + ": recipe directory not found"});
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out.push_back(load_recipe_file(f));
  return out;
}

inline Recipe find_recipe(const std::string& name, const std::filesystem::path& dir = recipe_dir()) {
  for (auto& r : list_recipes(dir))
    if (r.name == name) return r;
  throw ConfigError({"unknown recipe '" + name + "' (see recipe --list)"});
}

/// Resolves a recipe's configs with overrides applied to each one.
inline std::vector<ExperimentConfig> resolve_recipe(const Recipe& recipe, const std::vector<std::string>& overrides = {}) {
  std::vector<ExperimentConfig> out;
  std::vector<std::string> diagnostics;
  for (std::size_t i = 0; i < recipe.configs.size(); ++i) {
    json j = recipe.configs[i];
    for (const auto& o : overrides) apply_override(j, o);
    ExperimentConfig cfg;
    auto diag = read_config(j, cfg);
    for (auto& line : diag) diagnostics.push_back(recipe.name + ".configs[" + std::to_string(i) + "]." + line);
    out.push_back(std::move(cfg));
  }
  if (!diagnostics.empty()) throw ConfigError(diagnostics);
  return out;
}

}  // namespace zokw

#endif  // ZOKW_CONFIG_HPP
