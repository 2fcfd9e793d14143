// Experiment configuration and report records shared by the harness, the
// config reader and the CLI.

#ifndef ZOKW_EXPERIMENT_HPP
#define ZOKW_EXPERIMENT_HPP

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "zokw/directions.hpp"
#include "zokw/kw.hpp"
#include "zokw/models.hpp"
#include "zokw/plugin.hpp"

namespace zokw {

enum class Algorithm { Akw, RobbinsMonro };

inline std::string_view to_string(Algorithm a) { return a == Algorithm::Akw ? "akw" : "rm"; }

/// Serializable description of a direction distribution; resolved against d
/// by build_distribution.
struct DirectionSpec {
  DirectionKind kind = DirectionKind::CanonicalUniform;
  Vector p;                             // nonuniform only
  std::optional<std::uint64_t> u_seed;  // orthonormal only; absent means U = I
};

inline DirectionDistribution build_distribution(const DirectionSpec& spec, std::size_t d) {
  switch (spec.kind) {
    case DirectionKind::Gaussian: return DirectionDistribution::gaussian(d);
    case DirectionKind::Spherical: return DirectionDistribution::spherical(d);
    case DirectionKind::CanonicalUniform: return DirectionDistribution::canonical(d);
    case DirectionKind::OrthonormalUniform:
      return DirectionDistribution::orthonormal(spec.u_seed ? random_orthonormal(d, *spec.u_seed) : Matrix::identity(d));
    case DirectionKind::CoordinateNonUniform:
      if (spec.p.size() != d) throw std::invalid_argument("nonuniform directions: p must have length d");
      return DirectionDistribution::nonuniform(spec.p);
  }
  throw std::logic_error("build_distribution: unhandled kind");
}

struct InferenceSpec {
  bool plugin = true;
  double p = 1.0;
  double kappa1 = 1e-3;
  double h0 = 1.0;  // Hessian spacing h0 * n^-gamma, separate from the gradient's
  Subsampling subsampling = Subsampling::InverseProbability;
  bool random_scaling = true;
  bool oracle = true;
};

struct ExperimentConfig {
  std::string run_id = "run";
  Algorithm algorithm = Algorithm::Akw;
  ModelSpec model;
  std::optional<std::uint64_t> theta_seed;
  DirectionSpec directions;
  QueryMode mode;
  Schedules sched;
  std::uint64_t n = 100000;
  std::uint64_t replications = 100;
  std::uint64_t seed = 1;
  InferenceSpec inference;
  Vector w;  // projection; empty means (1, ..., 1)/sqrt(d)
  double level = 0.95;
  std::vector<std::uint64_t> checkpoints;
  Vector theta0;  // empty means zero

  std::size_t dim() const { return model.dim(); }

  Vector projection() const {
    if (!w.empty()) return w;
    return Vector(dim(), 1.0 / std::sqrt(static_cast<double>(dim())));
  }

  std::vector<CiMethod> methods() const {
    std::vector<CiMethod> out;
    if (inference.plugin) out.push_back(CiMethod::PlugIn);
    if (inference.random_scaling) out.push_back(CiMethod::RandomScaling);
    if (inference.oracle) out.push_back(CiMethod::Oracle);
    return out;
  }
};

/// One CSV row: a replication's outcome for one inference method. Metrics that
/// do not apply (cov_error outside the plug-in method, anything in an aborted
/// replication) are NaN.
struct ReplicationRow {
  std::string run_id;
  std::uint64_t replication = 0;
  std::string method;
  double est_error = std::nan("");
  double cov_error = std::nan("");
  double ci_center = std::nan("");
  double ci_length = std::nan("");
  int covered = 0;
  std::uint64_t queries = 0;
  int aborted = 0;
};

struct CheckpointRow {
  std::string run_id;
  std::uint64_t replication = 0;
  std::uint64_t n = 0;
  std::string method;
  double est_error = std::nan("");
  double ci_center = std::nan("");
  double ci_length = std::nan("");
  int covered = 0;
  std::uint64_t queries = 0;
};

struct MeanSe {
  double mean = std::nan("");
  double se = std::nan("");
  std::size_t count = 0;
};

struct MethodAggregate {
  std::string run_id;
  std::string method;
  std::size_t completed = 0;
  std::size_t aborted = 0;
  MeanSe est_error;
  MeanSe cov_error;
  MeanSe coverage;
  MeanSe ci_length;
  double mean_queries = std::nan("");
};

struct ExperimentReport {
  std::string run_id;
  std::string config_hash;
  std::vector<ReplicationRow> rows;
  std::vector<CheckpointRow> checkpoints;
  std::vector<MethodAggregate> aggregates;
  std::size_t aborted = 0;
  double oracle_ci_length = std::nan("");  // 2 z sqrt(w^T Sigma w / n)
  double wall_seconds = 0.0;
};

struct SweepReport {
  std::vector<ExperimentReport> reports;
};

}  // namespace zokw

#endif  // ZOKW_EXPERIMENT_HPP
