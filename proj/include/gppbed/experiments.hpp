#pragma once

#include "gppbed/config.hpp"
#include "gppbed/eig.hpp"
#include "gppbed/forward.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace gppbed {

inline constexpr const char* kLibraryVersion = "0.1.0";
inline constexpr int kCsvSchemaVersion = 1;

/// Scalar conjugate toy mirroring the parametric case: theta_s ~ N(m0, v0), y = g theta_s + eps.
struct ScalarToy {
  Gaussian prior;
  LinearModel model;
};
ScalarToy scalar_toy(const RunConfig& cfg);

/// Two-parameter toy with design-dependent operator A(d) = A + d_x A_x + d_y A_y and unit noise.
struct DesignToy {
  Gaussian prior;
  LinearModel model;
  std::vector<Point2> designs;
};
DesignToy design_toy();

struct DistanceScatter {
  Matrix y;
  std::vector<double> w2_prior;   // W2(individual posterior, prior)
  std::vector<double> w2_pooled;  // W2(individual posterior, pooled posterior)
};
/// toy_outer outer samples of the scalar toy, closed-form posteriors throughout.
DistanceScatter distance_scatter(const RunConfig& cfg, EvalCounter& counter);

struct ComparisonRow {
  std::string quantity;
  double oracle = 0.0;
  double estimate = 0.0;
  double standard_error = 0.0;
};
/// EKI (J = inner) pooled-posterior mean and variance against the conjugate formula for the
/// scalar toy's outer set.
std::vector<ComparisonRow> oracle_comparison(const RunConfig& cfg, EvalCounter& counter);

struct GradientCheckRow {
  Point2 design;
  Vector finite_difference;
  GradEstimate estimate;
};
/// Grouped SNIS gradient (N = outer, J = inner) against central differences of the closed-form
/// EIG at each toy design.
std::vector<GradientCheckRow> gradient_check(const RunConfig& cfg, EvalCounter& counter);

/// Error-parameter problem at a fixed design: the object diagnosed and studied for variance.
struct ErrorProblem {
  std::shared_ptr<const ForwardModel> model;
  Gaussian prior;
  Measurement measurement;
  GppOptions options;
};
ErrorProblem error_problem(const RunConfig& cfg);

struct Diagnosis {
  OuterDraws outer;
  ProposalSet proposals;
  CostLedger ledger;
};
/// Outer draws (N solves) and one prior-ensemble prediction (J solves); grouping and the
/// proposal ensembles come from those predictions alone.
Diagnosis diagnose(const ErrorProblem& p, std::uint64_t seed, EvalCounter& counter);

struct StdStudy {
  GradStd ungrouped_j;
  GradStd ungrouped_3j;
  GradStd grouped;
  std::vector<std::size_t> grouped_proposals;  // realized proposal count per repeat
  std::uint64_t forward_cost = 0;
};
/// Gradient std over `repeats` inner reseeds with a fixed outer set: one proposal of J, one of
/// 3J, and the grouped estimator with K proposals of J each.
StdStudy gradient_std_study(const ErrorProblem& p, std::size_t repeats, std::uint64_t seed, EvalCounter& counter);

struct RunOutcome {
  std::uint64_t model_cost = 0;
  std::uint64_t truth_cost = 0;
  std::vector<std::string> files;
};

/// Runs the configured experiment and writes its artifacts into `out`.
RunOutcome run_experiment(const RunConfig& cfg, const std::filesystem::path& out);
/// ESS/grouping report without design ascent; cost N + J.
RunOutcome run_diagnose(const RunConfig& cfg, const std::filesystem::path& out);

/// manifest.json: config hash, seed, version, forward-cost totals, wall time, file schemas.
void write_manifest(const std::filesystem::path& out, const RunConfig& cfg, const std::string& status,
                    const RunOutcome& outcome, double wall_seconds);

}  // namespace gppbed
