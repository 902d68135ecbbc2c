#pragma once

#include "gppbed/eig.hpp"
#include "gppbed/forward.hpp"
#include "gppbed/statcore.hpp"

#include <nlohmann/json.hpp>

#include <iosfwd>
#include <optional>
#include <vector>

namespace gppbed {

/// Belief over theta_G = (theta_x, theta_y) on an n x n grid of cell centers over [lo, hi]^2.
/// Node k = ix * n + iy, so index order is lexicographic in (theta_x, theta_y).
class GridPosterior {
 public:
  GridPosterior(int n = 50, double lo = 0.0, double hi = 1.0);

  int n() const noexcept { return n_; }
  Eigen::Index size() const noexcept { return weights_.size(); }
  Point2 node(Eigen::Index k) const;
  const Vector& weights() const noexcept { return weights_; }
  void set_weights(Vector w);

  /// Multiplies by exp(loglik) pointwise and renormalizes. ZeroPosteriorMass if nothing survives.
  void update(const Vector& loglik);
  /// Largest weight; ties go to the lowest index.
  Eigen::Index map_index() const;
  Point2 map() const { return node(map_index()); }
  /// Chebyshev distance in cells between the node containing p and node k.
  int cell_distance(Eigen::Index k, const Point2& p) const;

  void write_csv(std::ostream& os) const;

 private:
  int n_;
  double lo_;
  double hi_;
  Vector weights_;
};

enum class DiscrepancyCase { kParametric, kStructural };
enum class ErrorData { kCurrent, kAccumulated };

struct SeqConfig {
  DiscrepancyCase discrepancy = DiscrepancyCase::kParametric;
  PdeConfig pde;
  SourceSpec truth{SourceKind::kGaussian, 0.23, 0.27, 0.1, 2.0};
  double model_strength = 3.0;  // parametric: initial theta_s
  double initial_network_spread = 0.3;
  double noise_variance = 0.0025;
  int grid = 50;
  int candidates = 11;  // per axis over the belief box
  double first_time = 0.05;
  double time_step = 0.005;
  int stages = 3;
  double sigma_e_strength = 1.0;
  double sigma_e_network = 0.1;
  GppOptions gpp;
  double design_step = 0.002;
  int design_iterations = 3;
  Point2 design_lo{0.0, 0.0};
  Point2 design_hi{1.0, 1.0};
  int training_steps = 200;
  double learning_rate = 1e-3;
  ErrorData error_data = ErrorData::kAccumulated;
  bool random_error_design = false;
  std::uint64_t seed = 1;
};

struct Observation {
  Point2 design;
  double time = 0.0;
  double y = 0.0;
};

struct StageLedger {
  std::uint64_t physical_design = 0;
  CostLedger error_design;  // summed over design iterations
  std::vector<CostLedger> error_design_per_iteration;
  std::vector<std::size_t> proposals_per_iteration;
  std::uint64_t error_design_iterations = 0;
  std::uint64_t training = 0;
  std::uint64_t refit = 0;
  std::uint64_t diagnostics = 0;
  std::uint64_t truth = 0;  // solves of the true system (not model cost)

  std::uint64_t model_total() const {
    return physical_design + error_design.total() + training + refit + diagnostics;
  }
};
void to_json(nlohmann::json& j, const StageLedger& l);

struct StageReport {
  int stage = 0;
  double time = 0.0;
  Point2 design_physical;
  double eig_physical = 0.0;
  Point2 design_error;
  Point2 map;
  Vector theta_e;
  double y_physical = 0.0;
  double y_error = 0.0;
  GradientRun last_gradient;
  DesignState design_trajectory;
  double field_relative_error = 0.0;  // max-norm, corrected model vs truth at the stage time
  std::vector<double> relative_error_map;
  StageLedger ledger;
};
void to_json(nlohmann::json& j, const StageReport& r);

struct SeqState {
  int stage = 0;
  GridPosterior prior;
  GridPosterior posterior;
  Vector theta_e;
  std::vector<Observation> physical_history;
  std::vector<Observation> error_history;
};

/// Model for theta_G = (theta_x, theta_y) conditioned on the current error parameters.
PdeModel location_model(const SeqConfig& cfg, const Vector& theta_e);
/// Model for theta_E at fixed source location.
PdeModel error_model(const SeqConfig& cfg, const Vector& theta_e, const Point2& location);
PdeModel truth_model(const SeqConfig& cfg);
SeqState initial_state(const SeqConfig& cfg);

std::vector<Point2> candidate_designs(const SeqConfig& cfg);

/// Predictions f_k(d_c) for every grid node k and candidate d_c at time t (one solve per node).
Matrix grid_predictions(const PdeModel& model, const GridPosterior& grid, const std::vector<Point2>& designs,
                        double t, EvalCounter& counter);

/// EIG of a 1D Gaussian-mixture predictive: H[sum_k w_k N(f_k, s2)] - H[N(0, s2)].
double mixture_eig(const Vector& weights, const Vector& means, double noise_variance);

struct PhysicalDesign {
  std::size_t index = 0;
  Point2 design;
  double eig = 0.0;
  std::vector<double> scores;
};
/// Exhaustive scan; ties go to the first candidate.
PhysicalDesign design_physical(const GridPosterior& belief, const Matrix& predictions,
                               const std::vector<Point2>& designs, double noise_variance);

/// Gaussian log-likelihood of y for every node.
Vector grid_loglik(const Vector& node_predictions, double y, double noise_variance);

/// Recomputes the posterior from the original prior and the full physical history under the
/// given model (one solve per node).
GridPosterior refit_history(const GridPosterior& prior, const std::vector<Observation>& history, const PdeModel& model,
                            double noise_variance, EvalCounter& counter);

/// Gauss-Newton update of theta_s on the error data (exact for the linear strength map).
double update_strength(const PdeModel& model, double theta_s, const std::vector<Observation>& data,
                       EvalCounter& counter);
/// Full-batch gradient ascent on the Gaussian log-likelihood over the network weights.
Vector train_network(const PdeModel& model, const Vector& weights, const std::vector<Observation>& data,
                     double noise_variance, int steps, double learning_rate, EvalCounter& counter);

StageReport run_stage(SeqState& state, const SeqConfig& cfg, EvalCounter& counter, EvalCounter& truth_counter);

}  // namespace gppbed
