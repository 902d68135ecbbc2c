#pragma once

#include "gppbed/forward.hpp"
#include "gppbed/pooling.hpp"
#include "gppbed/statcore.hpp"

#include <variant>
#include <vector>

namespace gppbed {

/// Prediction-step statistics of one ensemble (all with 1/(J-1)).
struct EkiStats {
  Vector theta_mean;
  Vector forecast_mean;
  Matrix p_theta_f;    // d_theta x d_out
  Matrix p_ff;         // d_out x d_out
  Matrix predictions;  // J x d_out
};

/// Evaluates the ensemble once (J solves) and returns its statistics.
EkiStats predict(Ensemble& ensemble, const ForwardModel& model, const Measurement& m, EvalCounter& counter);
/// Statistics from predictions already cached on the ensemble.
EkiStats compute_stats(const Ensemble& ensemble);
/// Statistics of the stacked system with predictions repeated N times (1_N kron f).
EkiStats stacked_stats(const EkiStats& stats, Eigen::Index n_outer);

enum class Formulation { kStacked, kMeanObservation };

struct StackedTarget {
  Vector y;    // N d_y
  Matrix cov;  // blockdiag(Sigma_i / nu_i)
};

struct EkiUpdateSpec {
  Formulation formulation = Formulation::kMeanObservation;
  bool perturb = true;
  std::variant<PooledObservation, StackedTarget> target;
};

/// Kalman gain P_theta_f (P_ff + R)^{-1}; retries once with jitter 1e-10 trace(P_ff + R).
Matrix kalman_gain(const Matrix& p_theta_f, const Matrix& p_ff, const Matrix& noise);

/// theta_j + K (y - f_j - eta_j), eta_j ~ N(0, R) when perturbing. No forward solves.
Ensemble update(const Ensemble& ensemble, const EkiStats& stats, const EkiUpdateSpec& spec, RngStream& rng);

/// One mean-observation update per target, all from the same prediction step.
/// rngs[k] drives group k.
std::vector<Ensemble> update_per_group(const Ensemble& ensemble, const EkiStats& stats,
                                       const std::vector<PooledObservation>& groups, bool perturb,
                                       std::vector<RngStream>& rngs);

}  // namespace gppbed
