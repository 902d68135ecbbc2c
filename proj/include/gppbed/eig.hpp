#pragma once

#include "gppbed/eki.hpp"
#include "gppbed/forward.hpp"
#include "gppbed/isampling.hpp"
#include "gppbed/pooling.hpp"
#include "gppbed/statcore.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <iosfwd>
#include <vector>

namespace gppbed {

/// Outer samples evaluated at one design: y_i = f_d(theta_i) + L eps_i with the design
/// Jacobians from the same solves.
struct OuterDraws {
  OuterSet set;
  Matrix predictions;
  std::vector<Matrix> jacobians;
  Matrix eps;  // standard-normal noise draws, N x d_y
};

/// N solves (counter += N).
OuterDraws draw_outer(const ForwardModel& model, const Matrix& theta, const Matrix& eps, const Measurement& m,
                      EvalCounter& counter);

/// An inner ensemble drawn from a (grouped) pooled posterior and the outer samples it serves.
struct Proposal {
  Ensemble ensemble;
  PooledObservation target;
  std::vector<std::size_t> served;
};

struct ProposalSet {
  std::vector<Proposal> proposals;
  Grouping grouping;
  EkiStats stats;
  PooledObservation global;
};

/// Predicts the prior ensemble (J solves), diagnoses, groups, and builds one EKI proposal
/// per group from the same predictions. Without grouping a single global proposal serves
/// every outer sample.
ProposalSet build_proposals(const OuterSet& outer, const PoolingWeights& nu, Ensemble prior_inner,
                            const ForwardModel& model, const Measurement& m, EvalCounter& counter,
                            const GroupingOptions& options, bool grouping, bool perturb, const RngStream& eki_rng);

struct GradEstimate {
  Vector value;           // d_d
  Matrix contributions;   // N x d_d
  Vector standard_error;  // sd(contributions) / sqrt(N)
  std::vector<double> realized_ess;
  std::uint64_t forward_cost = 0;
};
void to_json(nlohmann::json& j, const GradEstimate& g);

/// Pair score (y_i - f_d(theta'))^T Sigma^{-1} (grad_d f_d(theta') - grad_d f_d(theta_i)):
/// the design derivative of log p(y_i(d) | theta', d) with y_i(d) = f_d(theta_i) + eps_i.
Vector pair_score(const Vector& y_i, const Vector& f_prime, const Matrix& jac_prime, const Matrix& jac_i,
                  const Matrix& noise);

/// Grouped SNIS estimator of grad_d EIG. Evaluates every proposal at the design
/// (J solves each) and reweights against the pooled target of its group.
GradEstimate eig_gradient(const OuterDraws& outer, std::vector<Proposal>& proposals, const ForwardModel& model,
                          const Measurement& m, EvalCounter& counter);

struct CostLedger {
  std::uint64_t outer = 0;
  std::uint64_t predict = 0;
  std::uint64_t proposal_eval = 0;

  std::uint64_t total() const { return outer + predict + proposal_eval; }
};
void to_json(nlohmann::json& j, const CostLedger& c);

struct GppOptions {
  Eigen::Index outer = 180;
  Eigen::Index inner = 180;
  bool grouping = true;
  bool perturb = true;
  GroupingOptions grouping_options;
};

struct GradientRun {
  GradEstimate estimate;
  Grouping grouping;
  CostLedger ledger;
};

/// The full pipeline at one design: outer draws (N), prior-ensemble prediction (J),
/// grouping, proposals, gradient (J per proposal).
GradientRun eig_gradient_pipeline(const ForwardModel& model, const Gaussian& prior, const Matrix& outer_theta,
                                  const Matrix& outer_eps, const Measurement& m, const GppOptions& options,
                                  std::uint64_t inner_seed, EvalCounter& counter);

/// Draws outer parameters and standard-normal noise from dedicated streams.
std::pair<Matrix, Matrix> draw_outer_inputs(const Gaussian& prior, Eigen::Index n, Eigen::Index obs_dim,
                                            std::uint64_t seed);

struct GradStd {
  Matrix values;  // repeats x d_d
  Vector std;     // per component, 1/(R-1)
};
/// Sample std over `repeats` inner-sampling seeds; run(r) must reseed only the inner stage.
GradStd estimate_grad_std(std::size_t repeats, const std::function<GradEstimate(std::size_t)>& run);

struct DesignState {
  Point2 d{0.0, 0.0};
  double step = 0.01;
  Point2 lo{-3.0, -3.0};
  Point2 hi{2.0, 2.0};
  int iteration = 0;
  std::vector<Point2> trajectory;
  std::vector<Point2> gradients;
};

Point2 clip_to_box(const Point2& d, const Point2& lo, const Point2& hi);

/// d <- clip(d + step * grad(d)) for `steps` iterations.
DesignState ascend_design(DesignState state, const std::function<Point2(const Point2&)>& grad, int steps);

/// Closed-form EIG of the linear-Gaussian model at design d.
double eig_value_gaussian_linear(const Gaussian& prior, const LinearModel& model, const Point2& d);

void write_trajectory_csv(std::ostream& os, const DesignState& s);

}  // namespace gppbed
