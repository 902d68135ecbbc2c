#include "gppbed/eki.hpp"

#include "gppbed/errors.hpp"

#include <cmath>
#include <string>

namespace gppbed {

EkiStats predict(Ensemble& ensemble, const ForwardModel& model, const Measurement& m, EvalCounter& counter) {
  eval_forward_batch(model, ensemble, m, counter);
  return compute_stats(ensemble);
}

EkiStats compute_stats(const Ensemble& ensemble) {
  const Matrix& f = ensemble.predictions();
  const MeanCov th = ensemble_mean_cov(ensemble);
  const MeanCov ff = row_mean_cov(f);
  EkiStats s;
  s.theta_mean = th.mean;
  s.forecast_mean = ff.mean;
  s.p_theta_f = row_cross_cov(ensemble.members(), f);
  s.p_ff = 0.5 * (ff.cov + ff.cov.transpose());
  s.predictions = f;
  return s;
}

EkiStats stacked_stats(const EkiStats& stats, Eigen::Index n_outer) {
  if (n_outer < 1) throw InvalidArgument("stacked_stats: need at least one outer sample");
  EkiStats s;
  s.theta_mean = stats.theta_mean;
  s.forecast_mean = stats.forecast_mean.replicate(n_outer, 1);
  s.p_theta_f = stats.p_theta_f.replicate(1, n_outer);
  s.p_ff = stats.p_ff.replicate(n_outer, n_outer);
  s.predictions = stats.predictions.replicate(1, n_outer);
  return s;
}

Matrix kalman_gain(const Matrix& p_theta_f, const Matrix& p_ff, const Matrix& noise) {
  if (p_ff.rows() != noise.rows() || p_ff.cols() != noise.cols() || p_theta_f.cols() != p_ff.rows())
    throw DimensionMismatch("kalman_gain: covariance dimensions do not match");
  Matrix c = p_ff + noise;
  c = 0.5 * (c + c.transpose()).eval();
  Eigen::LLT<Matrix> llt(c);
  if (llt.info() != Eigen::Success) {
    const double scale = c.trace();
    if (!(scale > 0.0) || !std::isfinite(scale)) throw GainSolveFailure("innovation covariance is singular");
    const double jitter = 1e-10 * scale;
    llt.compute(c + jitter * Matrix::Identity(c.rows(), c.cols()));
    if (llt.info() != Eigen::Success) throw GainSolveFailure("innovation covariance is singular");
  }
  // K = P_tf C^{-1}  <=>  K^T = C^{-1} P_tf^T.
  return llt.solve(p_theta_f.transpose()).transpose();
}

Ensemble update(const Ensemble& ensemble, const EkiStats& stats, const EkiUpdateSpec& spec, RngStream& rng) {
  const auto j_count = ensemble.size();
  if (stats.predictions.rows() != j_count || stats.p_theta_f.rows() != ensemble.dim())
    throw DimensionMismatch("update: statistics do not belong to this ensemble");

  Vector target;
  Matrix noise;
  if (spec.formulation == Formulation::kStacked) {
    const auto* st = std::get_if<StackedTarget>(&spec.target);
    if (!st) throw InvalidArgument("stacked formulation requires a stacked target");
    target = st->y;
    noise = st->cov;
  } else {
    const auto* po = std::get_if<PooledObservation>(&spec.target);
    if (!po) throw InvalidArgument("mean-observation formulation requires a pooled observation target");
    target = po->mean;
    noise = po->cov;
  }
  if (target.size() != stats.predictions.cols() || noise.rows() != target.size())
    throw DimensionMismatch("update: target dimension does not match the predictions (stacked stats needed?)");

  const Matrix gain = kalman_gain(stats.p_theta_f, stats.p_ff, noise);
  Matrix innovations = (-stats.predictions).rowwise() + target.transpose();
  if (spec.perturb) {
    const Matrix factor = psd_factor(noise);
    for (Eigen::Index j = 0; j < j_count; ++j)
      innovations.row(j) -= (factor * rng.normal_vector(noise.rows())).transpose();
  }
  Matrix members = ensemble.members() + innovations * gain.transpose();
  return Ensemble(std::move(members));
}

std::vector<Ensemble> update_per_group(const Ensemble& ensemble, const EkiStats& stats,
                                       const std::vector<PooledObservation>& groups, bool perturb,
                                       std::vector<RngStream>& rngs) {
  if (rngs.size() != groups.size()) throw InvalidArgument("update_per_group: one rng stream per group required");
  std::vector<Ensemble> out;
  out.reserve(groups.size());
  for (std::size_t k = 0; k < groups.size(); ++k) {
    EkiUpdateSpec spec{Formulation::kMeanObservation, perturb, groups[k]};
    out.push_back(update(ensemble, stats, spec, rngs[k]));
  }
  return out;
}

}  // namespace gppbed
