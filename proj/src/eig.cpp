#include "gppbed/eig.hpp"

#include "gppbed/errors.hpp"
#include "gppbed/oracle.hpp"

#include <cmath>
#include <ostream>

namespace gppbed {

OuterDraws draw_outer(const ForwardModel& model, const Matrix& theta, const Matrix& eps, const Measurement& m,
                      EvalCounter& counter) {
  if (theta.rows() != eps.rows()) throw DimensionMismatch("draw_outer: theta and noise draws differ in count");
  if (eps.cols() != model.output_dim()) throw DimensionMismatch("draw_outer: noise draws must be N x d_y");
  BatchEvaluation eval = eval_forward_batch_with_design_gradient(model, theta, m, counter);
  const Matrix noise = model.noise_cov(m);
  Eigen::LLT<Matrix> llt(noise);
  if (llt.info() != Eigen::Success) throw SingularNoise("draw_outer: noise covariance is not positive definite");
  Matrix y = eval.values + eps * Matrix(llt.matrixL()).transpose();
  return OuterDraws{OuterSet(theta, std::move(y), noise), std::move(eval.values), std::move(eval.design_jacobians),
                    eps};
}

ProposalSet build_proposals(const OuterSet& outer, const PoolingWeights& nu, Ensemble prior_inner,
                            const ForwardModel& model, const Measurement& m, EvalCounter& counter,
                            const GroupingOptions& options, bool grouping, bool perturb, const RngStream& eki_rng) {
  ProposalSet out;
  out.stats = predict(prior_inner, model, m, counter);
  out.global = make_pooled(outer, nu);
  const Matrix noise = model.noise_cov(m);
  const auto j = static_cast<double>(prior_inner.size());
  if (grouping) {
    out.grouping = make_grouping(outer, out.global, noise, out.stats, j, options);
  } else {
    out.grouping.threshold = options.threshold;
    for (Eigen::Index i = 0; i < outer.size(); ++i) {
      out.grouping.ess.push_back(ess_conservative(outer.y(i), out.global, noise, out.stats, j));
      out.grouping.ok.push_back(static_cast<std::size_t>(i));
    }
  }
  const auto sets = out.grouping.proposal_sets();
  std::vector<PooledObservation> targets;
  std::vector<RngStream> rngs;
  for (std::size_t k = 0; k < sets.size(); ++k) {
    targets.push_back(sets[k].size() == static_cast<std::size_t>(outer.size()) ? out.global
                                                                                : make_pooled(outer, nu, sets[k]));
    rngs.push_back(eki_rng.child(k));
  }
  auto ensembles = update_per_group(prior_inner, out.stats, targets, perturb, rngs);
  for (std::size_t k = 0; k < sets.size(); ++k)
    out.proposals.push_back(Proposal{std::move(ensembles[k]), targets[k], sets[k]});
  return out;
}

Vector pair_score(const Vector& y_i, const Vector& f_prime, const Matrix& jac_prime, const Matrix& jac_i,
                  const Matrix& noise) {
  const Vector a = noise.llt().solve(y_i - f_prime);
  return (jac_prime - jac_i).transpose() * a;
}

GradEstimate eig_gradient(const OuterDraws& outer, std::vector<Proposal>& proposals, const ForwardModel& model,
                          const Measurement& m, EvalCounter& counter) {
  const auto n = outer.set.size();
  if (outer.jacobians.size() != static_cast<std::size_t>(n)) throw DimensionMismatch("eig_gradient: missing outer Jacobians");
  const auto dd = outer.jacobians.front().cols();
  const std::uint64_t before = counter.value();

  GradEstimate g;
  g.contributions = Matrix::Zero(n, dd);
  g.realized_ess.assign(static_cast<std::size_t>(n), 0.0);
  std::vector<int> served(static_cast<std::size_t>(n), 0);

  // First term: the score at the generating parameter (zero for additive noise, kept explicit).
  for (Eigen::Index i = 0; i < n; ++i)
    g.contributions.row(i) = pair_score(outer.set.y(i), outer.predictions.row(i).transpose(),
                                        outer.jacobians[static_cast<std::size_t>(i)],
                                        outer.jacobians[static_cast<std::size_t>(i)], outer.set.noise(i))
                                 .transpose();

  for (auto& p : proposals) {
    BatchEvaluation eval = eval_forward_batch_with_design_gradient(model, p.ensemble.members(), m, counter);
    p.ensemble.set_predictions(eval.values);
    const auto jn = eval.values.rows();
    const auto dy = eval.values.cols();
    // Row j of stacked[r] is row r of the Jacobian of inner member j.
    std::vector<Matrix> stacked(static_cast<std::size_t>(dy), Matrix(jn, dd));
    for (Eigen::Index j = 0; j < jn; ++j)
      for (Eigen::Index r = 0; r < dy; ++r)
        stacked[static_cast<std::size_t>(r)].row(j) = eval.design_jacobians[static_cast<std::size_t>(j)].row(r);
    for (const auto idx : p.served) {
      const auto i = static_cast<Eigen::Index>(idx);
      if (i >= n) throw InvalidArgument("eig_gradient: proposal serves an unknown outer sample");
      ++served[idx];
      const Vector y = outer.set.y(i);
      const Matrix& noise = outer.set.noise(i);
      const WeightVector w = snis_weights(eval.values, y, p.target, noise, idx);
      g.realized_ess[idx] = w.ess();
      // sum_j w_j (J'_j - J_i)^T a_j with a_j = Sigma^{-1} (y - f_j).
      const Matrix a = noise.llt().solve(((-eval.values).rowwise() + y.transpose()).transpose());
      const Matrix wa = a * w.w.asDiagonal();  // dy x J
      Vector inner = -outer.jacobians[idx].transpose() * wa.rowwise().sum();
      for (Eigen::Index r = 0; r < dy; ++r) inner += stacked[static_cast<std::size_t>(r)].transpose() * wa.row(r).transpose();
      g.contributions.row(i) -= inner.transpose();
    }
  }
  for (Eigen::Index i = 0; i < n; ++i)
    if (served[static_cast<std::size_t>(i)] != 1)
      throw InvalidArgument("eig_gradient: every outer sample must be served by exactly one proposal");

  g.value = g.contributions.colwise().mean().transpose();
  g.standard_error = Vector::Zero(dd);
  if (n > 1) {
    const Matrix centered = g.contributions.rowwise() - g.value.transpose();
    g.standard_error = (centered.colwise().squaredNorm() / static_cast<double>(n - 1)).cwiseSqrt().transpose() /
                       std::sqrt(static_cast<double>(n));
  }
  g.forward_cost = counter.value() - before;
  return g;
}

void to_json(nlohmann::json& j, const GradEstimate& g) {
  j = nlohmann::json{{"gradient", std::vector<double>(g.value.data(), g.value.data() + g.value.size())},
                     {"standard_error",
                      std::vector<double>(g.standard_error.data(), g.standard_error.data() + g.standard_error.size())},
                     {"forward_cost", g.forward_cost}};
}

void to_json(nlohmann::json& j, const CostLedger& c) {
  j = nlohmann::json{{"outer", c.outer}, {"predict", c.predict}, {"proposal_eval", c.proposal_eval}, {"total", c.total()}};
}

std::pair<Matrix, Matrix> draw_outer_inputs(const Gaussian& prior, Eigen::Index n, Eigen::Index obs_dim,
                                            std::uint64_t seed) {
  RngStream prior_rng(seed, streams::kPriorOuter);
  RngStream noise_rng(seed, streams::kOuterNoise);
  Matrix theta = sample_gaussian(prior, n, prior_rng).members();
  Matrix eps(n, obs_dim);
  for (Eigen::Index i = 0; i < n; ++i) eps.row(i) = noise_rng.normal_vector(obs_dim).transpose();
  return {std::move(theta), std::move(eps)};
}

GradientRun eig_gradient_pipeline(const ForwardModel& model, const Gaussian& prior, const Matrix& outer_theta,
                                  const Matrix& outer_eps, const Measurement& m, const GppOptions& options,
                                  std::uint64_t inner_seed, EvalCounter& counter) {
  GradientRun run;
  std::uint64_t mark = counter.value();
  const OuterDraws outer = draw_outer(model, outer_theta, outer_eps, m, counter);
  run.ledger.outer = counter.value() - mark;

  RngStream inner_rng(inner_seed, streams::kPriorInner);
  const RngStream eki_rng(inner_seed, streams::kEkiPerturbation);
  Ensemble inner = sample_gaussian(prior, options.inner, inner_rng);

  mark = counter.value();
  ProposalSet set = build_proposals(outer.set, PoolingWeights::uniform(outer.set.size()), std::move(inner), model, m,
                                    counter, options.grouping_options, options.grouping, options.perturb, eki_rng);
  run.ledger.predict = counter.value() - mark;
  run.grouping = set.grouping;

  mark = counter.value();
  run.estimate = eig_gradient(outer, set.proposals, model, m, counter);
  run.ledger.proposal_eval = counter.value() - mark;
  return run;
}

GradStd estimate_grad_std(std::size_t repeats, const std::function<GradEstimate(std::size_t)>& run) {
  if (repeats < 5) throw InvalidArgument("estimate_grad_std: need at least 5 repeats");
  GradStd out;
  for (std::size_t r = 0; r < repeats; ++r) {
    const GradEstimate g = run(r);
    if (r == 0) out.values.resize(static_cast<Eigen::Index>(repeats), g.value.size());
    out.values.row(static_cast<Eigen::Index>(r)) = g.value.transpose();
  }
  out.std = row_mean_cov(out.values).cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return out;
}

Point2 clip_to_box(const Point2& d, const Point2& lo, const Point2& hi) { return d.cwiseMax(lo).cwiseMin(hi); }

DesignState ascend_design(DesignState state, const std::function<Point2(const Point2&)>& grad, int steps) {
  if (!(state.step > 0.0)) throw InvalidArgument("ascend_design: step size must be positive");
  state.d = clip_to_box(state.d, state.lo, state.hi);
  if (state.trajectory.empty()) state.trajectory.push_back(state.d);
  for (int s = 0; s < steps; ++s) {
    const Point2 g = grad(state.d);
    state.gradients.push_back(g);
    state.d = clip_to_box(state.d + state.step * g, state.lo, state.hi);
    ++state.iteration;
    state.trajectory.push_back(state.d);
  }
  return state;
}

double eig_value_gaussian_linear(const Gaussian& prior, const LinearModel& model, const Point2& d) {
  return eig_closed_form(prior, model.operator_at(d), model.noise().cov());
}

void write_trajectory_csv(std::ostream& os, const DesignState& s) {
  os << "iteration,d_x[L],d_y[L],grad_x[1/L],grad_y[1/L]\n";
  os.precision(17);
  for (std::size_t k = 0; k < s.trajectory.size(); ++k) {
    os << k << ',' << s.trajectory[k].x() << ',' << s.trajectory[k].y() << ',';
    if (k < s.gradients.size()) os << s.gradients[k].x() << ',' << s.gradients[k].y();
    else os << ',';
    os << '\n';
  }
}

}  // namespace gppbed
