#include "gppbed/seqbed.hpp"

#include "gppbed/errors.hpp"
#include "gppbed/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>

namespace gppbed {

// ---------------------------------------------------------------------------
// Grid belief

GridPosterior::GridPosterior(int n, double lo, double hi) : n_(n), lo_(lo), hi_(hi) {
  if (n < 1 || !(hi > lo)) throw InvalidArgument("GridPosterior: invalid grid");
  weights_ = Vector::Constant(static_cast<Eigen::Index>(n) * n, 1.0 / (static_cast<double>(n) * n));
}

Point2 GridPosterior::node(Eigen::Index k) const {
  const double h = (hi_ - lo_) / n_;
  const auto ix = k / n_;
  const auto iy = k % n_;
  return Point2(lo_ + (static_cast<double>(ix) + 0.5) * h, lo_ + (static_cast<double>(iy) + 0.5) * h);
}

void GridPosterior::set_weights(Vector w) {
  if (w.size() != weights_.size()) throw DimensionMismatch("GridPosterior: weight count mismatch");
  if ((w.array() < 0.0).any() || !(w.sum() > 0.0)) throw ZeroPosteriorMass("GridPosterior: weights must be nonnegative with positive mass");
  weights_ = w / w.sum();
}

void GridPosterior::update(const Vector& loglik) {
  if (loglik.size() != weights_.size()) throw DimensionMismatch("GridPosterior::update: one log-likelihood per node");
  Vector logp(weights_.size());
  double top = -std::numeric_limits<double>::infinity();
  for (Eigen::Index k = 0; k < logp.size(); ++k) {
    logp(k) = weights_(k) > 0.0 ? std::log(weights_(k)) + loglik(k) : -std::numeric_limits<double>::infinity();
    if (std::isnan(logp(k))) logp(k) = -std::numeric_limits<double>::infinity();
    top = std::max(top, logp(k));
  }
  if (!std::isfinite(top)) throw ZeroPosteriorMass("every grid likelihood underflows");
  Vector w = (logp.array() - top).exp();
  weights_ = w / w.sum();
}

Eigen::Index GridPosterior::map_index() const {
  Eigen::Index best = 0;
  for (Eigen::Index k = 1; k < weights_.size(); ++k)
    if (weights_(k) > weights_(best)) best = k;
  return best;
}

int GridPosterior::cell_distance(Eigen::Index k, const Point2& p) const {
  const double h = (hi_ - lo_) / n_;
  const int px = std::clamp(static_cast<int>(std::floor((p.x() - lo_) / h)), 0, n_ - 1);
  const int py = std::clamp(static_cast<int>(std::floor((p.y() - lo_) / h)), 0, n_ - 1);
  const int kx = static_cast<int>(k / n_);
  const int ky = static_cast<int>(k % n_);
  return std::max(std::abs(kx - px), std::abs(ky - py));
}

void GridPosterior::write_csv(std::ostream& os) const {
  os << "ix,iy,theta_x[L],theta_y[L],weight[1]\n";
  os.precision(17);
  for (Eigen::Index k = 0; k < size(); ++k) {
    const Point2 p = node(k);
    os << k / n_ << ',' << k % n_ << ',' << p.x() << ',' << p.y() << ',' << weights_(k) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Models

namespace {

MlpCorrection network_of(const Vector& theta_e) { return MlpCorrection(theta_e); }

SourceSpec model_source(const SeqConfig& cfg) {
  SourceSpec s = cfg.truth;
  if (cfg.discrepancy == DiscrepancyCase::kStructural) s.kind = SourceKind::kRational;
  return s;
}

double gaussian_loglik(double y, double f, double s2) { return -0.5 * (y - f) * (y - f) / s2; }

}  // namespace

PdeModel location_model(const SeqConfig& cfg, const Vector& theta_e) {
  SourceSpec s = model_source(cfg);
  if (cfg.discrepancy == DiscrepancyCase::kParametric) {
    s.strength = theta_e(0);
    return PdeModel(cfg.pde, s, Unknowns::kLocation);
  }
  return PdeModel(cfg.pde, s, Unknowns::kLocation, network_of(theta_e));
}

PdeModel error_model(const SeqConfig& cfg, const Vector& theta_e, const Point2& location) {
  SourceSpec s = model_source(cfg);
  s.x = location.x();
  s.y = location.y();
  if (cfg.discrepancy == DiscrepancyCase::kParametric) {
    s.strength = theta_e(0);
    return PdeModel(cfg.pde, s, Unknowns::kStrength);
  }
  return PdeModel(cfg.pde, s, Unknowns::kNetworkWeights, network_of(theta_e));
}

PdeModel truth_model(const SeqConfig& cfg) { return PdeModel(cfg.pde, cfg.truth, Unknowns::kStrength); }

SeqState initial_state(const SeqConfig& cfg) {
  SeqState s{0, GridPosterior(cfg.grid), GridPosterior(cfg.grid), Vector(), {}, {}};
  if (cfg.discrepancy == DiscrepancyCase::kParametric) {
    s.theta_e = Vector::Constant(1, cfg.model_strength);
  } else {
    RngStream rng(cfg.seed, streams::kFixture);
    s.theta_e = cfg.initial_network_spread * rng.normal_vector(static_cast<Eigen::Index>(MlpCorrection::kParameterCount));
  }
  return s;
}

std::vector<Point2> candidate_designs(const SeqConfig& cfg) {
  std::vector<Point2> out;
  const int m = std::max(cfg.candidates, 1);
  for (int ix = 0; ix < m; ++ix)
    for (int iy = 0; iy < m; ++iy) {
      const double fx = m == 1 ? 0.5 : static_cast<double>(ix) / (m - 1);
      const double fy = m == 1 ? 0.5 : static_cast<double>(iy) / (m - 1);
      out.emplace_back(cfg.design_lo.x() + fx * (cfg.design_hi.x() - cfg.design_lo.x()),
                       cfg.design_lo.y() + fy * (cfg.design_hi.y() - cfg.design_lo.y()));
    }
  return out;
}

Matrix grid_predictions(const PdeModel& model, const GridPosterior& grid, const std::vector<Point2>& designs,
                        double t, EvalCounter& counter) {
  Matrix out(grid.size(), static_cast<Eigen::Index>(designs.size()));
  parallel_for(static_cast<std::size_t>(grid.size()), [&](std::size_t k) {
    const auto row = static_cast<Eigen::Index>(k);
    const Point2 p = grid.node(row);
    const Field f = model.solve_field(Vector(p), t);
    for (std::size_t c = 0; c < designs.size(); ++c) out(row, static_cast<Eigen::Index>(c)) = f.interpolate(designs[c]);
  });
  counter.add(static_cast<std::uint64_t>(grid.size()));
  return out;
}

double mixture_eig(const Vector& weights, const Vector& means, double noise_variance) {
  if (weights.size() != means.size()) throw DimensionMismatch("mixture_eig: weights and means differ in length");
  const double s = std::sqrt(noise_variance);
  const double cutoff = 1e-15 * weights.maxCoeff();
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (Eigen::Index k = 0; k < means.size(); ++k)
    if (weights(k) > cutoff) lo = std::min(lo, means(k)), hi = std::max(hi, means(k));
  constexpr double kWindow = 8.0;
  lo -= kWindow * s;
  hi += kWindow * s;
  double h = s / 8.0;
  const double max_points = 20000.0;
  if ((hi - lo) / h > max_points) h = (hi - lo) / max_points;
  const auto npts = static_cast<Eigen::Index>(std::ceil((hi - lo) / h)) + 1;
  Vector p = Vector::Zero(npts);
  const double norm = 1.0 / (std::sqrt(2.0 * M_PI) * s);
  for (Eigen::Index k = 0; k < means.size(); ++k) {
    if (weights(k) <= cutoff) continue;
    const auto a = std::max<Eigen::Index>(0, static_cast<Eigen::Index>(std::floor((means(k) - kWindow * s - lo) / h)));
    const auto b = std::min<Eigen::Index>(npts - 1, static_cast<Eigen::Index>(std::ceil((means(k) + kWindow * s - lo) / h)));
    for (Eigen::Index q = a; q <= b; ++q) {
      const double z = (lo + static_cast<double>(q) * h - means(k)) / s;
      p(q) += weights(k) * norm * std::exp(-0.5 * z * z);
    }
  }
  double entropy = 0.0;
  for (Eigen::Index q = 0; q < npts; ++q)
    if (p(q) > 0.0) entropy -= p(q) * std::log(p(q)) * h;
  return entropy - 0.5 * std::log(2.0 * M_PI * M_E * noise_variance);
}

PhysicalDesign design_physical(const GridPosterior& belief, const Matrix& predictions,
                               const std::vector<Point2>& designs, double noise_variance) {
  if (predictions.rows() != belief.size() || predictions.cols() != static_cast<Eigen::Index>(designs.size()))
    throw DimensionMismatch("design_physical: prediction matrix must be nodes x candidates");
  if (designs.empty()) throw InvalidArgument("design_physical: no candidate designs");
  PhysicalDesign out;
  out.scores.resize(designs.size());
  for (std::size_t c = 0; c < designs.size(); ++c)
    out.scores[c] = mixture_eig(belief.weights(), predictions.col(static_cast<Eigen::Index>(c)), noise_variance);
  out.index = 0;
  for (std::size_t c = 1; c < designs.size(); ++c) {
    const double best = out.scores[out.index];
    if (out.scores[c] > best + 1e-12 * std::max(1.0, std::abs(best))) out.index = c;
  }
  out.design = designs[out.index];
  out.eig = out.scores[out.index];
  return out;
}

Vector grid_loglik(const Vector& node_predictions, double y, double noise_variance) {
  Vector out(node_predictions.size());
  for (Eigen::Index k = 0; k < out.size(); ++k) out(k) = gaussian_loglik(y, node_predictions(k), noise_variance);
  return out;
}

namespace {

/// Sorted distinct times of a history and, per observation, its slot in that list.
std::pair<std::vector<double>, std::vector<std::size_t>> time_slots(const std::vector<Observation>& data) {
  std::vector<double> times;
  for (const auto& o : data) times.push_back(o.time);
  std::sort(times.begin(), times.end());
  times.erase(std::unique(times.begin(), times.end()), times.end());
  std::vector<std::size_t> slot;
  for (const auto& o : data)
    slot.push_back(static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), o.time) - times.begin()));
  return {times, slot};
}

Vector predict_history(const std::vector<Field>& fields, const std::vector<Observation>& data,
                       const std::vector<std::size_t>& slot) {
  Vector f(static_cast<Eigen::Index>(data.size()));
  for (std::size_t m = 0; m < data.size(); ++m) f(static_cast<Eigen::Index>(m)) = fields[slot[m]].interpolate(data[m].design);
  return f;
}

}  // namespace

GridPosterior refit_history(const GridPosterior& prior, const std::vector<Observation>& history, const PdeModel& model,
                            double noise_variance, EvalCounter& counter) {
  GridPosterior out = prior;
  if (history.empty()) return out;
  const auto [times, slot] = time_slots(history);
  Vector loglik(prior.size());
  parallel_for(static_cast<std::size_t>(prior.size()), [&](std::size_t k) {
    const auto row = static_cast<Eigen::Index>(k);
    const auto fields = model.solve_fields(Vector(prior.node(row)), times);
    const Vector f = predict_history(fields, history, slot);
    double ll = 0.0;
    for (std::size_t m = 0; m < history.size(); ++m)
      ll += gaussian_loglik(history[m].y, f(static_cast<Eigen::Index>(m)), noise_variance);
    loglik(row) = ll;
  });
  counter.add(static_cast<std::uint64_t>(prior.size()));
  out.update(loglik);
  return out;
}

double update_strength(const PdeModel& model, double theta_s, const std::vector<Observation>& data,
                       EvalCounter& counter) {
  if (data.empty()) return theta_s;
  const auto [times, slot] = time_slots(data);
  const double delta = std::max(1.0, std::abs(theta_s));
  const Vector f0 = predict_history(model.solve_fields(Vector::Constant(1, theta_s), times), data, slot);
  const Vector f1 = predict_history(model.solve_fields(Vector::Constant(1, theta_s + delta), times), data, slot);
  counter.add(2);
  const Vector jac = (f1 - f0) / delta;
  Vector r(static_cast<Eigen::Index>(data.size()));
  for (std::size_t m = 0; m < data.size(); ++m) r(static_cast<Eigen::Index>(m)) = data[m].y - f0(static_cast<Eigen::Index>(m));
  const double jj = jac.squaredNorm();
  if (!(jj > 0.0)) return theta_s;
  return theta_s + jac.dot(r) / jj;
}

Vector train_network(const PdeModel& model, const Vector& weights, const std::vector<Observation>& data,
                     double noise_variance, int steps, double learning_rate, EvalCounter& counter) {
  if (data.empty() || steps <= 0) return weights;
  const auto [times, slot] = time_slots(data);
  const auto p_count = static_cast<Eigen::Index>(MlpCorrection::kParameterCount);
  const PdeConfig& c = model.config();
  const SourceSpec src = model.base_source();
  Vector w = weights;
  for (int step = 0; step < steps; ++step) {
    const Vector f = predict_history(model.solve_fields(w, times), data, slot);
    // Tangent sources dNN/dw_p on the grid; the PDE is linear in its source.
    const MlpCorrection net(w);
    std::vector<std::vector<double>> tangent(static_cast<std::size_t>(p_count),
                                             std::vector<double>(static_cast<std::size_t>(c.nx) * c.ny));
    for (int iy = 0; iy < c.ny; ++iy)
      for (int ix = 0; ix < c.nx; ++ix) {
        const auto vg = net.eval_and_grad(src.x - (c.z_lo + ix * c.dx()), src.y - (c.z_lo + iy * c.dy()));
        for (Eigen::Index p = 0; p < p_count; ++p)
          tangent[static_cast<std::size_t>(p)][static_cast<std::size_t>(iy) * c.nx + ix] = vg.grad(p);
      }
    Matrix jac(static_cast<Eigen::Index>(data.size()), p_count);
    parallel_for(static_cast<std::size_t>(p_count), [&](std::size_t p) {
      jac.col(static_cast<Eigen::Index>(p)) = predict_history(model.march(tangent[p], times), data, slot);
    });
    counter.add(1 + static_cast<std::uint64_t>(p_count));
    Vector r(static_cast<Eigen::Index>(data.size()));
    for (std::size_t m = 0; m < data.size(); ++m) r(static_cast<Eigen::Index>(m)) = data[m].y - f(static_cast<Eigen::Index>(m));
    w += learning_rate * jac.transpose() * r / noise_variance;
  }
  return w;
}

// ---------------------------------------------------------------------------
// Stage

namespace {

double observe(const PdeModel& truth, const Point2& d, double t, double noise_variance, RngStream rng,
               EvalCounter& truth_counter) {
  Measurement m;
  m.location = d;
  m.time = t;
  m.noise_variance = noise_variance;
  return eval_forward(truth, Vector::Constant(1, truth.base_source().strength), m, truth_counter)(0) +
         std::sqrt(noise_variance) * rng.normal();
}

}  // namespace

StageReport run_stage(SeqState& state, const SeqConfig& cfg, EvalCounter& counter, EvalCounter& truth_counter) {
  StageReport rep;
  rep.stage = ++state.stage;
  rep.time = cfg.first_time + cfg.time_step * rep.stage;
  const double s2 = cfg.noise_variance;
  const PdeModel truth = truth_model(cfg);
  const RngStream noise_rng(cfg.seed, streams::kExperimentNoise);
  const std::uint64_t stage_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(rep.stage));
  std::uint64_t mark = counter.value();
  const std::uint64_t truth_mark = truth_counter.value();

  // Physical design and belief update.
  const PdeModel loc = location_model(cfg, state.theta_e);
  const auto candidates = candidate_designs(cfg);
  const Matrix preds = grid_predictions(loc, state.posterior, candidates, rep.time, counter);
  rep.ledger.physical_design = counter.value() - mark;
  const PhysicalDesign pd = design_physical(state.posterior, preds, candidates, s2);
  rep.design_physical = pd.design;
  rep.eig_physical = pd.eig;
  rep.y_physical = observe(truth, pd.design, rep.time, s2, noise_rng.child(2 * rep.stage), truth_counter);
  state.posterior.update(grid_loglik(preds.col(static_cast<Eigen::Index>(pd.index)), rep.y_physical, s2));
  state.physical_history.push_back({pd.design, rep.time, rep.y_physical});
  const Point2 map = state.posterior.map();

  // Error-parameter design through the grouped pooled-posterior gradient.
  const PdeModel em = error_model(cfg, state.theta_e, map);
  const double spread = cfg.discrepancy == DiscrepancyCase::kParametric ? cfg.sigma_e_strength : cfg.sigma_e_network;
  const Gaussian prior_e = Gaussian::isotropic(state.theta_e, spread);
  Measurement meas;
  meas.time = rep.time;
  meas.noise_variance = s2;
  DesignState ds;
  ds.d = clip_to_box(map, cfg.design_lo, cfg.design_hi);
  ds.step = cfg.design_step;
  ds.lo = cfg.design_lo;
  ds.hi = cfg.design_hi;
  if (cfg.random_error_design) {
    RngStream r(stage_seed, streams::kFixture);
    ds.d = cfg.design_lo + Point2(r.uniform(), r.uniform()).cwiseProduct(cfg.design_hi - cfg.design_lo);
    ds.trajectory.push_back(ds.d);
  } else {
    const auto [outer_theta, outer_eps] = draw_outer_inputs(prior_e, cfg.gpp.outer, 1, stage_seed);
    std::uint64_t iteration = 0;
    ds = ascend_design(
        ds,
        [&](const Point2& d) {
          meas.location = d;
          GradientRun run = eig_gradient_pipeline(em, prior_e, outer_theta, outer_eps, meas, cfg.gpp,
                                                  derive_seed(stage_seed, ++iteration), counter);
          rep.ledger.error_design.outer += run.ledger.outer;
          rep.ledger.error_design.predict += run.ledger.predict;
          rep.ledger.error_design.proposal_eval += run.ledger.proposal_eval;
          ++rep.ledger.error_design_iterations;
          rep.ledger.error_design_per_iteration.push_back(run.ledger);
          rep.ledger.proposals_per_iteration.push_back(run.grouping.proposal_count());
          const Point2 g(run.estimate.value(0), run.estimate.value(1));
          rep.last_gradient = std::move(run);
          return g;
        },
        cfg.design_iterations);
  }
  rep.design_trajectory = ds;
  rep.design_error = ds.d;
  rep.y_error = observe(truth, rep.design_error, rep.time, s2, noise_rng.child(2 * rep.stage + 1), truth_counter);
  state.error_history.push_back({rep.design_error, rep.time, rep.y_error});

  // Error-parameter update.
  std::vector<Observation> data = state.error_history;
  if (cfg.error_data == ErrorData::kCurrent) data = {state.error_history.back()};
  mark = counter.value();
  if (cfg.discrepancy == DiscrepancyCase::kParametric) {
    state.theta_e(0) = update_strength(em, state.theta_e(0), data, counter);
  } else {
    state.theta_e = train_network(em, state.theta_e, data, s2, cfg.training_steps, cfg.learning_rate, counter);
  }
  rep.ledger.training = counter.value() - mark;
  rep.theta_e = state.theta_e;

  // Refit the physical belief on the full history under the updated model.
  mark = counter.value();
  state.posterior = refit_history(state.prior, state.physical_history, location_model(cfg, state.theta_e), s2, counter);
  rep.ledger.refit = counter.value() - mark;
  rep.map = state.posterior.map();

  // Corrected-field error against the true field.
  mark = counter.value();
  const Field model_field = location_model(cfg, state.theta_e).solve_field(Vector(rep.map), rep.time);
  counter.add(1);
  const Field true_field = truth.solve_field(Vector::Constant(1, cfg.truth.strength), rep.time);
  truth_counter.add(1);
  rep.ledger.diagnostics = counter.value() - mark;
  double umax = 0.0;
  for (const double v : true_field.values()) umax = std::max(umax, std::abs(v));
  rep.relative_error_map.resize(true_field.values().size());
  for (std::size_t q = 0; q < rep.relative_error_map.size(); ++q)
    rep.relative_error_map[q] = std::abs(model_field.values()[q] - true_field.values()[q]) / std::max(umax, 1e-300);
  rep.field_relative_error = *std::max_element(rep.relative_error_map.begin(), rep.relative_error_map.end());
  rep.ledger.truth = truth_counter.value() - truth_mark;
  return rep;
}

void to_json(nlohmann::json& j, const StageLedger& l) {
  j = nlohmann::json{{"physical_design", l.physical_design},
                     {"error_design", l.error_design},
                     {"error_design_iterations", l.error_design_iterations},
                     {"error_design_per_iteration", l.error_design_per_iteration},
                     {"proposals_per_iteration", l.proposals_per_iteration},
                     {"training", l.training},
                     {"refit", l.refit},
                     {"diagnostics", l.diagnostics},
                     {"model_total", l.model_total()},
                     {"truth", l.truth}};
}

void to_json(nlohmann::json& j, const StageReport& r) {
  auto pt = [](const Point2& p) { return std::vector<double>{p.x(), p.y()}; };
  j = nlohmann::json{{"stage", r.stage},
                     {"time", r.time},
                     {"design_physical", pt(r.design_physical)},
                     {"eig_physical", r.eig_physical},
                     {"design_error", pt(r.design_error)},
                     {"map", pt(r.map)},
                     {"theta_e", std::vector<double>(r.theta_e.data(), r.theta_e.data() + r.theta_e.size())},
                     {"y_physical", r.y_physical},
                     {"y_error", r.y_error},
                     {"field_relative_error", r.field_relative_error},
                     {"last_gradient", r.last_gradient.estimate},
                     {"last_gradient_ledger", r.last_gradient.ledger},
                     {"grouping", r.last_gradient.grouping},
                     {"ledger", r.ledger}};
}

}  // namespace gppbed
