#include "gppbed/experiments.hpp"

#include "gppbed/errors.hpp"
#include "gppbed/oracle.hpp"
#include "gppbed/parallel.hpp"
#include "gppbed/seqbed.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace gppbed {

namespace fs = std::filesystem;

namespace {

double resolved_threshold(const RunConfig& cfg, Eigen::Index dim) {
  return cfg.threshold > 0.0 ? cfg.threshold : static_cast<double>(dim);
}

GppOptions gpp_options(const RunConfig& cfg, Eigen::Index dim) {
  GppOptions o;
  o.outer = cfg.outer;
  o.inner = cfg.inner;
  o.grouping = cfg.grouping;
  o.perturb = cfg.perturb;
  o.grouping_options.threshold = resolved_threshold(cfg, dim);
  o.grouping_options.proposals = static_cast<std::size_t>(cfg.groups);
  o.grouping_options.trigger_fraction = cfg.trigger_fraction;
  return o;
}

class CsvFile {
 public:
  CsvFile(const fs::path& dir, const std::string& name, RunOutcome& outcome) : os_(dir / name) {
    if (!os_) throw Error("cannot write " + (dir / name).string());
    os_.precision(17);
    outcome.files.push_back(name);
  }
  std::ofstream& operator*() { return os_; }

 private:
  std::ofstream os_;
};

void write_json(const fs::path& dir, const std::string& name, const nlohmann::json& j, RunOutcome& outcome) {
  std::ofstream os(dir / name);
  if (!os) throw Error("cannot write " + (dir / name).string());
  os << j.dump(2) << '\n';
  outcome.files.push_back(name);
}

std::string stage_name(const std::string& stem, int stage, const std::string& ext) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%02d", stage);
  return stem + "_stage_" + buf + ext;
}

void write_ess(const fs::path& dir, const std::string& name, const Grouping& g, const Matrix* y, RunOutcome& outcome) {
  std::vector<int> label(g.ess.size(), -1);
  const auto sets = g.proposal_sets();
  for (std::size_t k = 0; k < sets.size(); ++k)
    for (const auto i : sets[k]) label[i] = static_cast<int>(k);
  CsvFile f(dir, name, outcome);
  *f << "sample,y[C],ess_conservative[1],problematic,proposal\n";
  for (std::size_t i = 0; i < g.ess.size(); ++i) {
    *f << i << ',';
    if (y) *f << (*y)(static_cast<Eigen::Index>(i), 0);
    *f << ',' << g.ess[i] << ',' << (g.ess[i] < g.threshold ? 1 : 0) << ',' << label[i] << '\n';
  }
}

void write_ess_histogram(const fs::path& dir, const std::string& name, const Grouping& g, double j,
                         RunOutcome& outcome) {
  constexpr int kBins = 20;
  const double hi = std::log10(j);
  double lo = 0.0;
  for (const double e : g.ess) lo = std::min(lo, std::floor(std::log10(std::max(e, 1e-300))));
  lo = std::max(lo, -10.0);
  std::vector<long> count(kBins, 0);
  for (const double e : g.ess) {
    const double v = std::log10(std::max(e, 1e-300));
    const int b = std::clamp(static_cast<int>(std::floor((v - lo) / (hi - lo) * kBins)), 0, kBins - 1);
    ++count[static_cast<std::size_t>(b)];
  }
  CsvFile f(dir, name, outcome);
  *f << "bin,log10_ess_lo[1],log10_ess_hi[1],count\n";
  for (int b = 0; b < kBins; ++b)
    *f << b << ',' << lo + (hi - lo) * b / kBins << ',' << lo + (hi - lo) * (b + 1) / kBins << ',' << count[b] << '\n';
}

void write_std_study(const fs::path& dir, const StdStudy& s, std::size_t repeats, RunOutcome& outcome) {
  CsvFile f(dir, "gradient_std.csv", outcome);
  *f << "estimator,component,mean[1/L],std[1/L],repeats\n";
  auto rows = [&](const char* name, const GradStd& g) {
    const Vector mean = g.values.colwise().mean().transpose();
    for (Eigen::Index c = 0; c < g.std.size(); ++c)
      *f << name << ',' << c << ',' << mean(c) << ',' << g.std(c) << ',' << repeats << '\n';
  };
  rows("ungrouped_J", s.ungrouped_j);
  rows("ungrouped_3J", s.ungrouped_3j);
  rows("grouped", s.grouped);
}

RunOutcome run_linear_toy(const RunConfig& cfg, const fs::path& out) {
  RunOutcome outcome;
  EvalCounter counter;

  const auto rows = oracle_comparison(cfg, counter);
  {
    CsvFile f(out, "oracle_comparison.csv", outcome);
    *f << "quantity,oracle[P],eki[P],abs_deviation[P],mc_standard_error[P]\n";
    double worst = 0.0;
    for (const auto& r : rows) {
      const double dev = std::abs(r.estimate - r.oracle);
      worst = std::max(worst, dev);
      *f << r.quantity << ',' << r.oracle << ',' << r.estimate << ',' << dev << ',' << r.standard_error << '\n';
    }
    *f << "max,,," << worst << ",\n";
  }

  const DistanceScatter sc = distance_scatter(cfg, counter);
  {
    CsvFile f(out, "distance_scatter.csv", outcome);
    *f << "sample,y[C],w2_prior[P],w2_pooled[P],below_diagonal\n";
    for (std::size_t i = 0; i < sc.w2_prior.size(); ++i)
      *f << i << ',' << sc.y(static_cast<Eigen::Index>(i), 0) << ',' << sc.w2_prior[i] << ',' << sc.w2_pooled[i] << ','
         << (sc.w2_pooled[i] <= sc.w2_prior[i] + 1e-10 ? 1 : 0) << '\n';
  }

  const auto checks = gradient_check(cfg, counter);
  {
    CsvFile f(out, "gradient_check.csv", outcome);
    *f << "design,d_x[L],d_y[L],component,finite_difference[1/L],estimate[1/L],standard_error[1/L],z_score[1]\n";
    for (std::size_t k = 0; k < checks.size(); ++k) {
      const auto& c = checks[k];
      for (Eigen::Index q = 0; q < 2; ++q) {
        const double se = c.estimate.standard_error(q);
        *f << k << ',' << c.design.x() << ',' << c.design.y() << ',' << q << ',' << c.finite_difference(q) << ','
           << c.estimate.value(q) << ',' << se << ','
           << (se > 0.0 ? (c.estimate.value(q) - c.finite_difference(q)) / se : 0.0) << '\n';
      }
    }
  }
  {
    CsvFile f(out, "cost_ledger.csv", outcome);
    *f << "phase,forward_solves\n";
    std::uint64_t grad = 0;
    for (const auto& c : checks) grad += c.estimate.forward_cost;
    *f << "oracle_comparison," << counter.value() - grad - static_cast<std::uint64_t>(sc.w2_prior.size()) << '\n';
    *f << "distance_scatter," << sc.w2_prior.size() << '\n';
    *f << "gradient_check," << grad << '\n';
    *f << "total," << counter.value() << '\n';
  }
  outcome.model_cost = counter.value();
  return outcome;
}

RunOutcome run_sequential(const RunConfig& cfg, const fs::path& out) {
  RunOutcome outcome;
  EvalCounter counter;
  EvalCounter truth_counter;
  const SeqConfig sc = to_seq_config(cfg);
  SeqState state = initial_state(sc);
  std::vector<StageReport> reports;

  for (int s = 0; s < sc.stages; ++s) {
    StageReport r = run_stage(state, sc, counter, truth_counter);
    write_json(out, stage_name("report", r.stage, ".json"), r, outcome);
    {
      CsvFile f(out, stage_name("posterior", r.stage, ".csv"), outcome);
      state.posterior.write_csv(*f);
    }
    {
      CsvFile f(out, stage_name("field_error", r.stage, ".csv"), outcome);
      const PdeConfig& p = sc.pde;
      *f << "iy,ix,z_x[L],z_y[L],relative_error[1]\n";
      for (int iy = 0; iy < p.ny; ++iy)
        for (int ix = 0; ix < p.nx; ++ix)
          *f << iy << ',' << ix << ',' << p.z_lo + ix * p.dx() << ',' << p.z_lo + iy * p.dy() << ','
             << r.relative_error_map[static_cast<std::size_t>(iy) * p.nx + ix] << '\n';
    }
    {
      CsvFile f(out, stage_name("design", r.stage, ".csv"), outcome);
      write_trajectory_csv(*f, r.design_trajectory);
    }
    if (!r.last_gradient.grouping.ess.empty()) {
      write_ess(out, stage_name("ess", r.stage, ".csv"), r.last_gradient.grouping, nullptr, outcome);
      write_ess_histogram(out, stage_name("ess_histogram", r.stage, ".csv"), r.last_gradient.grouping,
                          static_cast<double>(cfg.inner), outcome);
    }
    reports.push_back(std::move(r));
  }

  {
    CsvFile f(out, "cost_ledger.csv", outcome);
    *f << "stage,physical_design,error_outer,error_predict,error_proposal_eval,training,refit,diagnostics,model_total,"
          "truth\n";
    StageLedger sum;
    for (const auto& r : reports) {
      const auto& l = r.ledger;
      *f << r.stage << ',' << l.physical_design << ',' << l.error_design.outer << ',' << l.error_design.predict << ','
         << l.error_design.proposal_eval << ',' << l.training << ',' << l.refit << ',' << l.diagnostics << ','
         << l.model_total() << ',' << l.truth << '\n';
      sum.physical_design += l.physical_design;
      sum.error_design.outer += l.error_design.outer;
      sum.error_design.predict += l.error_design.predict;
      sum.error_design.proposal_eval += l.error_design.proposal_eval;
      sum.training += l.training;
      sum.refit += l.refit;
      sum.diagnostics += l.diagnostics;
      sum.truth += l.truth;
    }
    *f << "total," << sum.physical_design << ',' << sum.error_design.outer << ',' << sum.error_design.predict << ','
       << sum.error_design.proposal_eval << ',' << sum.training << ',' << sum.refit << ',' << sum.diagnostics << ','
       << sum.model_total() << ',' << sum.truth << '\n';
    if (sum.model_total() != counter.value()) throw Error("cost ledger does not sum to the forward counter");
  }
  {
    CsvFile f(out, "gradient_cost.csv", outcome);
    *f << "stage,iteration,outer,predict,proposal_eval,proposals,proposal_construction\n";
    for (const auto& r : reports)
      for (std::size_t k = 0; k < r.ledger.error_design_per_iteration.size(); ++k) {
        const auto& c = r.ledger.error_design_per_iteration[k];
        *f << r.stage << ',' << k + 1 << ',' << c.outer << ',' << c.predict << ',' << c.proposal_eval << ','
           << r.ledger.proposals_per_iteration[k] << ',' << c.total() << '\n';
      }
  }
  {
    CsvFile f(out, "trajectory.csv", outcome);
    *f << "stage,time[T],map_x[L],map_y[L],map_cell_distance,theta_e0[1],theta_e_norm[1],field_relative_error[1]\n";
    for (const auto& r : reports) {
      const int dist = state.posterior.cell_distance(
          static_cast<Eigen::Index>(std::floor(r.map.x() * sc.grid)) * sc.grid +
              static_cast<Eigen::Index>(std::floor(r.map.y() * sc.grid)),
          Point2(sc.truth.x, sc.truth.y));
      *f << r.stage << ',' << r.time << ',' << r.map.x() << ',' << r.map.y() << ',' << dist << ',' << r.theta_e(0)
         << ',' << r.theta_e.norm() << ',' << r.field_relative_error << '\n';
    }
  }
  if (cfg.experiment == Experiment::kStructural && cfg.std_repeats > 0) {
    const StdStudy s = gradient_std_study(error_problem(cfg), static_cast<std::size_t>(cfg.std_repeats),
                                          derive_seed(cfg.seed, 0xD1A6), counter);
    write_std_study(out, s, static_cast<std::size_t>(cfg.std_repeats), outcome);
  }
  outcome.model_cost = counter.value();
  outcome.truth_cost = truth_counter.value();
  return outcome;
}

RunOutcome run_diagnostics(const RunConfig& cfg, const fs::path& out, bool with_std) {
  RunOutcome outcome;
  EvalCounter counter;
  const ErrorProblem p = error_problem(cfg);
  const Diagnosis d = diagnose(p, cfg.seed, counter);
  const std::uint64_t diag_cost = counter.value();
  const Matrix& y = d.outer.set.y();
  write_ess(out, "ess.csv", d.proposals.grouping, &y, outcome);
  write_ess_histogram(out, "ess_histogram.csv", d.proposals.grouping, static_cast<double>(cfg.inner), outcome);
  nlohmann::json gj = d.proposals.grouping;
  gj["proposal_count"] = d.proposals.grouping.proposal_count();
  gj["problematic_count"] = [&] {
    std::size_t n = 0;
    for (const auto& g : d.proposals.grouping.groups) n += g.size();
    return n;
  }();
  write_json(out, "grouping.json", gj, outcome);
  std::uint64_t std_cost = 0;
  if (with_std && cfg.std_repeats > 0) {
    const StdStudy s = gradient_std_study(p, static_cast<std::size_t>(cfg.std_repeats), derive_seed(cfg.seed, 0xD1A6),
                                          counter);
    std_cost = s.forward_cost;
    write_std_study(out, s, static_cast<std::size_t>(cfg.std_repeats), outcome);
  }
  {
    CsvFile f(out, "cost_ledger.csv", outcome);
    *f << "phase,forward_solves\n";
    *f << "outer," << d.ledger.outer << '\n';
    *f << "predict," << d.ledger.predict << '\n';
    if (with_std && cfg.std_repeats > 0) *f << "gradient_std," << std_cost << '\n';
    *f << "total," << counter.value() << '\n';
  }
  if (diag_cost != d.ledger.total()) throw Error("diagnosis cost does not match its ledger");
  outcome.model_cost = counter.value();
  return outcome;
}

void prepare_output(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw ConfigError("output directory '" + out.string() + "' is not writable");
}

}  // namespace

ScalarToy scalar_toy(const RunConfig& cfg) {
  return ScalarToy{Gaussian::scalar(cfg.toy_prior_mean, cfg.toy_prior_variance),
                   LinearModel(Matrix::Constant(1, 1, cfg.toy_gain), Gaussian::scalar(0.0, cfg.noise_variance))};
}

DesignToy design_toy() {
  Matrix a(1, 2), ax(1, 2), ay(1, 2);
  a << 1.0, 0.3;
  ax << 0.5, 0.0;
  ay << 0.0, 0.4;
  DesignToy t{Gaussian::standard(2), LinearModel(a, ax, ay, Gaussian::scalar(0.0, 1.0)), {}};
  for (const double dx : {-1.0, -0.5, 0.0, 0.5, 1.0}) t.designs.emplace_back(dx, 0.3 * dx + 0.2);
  return t;
}

namespace {

OuterSet toy_outer_set(const RunConfig& cfg, const ScalarToy& toy, EvalCounter& counter) {
  const auto [theta, eps] = draw_outer_inputs(toy.prior, cfg.toy_outer, 1, cfg.seed);
  return draw_outer(toy.model, theta, eps, Measurement{}, counter).set;
}

}  // namespace

DistanceScatter distance_scatter(const RunConfig& cfg, EvalCounter& counter) {
  const ScalarToy toy = scalar_toy(cfg);
  const OuterSet outer = toy_outer_set(cfg, toy, counter);
  const ConjugateSpec spec(toy.prior, toy.model.operator_at(Point2::Zero()), toy.model.noise().cov());
  const Gaussian pooled = pooled_posterior_closed_form(spec, outer, PoolingWeights::uniform(outer.size()));
  DistanceScatter out;
  out.y = outer.y();
  for (Eigen::Index i = 0; i < outer.size(); ++i) {
    const Gaussian post = posterior_closed_form(spec, outer.y(i));
    out.w2_prior.push_back(gaussian_w2(post, toy.prior));
    out.w2_pooled.push_back(gaussian_w2(post, pooled));
  }
  return out;
}

std::vector<ComparisonRow> oracle_comparison(const RunConfig& cfg, EvalCounter& counter) {
  const ScalarToy toy = scalar_toy(cfg);
  const OuterSet outer = toy_outer_set(cfg, toy, counter);
  const PoolingWeights nu = PoolingWeights::uniform(outer.size());
  const ConjugateSpec spec(toy.prior, toy.model.operator_at(Point2::Zero()), toy.model.noise().cov());
  const Gaussian exact = pooled_posterior_closed_form(spec, outer, nu);

  RngStream inner_rng(cfg.seed, streams::kPriorInner);
  RngStream eki_rng(cfg.seed, streams::kEkiPerturbation);
  Ensemble inner = sample_gaussian(toy.prior, cfg.inner, inner_rng);
  const EkiStats stats = predict(inner, toy.model, Measurement{}, counter);
  const PooledObservation target = make_pooled(outer, nu);
  const Ensemble post = update(inner, stats, EkiUpdateSpec{Formulation::kMeanObservation, cfg.perturb, target}, eki_rng);
  const MeanCov mc = ensemble_mean_cov(post);
  const double j = static_cast<double>(post.size());
  const double v = exact.cov()(0, 0);
  return {{"pooled_mean", exact.mean()(0), mc.mean(0), std::sqrt(v / j)},
          {"pooled_variance", v, mc.cov(0, 0), v * std::sqrt(2.0 / (j - 1.0))}};
}

std::vector<GradientCheckRow> gradient_check(const RunConfig& cfg, EvalCounter& counter) {
  const DesignToy toy = design_toy();
  const GppOptions options = gpp_options(cfg, toy.prior.dim());
  const auto [theta, eps] = draw_outer_inputs(toy.prior, cfg.outer, 1, cfg.seed);
  std::vector<GradientCheckRow> rows;
  std::uint64_t k = 0;
  for (const Point2& d : toy.designs) {
    Measurement m;
    m.location = d;
    const auto eig = [&](const Vector& x) { return eig_value_gaussian_linear(toy.prior, toy.model, Point2(x(0), x(1))); };
    GradientCheckRow row{d, fd_gradient(eig, Vector(d), 1e-5), {}};
    GradientRun run = eig_gradient_pipeline(toy.model, toy.prior, theta, eps, m, options, derive_seed(cfg.seed, ++k),
                                            counter);
    row.estimate = std::move(run.estimate);
    row.estimate.forward_cost = run.ledger.total();
    rows.push_back(std::move(row));
  }
  return rows;
}

ErrorProblem error_problem(const RunConfig& cfg) {
  const SeqConfig sc = to_seq_config(cfg);
  Measurement m;
  m.location = cfg.design;
  m.time = cfg.measurement_time;
  m.noise_variance = cfg.noise_variance;
  if (cfg.experiment == Experiment::kLinearToy) {
    const ScalarToy toy = scalar_toy(cfg);
    return ErrorProblem{std::make_shared<LinearModel>(toy.model), toy.prior, m, gpp_options(cfg, 1)};
  }
  const SeqState st = initial_state(sc);
  const Point2 location(cfg.truth.x, cfg.truth.y);
  const double spread = sc.discrepancy == DiscrepancyCase::kParametric ? sc.sigma_e_strength : sc.sigma_e_network;
  auto model = std::make_shared<PdeModel>(error_model(sc, st.theta_e, location));
  model->validate(m);
  const auto dim = model->param_dim();
  return ErrorProblem{std::move(model), Gaussian::isotropic(st.theta_e, spread), m, gpp_options(cfg, dim)};
}

Diagnosis diagnose(const ErrorProblem& p, std::uint64_t seed, EvalCounter& counter) {
  const auto [theta, eps] = draw_outer_inputs(p.prior, p.options.outer, p.model->output_dim(), seed);
  std::uint64_t mark = counter.value();
  OuterDraws outer = draw_outer(*p.model, theta, eps, p.measurement, counter);
  CostLedger ledger;
  ledger.outer = counter.value() - mark;
  RngStream inner_rng(seed, streams::kPriorInner);
  Ensemble inner = sample_gaussian(p.prior, p.options.inner, inner_rng);
  mark = counter.value();
  ProposalSet set = build_proposals(outer.set, PoolingWeights::uniform(outer.set.size()), std::move(inner), *p.model,
                                    p.measurement, counter, p.options.grouping_options, p.options.grouping,
                                    p.options.perturb, RngStream(seed, streams::kEkiPerturbation));
  ledger.predict = counter.value() - mark;
  return Diagnosis{std::move(outer), std::move(set), ledger};
}

StdStudy gradient_std_study(const ErrorProblem& p, std::size_t repeats, std::uint64_t seed, EvalCounter& counter) {
  const std::uint64_t mark = counter.value();
  const auto [theta, eps] = draw_outer_inputs(p.prior, p.options.outer, p.model->output_dim(), seed);
  const OuterDraws outer = draw_outer(*p.model, theta, eps, p.measurement, counter);
  const PoolingWeights nu = PoolingWeights::uniform(outer.set.size());
  StdStudy out;
  auto estimator = [&](bool grouping, Eigen::Index j, std::uint64_t tag) {
    return [&, grouping, j, tag](std::size_t r) {
      const std::uint64_t s = derive_seed(seed, tag * 100000 + r);
      RngStream inner_rng(s, streams::kPriorInner);
      Ensemble inner = sample_gaussian(p.prior, j, inner_rng);
      ProposalSet set = build_proposals(outer.set, nu, std::move(inner), *p.model, p.measurement, counter,
                                        p.options.grouping_options, grouping, p.options.perturb,
                                        RngStream(s, streams::kEkiPerturbation));
      if (grouping) out.grouped_proposals.push_back(set.grouping.proposal_count());
      return eig_gradient(outer, set.proposals, *p.model, p.measurement, counter);
    };
  };
  const Eigen::Index j = p.options.inner;
  out.ungrouped_j = estimate_grad_std(repeats, estimator(false, j, 1));
  out.ungrouped_3j = estimate_grad_std(repeats, estimator(false, 3 * j, 2));
  out.grouped = estimate_grad_std(repeats, estimator(true, j, 3));
  out.forward_cost = counter.value() - mark;
  return out;
}

RunOutcome run_experiment(const RunConfig& cfg, const fs::path& out) {
  validate_config(cfg);
  prepare_output(out);
  switch (cfg.experiment) {
    case Experiment::kLinearToy: return run_linear_toy(cfg, out);
    case Experiment::kDiagnostics: return run_diagnostics(cfg, out, true);
    case Experiment::kParametric:
    case Experiment::kStructural: return run_sequential(cfg, out);
  }
  return {};
}

RunOutcome run_diagnose(const RunConfig& cfg, const fs::path& out) {
  validate_config(cfg);
  prepare_output(out);
  return run_diagnostics(cfg, out, false);
}

void write_manifest(const fs::path& out, const RunConfig& cfg, const std::string& status, const RunOutcome& outcome,
                    double wall_seconds) {
  nlohmann::json schemas = nlohmann::json::object();
  for (const auto& f : outcome.files) schemas[f] = kCsvSchemaVersion;
  nlohmann::json j{{"status", status},
                   {"experiment", experiment_name(cfg.experiment)},
                   {"config_hash", config_hash(cfg)},
                   {"seed", cfg.seed},
                   {"library_version", kLibraryVersion},
                   {"threads", thread_count()},
                   {"forward_cost", {{"model", outcome.model_cost}, {"truth", outcome.truth_cost}}},
                   {"wall_time_seconds", wall_seconds},
                   {"files", schemas}};
  std::ofstream os(out / "manifest.json");
  if (!os) throw Error("cannot write manifest in " + out.string());
  os << j.dump(2) << '\n';
}

}  // namespace gppbed
