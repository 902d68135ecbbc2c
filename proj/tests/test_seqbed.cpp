#include "gppbed/errors.hpp"
#include "gppbed/seqbed.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace gppbed;

namespace {

SeqConfig small_config(DiscrepancyCase c) {
  SeqConfig cfg;
  cfg.discrepancy = c;
  cfg.pde.nx = cfg.pde.ny = 32;
  cfg.grid = 10;
  cfg.candidates = 3;
  cfg.gpp.outer = 30;
  cfg.gpp.inner = 30;
  cfg.gpp.grouping = c == DiscrepancyCase::kStructural;
  cfg.gpp.grouping_options.threshold = c == DiscrepancyCase::kStructural ? 37.0 : 1.0;
  cfg.design_iterations = 2;
  cfg.training_steps = 2;
  cfg.stages = 1;
  return cfg;
}

}  // namespace

TEST(GridPosterior, ConstantLikelihoodAndSharpPeak) {
  GridPosterior g(5);
  const Vector w0 = g.weights();
  g.update(Vector::Constant(25, -3.0));
  EXPECT_LT((g.weights() - w0).cwiseAbs().maxCoeff(), 1e-15);
  Vector ll = Vector::Constant(25, -1e4);
  ll(13) = 0.0;
  g.update(ll);
  EXPECT_EQ(g.map_index(), 13);
  EXPECT_NEAR(g.weights().sum(), 1.0, 1e-12);
  EXPECT_THROW(g.update(Vector::Constant(25, -std::numeric_limits<double>::infinity())), ZeroPosteriorMass);
}

TEST(GridPosterior, SequentialEqualsBatch) {
  RngStream rng(3, streams::kFixture);
  GridPosterior seq(6), batch(6);
  Vector total = Vector::Zero(36);
  for (int k = 0; k < 3; ++k) {
    const Vector ll = 4.0 * rng.normal_vector(36);
    seq.update(ll);
    total += ll;
  }
  batch.update(total);
  EXPECT_LT((seq.weights() - batch.weights()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GridPosterior, NodesDistanceAndCsv) {
  GridPosterior g(50);
  EXPECT_NEAR(g.node(0).x(), 0.01, 1e-15);
  EXPECT_NEAR(g.node(51).y(), 0.03, 1e-15);
  EXPECT_EQ(g.cell_distance(0, Point2(0.05, 0.01)), 2);
  std::ostringstream os;
  GridPosterior(2).write_csv(os);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "ix,iy,theta_x[L],theta_y[L],weight[1]");
}

TEST(MixtureEig, LimitsAndOrdering) {
  const Vector w = Vector::Constant(2, 0.5);
  EXPECT_NEAR(mixture_eig(w, Vector::Constant(2, 0.3), 0.01), 0.0, 1e-6);
  Vector far(2);
  far << -10.0, 10.0;
  EXPECT_NEAR(mixture_eig(w, far, 0.01), std::log(2.0), 1e-6);
  Vector near(2);
  near << -0.05, 0.05;
  EXPECT_LT(mixture_eig(w, near, 0.01), mixture_eig(w, 2.0 * near, 0.01));
}

TEST(DesignPhysical, ExhaustiveScanAndTies) {
  GridPosterior g(2);
  Vector w(4);
  w << 0.5, 0.5, 0.0, 0.0;
  g.set_weights(w);
  const std::vector<Point2> designs{Point2(0, 0), Point2(1, 0), Point2(0, 1)};
  Matrix preds(4, 3);
  preds << 0.0, 0.0, 0.0,  //
      0.1, 0.3, 0.2,       //
      5.0, 5.0, 5.0,       //
      5.0, 5.0, 5.0;
  const PhysicalDesign pd = design_physical(g, preds, designs, 0.01);
  EXPECT_EQ(pd.index, 1u);
  for (std::size_t c = 0; c < designs.size(); ++c)
    EXPECT_LE(mixture_eig(g.weights(), preds.col(static_cast<Eigen::Index>(c)), 0.01), pd.eig + 1e-15);

  const PhysicalDesign tie = design_physical(GridPosterior(2), Matrix::Constant(4, 3, 1.0), designs, 0.01);
  EXPECT_EQ(tie.index, 0u);
}

TEST(UpdateStrength, NoiselessRecoveryAndZeroResidual) {
  SeqConfig cfg = small_config(DiscrepancyCase::kParametric);
  const PdeModel model = error_model(cfg, Vector::Constant(1, 3.0), Point2(0.23, 0.27));
  EvalCounter c;
  std::vector<Observation> data;
  for (const Point2& d : {Point2(0.2, 0.3), Point2(0.5, 0.1)}) {
    Measurement m;
    m.location = d;
    m.time = 0.055;
    data.push_back({d, 0.055, model.solve(Vector::Constant(1, 2.0), m, false).value(0)});
  }
  EXPECT_NEAR(update_strength(model, 3.0, data, c), 2.0, 1e-9);
  EXPECT_NEAR(update_strength(model, 2.0, data, c), 2.0, 1e-12);
}

TEST(TrainNetwork, ZeroResidualKeepsWeights) {
  SeqConfig cfg = small_config(DiscrepancyCase::kStructural);
  RngStream rng(2, streams::kFixture);
  const Vector w = 0.2 * rng.normal_vector(37);
  const PdeModel model = error_model(cfg, w, Point2(0.23, 0.27));
  Measurement m;
  m.location = Point2(0.3, 0.3);
  m.time = 0.055;
  const std::vector<Observation> data{{m.location, m.time, model.solve(w, m, false).value(0)}};
  EvalCounter c;
  const Vector out = train_network(model, w, data, 0.0025, 3, 1e-3, c);
  EXPECT_LT((out - w).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RefitHistory, EmptyAndIncremental) {
  SeqConfig cfg = small_config(DiscrepancyCase::kParametric);
  const PdeModel model = location_model(cfg, Vector::Constant(1, 2.0));
  GridPosterior prior(cfg.grid);
  EvalCounter c;
  EXPECT_EQ(refit_history(prior, {}, model, 0.0025, c).weights(), prior.weights());

  const std::vector<Point2> designs{Point2(0.3, 0.4), Point2(0.6, 0.2)};
  std::vector<Observation> hist;
  GridPosterior incremental = prior;
  const double times[] = {0.055, 0.06};
  const double ys[] = {0.21, 0.18};
  for (int k = 0; k < 2; ++k) {
    const Matrix p = grid_predictions(model, incremental, {designs[static_cast<std::size_t>(k)]}, times[k], c);
    incremental.update(grid_loglik(p.col(0), ys[k], 0.0025));
    hist.push_back({designs[static_cast<std::size_t>(k)], times[k], ys[k]});
  }
  const GridPosterior refit = refit_history(prior, hist, model, 0.0025, c);
  EXPECT_LT((refit.weights() - incremental.weights()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(RefitHistory, CorrectedModelLandsCloserToTruth) {
  SeqConfig cfg = small_config(DiscrepancyCase::kParametric);
  cfg.grid = 50;
  cfg.truth.x = 0.25;
  cfg.truth.y = 0.35;
  const PdeModel truth = truth_model(cfg);
  std::vector<Observation> hist;
  for (const Point2& d : {Point2(0.1, 0.2), Point2(0.5, 0.5), Point2(0.3, 0.0), Point2(0.0, 0.6)}) {
    Measurement m;
    m.location = d;
    m.time = 0.055;
    hist.push_back({d, 0.055, truth.solve(Vector::Constant(1, 2.0), m, false).value(0)});
  }
  EvalCounter c;
  const GridPosterior prior(cfg.grid);
  const GridPosterior wrong = refit_history(prior, hist, location_model(cfg, Vector::Constant(1, 3.0)), 0.0025, c);
  const GridPosterior right = refit_history(prior, hist, location_model(cfg, Vector::Constant(1, 2.0)), 0.0025, c);
  const Point2 t(cfg.truth.x, cfg.truth.y);
  EXPECT_EQ(right.cell_distance(right.map_index(), t), 0);
  EXPECT_GT(wrong.cell_distance(wrong.map_index(), t), 0) << wrong.map().transpose();
}

TEST(RunStage, StructuralLedgerAndDeterminism) {
  const SeqConfig cfg = small_config(DiscrepancyCase::kStructural);
  EvalCounter c1, t1, c2, t2;
  SeqState s1 = initial_state(cfg), s2 = initial_state(cfg);
  const StageReport a = run_stage(s1, cfg, c1, t1);
  const StageReport b = run_stage(s2, cfg, c2, t2);
  EXPECT_EQ(nlohmann::json(a).dump(), nlohmann::json(b).dump());
  EXPECT_EQ(a.ledger.model_total(), c1.value());
  ASSERT_EQ(a.ledger.error_design_per_iteration.size(), 2u);
  for (std::size_t k = 0; k < 2; ++k) {
    const auto n = static_cast<std::uint64_t>(cfg.gpp.outer), j = static_cast<std::uint64_t>(cfg.gpp.inner);
    EXPECT_EQ(a.ledger.error_design_per_iteration[k].total(), n + j + a.ledger.proposals_per_iteration[k] * j);
  }
  EXPECT_EQ(a.stage, 1);
  EXPECT_NEAR(a.time, 0.055, 1e-15);
  EXPECT_EQ(a.theta_e.size(), 37);
}

TEST(RunStage, ParametricLedgerAndNormalization) {
  SeqConfig cfg = small_config(DiscrepancyCase::kParametric);
  EvalCounter c, t;
  SeqState s = initial_state(cfg);
  const StageReport r = run_stage(s, cfg, c, t);
  EXPECT_EQ(r.ledger.truth, t.value());
  EXPECT_EQ(r.ledger.model_total(), c.value());
  EXPECT_NEAR(s.posterior.weights().sum(), 1.0, 1e-12);
  EXPECT_EQ(s.physical_history.size(), 1u);
  EXPECT_EQ(r.theta_e.size(), 1);
}
