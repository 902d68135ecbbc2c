#include "gppbed/eki.hpp"
#include "gppbed/errors.hpp"
#include "gppbed/isampling.hpp"
#include "gppbed/oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace gppbed;

namespace {

struct Fixture1d {
  LinearModel model{Matrix::Identity(1, 1), Gaussian::scalar(0.0, 1.0)};
  Ensemble inner;
  EkiStats stats;
};

Fixture1d prior_fixture(Eigen::Index j, std::uint64_t seed) {
  Fixture1d f;
  RngStream rng(seed, streams::kPriorInner);
  f.inner = sample_gaussian(Gaussian::scalar(0.0, 1.0), j, rng);
  EvalCounter c;
  f.stats = predict(f.inner, f.model, Measurement{}, c);
  return f;
}

Matrix col(const std::vector<double>& v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = v[i];
  return m;
}

}  // namespace

TEST(NormalizeLogWeights, ShiftAndUnderflow) {
  Vector lw(3);
  lw << 1000.0, 1000.0, -std::numeric_limits<double>::infinity();
  const WeightVector w = normalize_log_weights(lw);
  EXPECT_DOUBLE_EQ(w.w(0), 0.5);
  EXPECT_EQ(w.w(2), 0.0);
  EXPECT_DOUBLE_EQ(w.ess(), 2.0);
  const Vector bad = Vector::Constant(4, -std::numeric_limits<double>::infinity());
  try {
    normalize_log_weights(bad, 7);
    FAIL();
  } catch (const AllWeightsUnderflow& e) {
    EXPECT_EQ(e.sample_index(), 7u);
  }
}

TEST(SnisWeights, SingleOuterSampleIsUniform) {
  const Fixture1d f = prior_fixture(64, 1);
  const OuterSet outer(col({0.0}), col({0.8}), Matrix::Identity(1, 1));
  const PooledObservation p = make_pooled(outer, PoolingWeights(Vector::Ones(1)));
  const WeightVector w = snis_weights(f.stats.predictions, outer.y(0), p, outer.noise(0));
  for (Eigen::Index j = 0; j < 64; ++j) EXPECT_NEAR(w.w(j), 1.0 / 64.0, 1e-12);
}

TEST(SnisWeights, MatchesBruteForce) {
  RngStream rng(4, streams::kFixture);
  Matrix a(2, 2);
  a << 1.0, 0.4, -0.2, 0.9;
  const Gaussian prior = Gaussian::standard(2);
  LinearModel model(a, Gaussian::isotropic(Vector::Zero(2), 0.8));
  const Matrix s = model.noise().cov();
  Matrix y(5, 2);
  for (int i = 0; i < 5; ++i) y.row(i) = (a * rng.normal_vector(2) + 0.8 * rng.normal_vector(2)).transpose();
  const OuterSet outer(Matrix::Zero(5, 2), y, s);
  const PoolingWeights nu = PoolingWeights::uniform(5);
  const ConjugateSpec spec(prior, a, s);
  const Gaussian q = pooled_posterior_closed_form(spec, outer, nu);
  RngStream draws(4, streams::kPriorInner);
  Ensemble e = sample_gaussian(q, 64, draws);
  EvalCounter c;
  const Matrix f = eval_forward_batch(model, e, Measurement{}, c);
  const PooledObservation p = make_pooled(outer, nu);
  for (Eigen::Index i = 0; i < 5; ++i) {
    const Gaussian lik(outer.y(i), s);
    const WeightVector ref = snis_bruteforce(
        e.members(), [&](const Vector& t) { return prior.log_density(t) + lik.log_density(a * t); },
        [&](const Vector& t) { return q.log_density(t); });
    const WeightVector w = snis_weights(f, outer.y(i), p, s, static_cast<std::size_t>(i));
    EXPECT_LT((w.w - ref.w).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(SnisWeights, TailSampleDegenerates) {
  const Fixture1d f = prior_fixture(200, 2);
  const OuterSet outer(col({0.0, 0.0}), col({0.0, 0.1}), Matrix::Identity(1, 1));
  const PooledObservation p = make_pooled(outer, PoolingWeights::uniform(2));
  const WeightVector w = snis_weights(f.stats.predictions, Vector::Constant(1, 9.0), p, outer.noise(0));
  EXPECT_LT(w.ess(), 0.05 * 200);
}

TEST(EssLognormal, Examples) {
  const PooledObservation p{Vector::Constant(1, 1.0), Matrix::Identity(1, 1)};
  EXPECT_EQ(ess_lognormal(p.mean, p, Matrix::Identity(1, 1), Matrix::Constant(1, 1, 0.5), 100.0), 100.0);
  EXPECT_NEAR(ess_lognormal(Vector::Constant(1, 3.0), p, Matrix::Identity(1, 1), Matrix::Constant(1, 1, 0.5), 100.0),
              100.0 * std::exp(-2.0), 1e-12);
}

TEST(EssLognormal, QuadraticFormIsLogWeightVariance) {
  const Fixture1d f = prior_fixture(300, 3);
  const Matrix s = Matrix::Identity(1, 1);
  const OuterSet outer(col({0, 0, 0}), col({-0.4, 0.2, 1.3}), s);
  const PooledObservation p = make_pooled(outer, PoolingWeights::uniform(3));
  const Matrix sff = row_mean_cov(f.stats.predictions).cov;
  for (Eigen::Index i = 0; i < 3; ++i) {
    const WeightVector w = snis_weights(f.stats.predictions, outer.y(i), p, s);
    const double var = row_mean_cov(Matrix(w.logw)).cov(0, 0);
    const Vector a = s.llt().solve(outer.y(i) - p.mean);
    EXPECT_NEAR(var, a.dot(sff * a), 1e-8);
  }
}

TEST(EssConservative, Examples) {
  const Fixture1d f = prior_fixture(50, 4);
  const Matrix s = Matrix::Identity(1, 1);
  const PooledObservation p{Vector::Constant(1, 0.3), s};
  EXPECT_EQ(ess_conservative(p.mean, p, s, f.stats, 50.0), 50.0);
  EkiStats flat = f.stats;
  flat.p_ff.setZero();
  EXPECT_EQ(ess_conservative(Vector::Constant(1, 4.0), p, s, flat, 50.0), 50.0);
}

TEST(EssConservative, BelowLognormalOnLinearGaussian) {
  const Fixture1d f = prior_fixture(400, 5);
  const Matrix s = Matrix::Identity(1, 1);
  RngStream rng(5, streams::kFixture);
  Matrix y(30, 1);
  for (int i = 0; i < 30; ++i) y(i, 0) = std::sqrt(2.0) * rng.normal();
  const OuterSet outer(Matrix::Zero(30, 1), y, s);
  const PooledObservation p = make_pooled(outer, PoolingWeights::uniform(30));
  RngStream pert(5, streams::kEkiPerturbation);
  Ensemble post = update(f.inner, f.stats, EkiUpdateSpec{Formulation::kMeanObservation, false, p}, pert);
  EvalCounter c;
  const Matrix fp = eval_forward_batch(f.model, post, Measurement{}, c);
  const Matrix sff = row_mean_cov(fp).cov;
  EXPECT_GE(min_eigenvalue(f.stats.p_ff - sff), -1e-8);
  for (Eigen::Index i = 0; i < 30; ++i)
    EXPECT_LE(ess_conservative(outer.y(i), p, s, f.stats, 400.0), ess_lognormal(outer.y(i), p, s, sff, 400.0));
}

TEST(Kmeans, RecoversPlantedPartition) {
  RngStream rng(6, streams::kFixture);
  Matrix pts(40, 2);
  for (int i = 0; i < 40; ++i) {
    const double cx = i % 2 == 0 ? -5.0 : 5.0;
    pts.row(i) << cx + 0.3 * rng.normal(), 0.3 * rng.normal();
  }
  const auto labels = kmeans(pts, 2, 100);
  for (int i = 0; i < 40; ++i) EXPECT_EQ(labels[static_cast<std::size_t>(i)] == labels[0], i % 2 == 0);
  EXPECT_THROW(kmeans(pts, 41, 10), InvalidArgument);
}

TEST(Grouping, AllAboveThresholdIsTrivial) {
  const Fixture1d f = prior_fixture(100, 7);
  const Matrix s = Matrix::Identity(1, 1);
  const OuterSet outer(Matrix::Zero(4, 1), col({-0.1, 0.0, 0.1, 0.05}), s);
  const PooledObservation p = make_pooled(outer, PoolingWeights::uniform(4));
  const Grouping g = make_grouping(outer, p, s, f.stats, 100.0, GroupingOptions{});
  EXPECT_EQ(g.ok.size(), 4u);
  EXPECT_TRUE(g.groups.empty());
  EXPECT_FALSE(g.triggered);
  EXPECT_EQ(g.proposal_count(), 1u);
}

TEST(Grouping, PlantedTailsGiveTwoGroupsAndCentralMass) {
  const Fixture1d f = prior_fixture(100, 8);
  const Matrix s = Matrix::Identity(1, 1);
  std::vector<double> y;
  for (int i = 0; i < 40; ++i) y.push_back(-1.0 + 2.0 * i / 39.0);
  for (int i = 0; i < 5; ++i) y.push_back(-4.0 - 0.05 * i);
  for (int i = 0; i < 5; ++i) y.push_back(4.0 + 0.05 * i);
  const OuterSet outer(Matrix::Zero(50, 1), col(y), s);
  const PooledObservation p = make_pooled(outer, PoolingWeights::uniform(50));
  GroupingOptions o;
  o.threshold = 1.0;
  o.proposals = 3;
  const Grouping g = make_grouping(outer, p, s, f.stats, 100.0, o);
  ASSERT_TRUE(g.triggered);
  ASSERT_EQ(g.groups.size(), 2u);
  std::vector<std::size_t> central(40), left, right;
  for (std::size_t i = 0; i < 40; ++i) central[i] = i;
  for (std::size_t i = 40; i < 45; ++i) left.push_back(i);
  for (std::size_t i = 45; i < 50; ++i) right.push_back(i);
  EXPECT_EQ(g.ok, central);
  EXPECT_EQ(g.groups[0], left);
  EXPECT_EQ(g.groups[1], right);
  EXPECT_EQ(g.proposal_count(), 3u);

  const auto targets = group_targets(outer, PoolingWeights::uniform(50), g);
  ASSERT_EQ(targets.size(), 3u);
  EXPECT_LT(targets[1].mean(0), -3.9);
  EXPECT_GT(targets[2].mean(0), 3.9);
}

TEST(Grouping, FewProblematicSamplesDoNotTrigger) {
  const Fixture1d f = prior_fixture(100, 9);
  const Matrix s = Matrix::Identity(1, 1);
  std::vector<double> y(99, 0.0);
  y.push_back(6.0);
  const OuterSet outer(Matrix::Zero(100, 1), col(y), s);
  const PooledObservation p = make_pooled(outer, PoolingWeights::uniform(100));
  const Grouping g = make_grouping(outer, p, s, f.stats, 100.0, GroupingOptions{});
  EXPECT_FALSE(g.triggered);
  EXPECT_EQ(g.proposal_count(), 1u);
}
