#include "gppbed/eki.hpp"
#include "gppbed/errors.hpp"
#include "gppbed/oracle.hpp"

#include <gtest/gtest.h>

using namespace gppbed;

namespace {

PooledObservation scalar_target(double y, double v) {
  return PooledObservation{Vector::Constant(1, y), Matrix::Constant(1, 1, v)};
}

}  // namespace

TEST(Predict, LinearCovariancesAndCost) {
  Matrix a(2, 3);
  a << 1.0, 0.5, 0.0, -0.3, 2.0, 1.0;
  Matrix c0(3, 3);
  c0 << 1.0, 0.2, 0.0, 0.2, 0.5, 0.1, 0.0, 0.1, 2.0;
  const Gaussian prior(Vector::Zero(3), c0);
  LinearModel model(a, Gaussian::standard(2));
  RngStream rng(1, streams::kPriorInner);
  Ensemble e = sample_gaussian(prior, 100000, rng);
  EvalCounter c;
  const EkiStats s = predict(e, model, Measurement{}, c);
  EXPECT_EQ(c.value(), 100000u);
  const Matrix pthf = c0 * a.transpose();
  const Matrix pff = a * c0 * a.transpose();
  EXPECT_LT((s.p_theta_f - pthf).norm() / pthf.norm(), 0.02);
  EXPECT_LT((s.p_ff - pff).norm() / pff.norm(), 0.02);
}

TEST(Predict, ConstantEnsemble) {
  LinearModel model(Matrix::Identity(2, 2), Gaussian::standard(2));
  Ensemble e(Matrix::Constant(4, 2, 1.5));
  EvalCounter c;
  const EkiStats s = predict(e, model, Measurement{}, c);
  EXPECT_EQ(s.p_theta_f.norm(), 0.0);
  EXPECT_EQ(s.p_ff.norm(), 0.0);
  EXPECT_EQ(c.value(), 4u);
}

TEST(Update, ConjugateScalar) {
  LinearModel model(Matrix::Identity(1, 1), Gaussian::scalar(0.0, 1.0));
  RngStream rng(3, streams::kPriorInner), pert(3, streams::kEkiPerturbation);
  Ensemble e = sample_gaussian(Gaussian::scalar(0.0, 1.0), 100000, rng);
  EvalCounter c;
  const EkiStats s = predict(e, model, Measurement{}, c);
  const Ensemble post = update(e, s, EkiUpdateSpec{Formulation::kMeanObservation, true, scalar_target(2.0, 1.0)}, pert);
  const MeanCov mc = ensemble_mean_cov(post);
  EXPECT_NEAR(mc.mean(0), 1.0, 0.02);
  EXPECT_NEAR(mc.cov(0, 0), 0.5, 0.02 * 0.5);
  EXPECT_EQ(c.value(), 100000u);
}

TEST(Update, StackedEqualsMeanObservation) {
  RngStream rng(5, streams::kFixture);
  for (int t = 0; t < 5; ++t) {
    const Eigen::Index n = 2 + t, dy = 1 + t % 2, dth = 2;
    const Matrix a = Matrix::NullaryExpr(dy, dth, [&]() { return rng.normal(); });
    LinearModel model(a, Gaussian::isotropic(Vector::Zero(dy), 0.7));
    Matrix y(n, dy);
    for (Eigen::Index i = 0; i < n; ++i) y.row(i) = rng.normal_vector(dy).transpose();
    const OuterSet outer(Matrix::Zero(n, dth), y, model.noise().cov());
    const PoolingWeights nu = PoolingWeights::uniform(n);
    RngStream draws(static_cast<std::uint64_t>(t), streams::kPriorInner);
    Ensemble e = sample_gaussian(Gaussian::standard(dth), 30, draws);
    EvalCounter c;
    const EkiStats s = predict(e, model, Measurement{}, c);
    RngStream r1(t, 1), r2(t, 1);
    const Ensemble mean = update(e, s, EkiUpdateSpec{Formulation::kMeanObservation, false, make_pooled(outer, nu)}, r1);
    const Ensemble stacked =
        update(e, stacked_stats(s, n),
               EkiUpdateSpec{Formulation::kStacked, false,
                             StackedTarget{stacked_observation(outer), stacked_covariance(outer, nu)}},
               r2);
    EXPECT_LT((mean.members() - stacked.members()).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Update, VanishingGainKeepsEnsemble) {
  LinearModel model(Matrix::Identity(1, 1), Gaussian::scalar(0.0, 1.0));
  RngStream rng(2, streams::kPriorInner), pert(2, 9);
  Ensemble e = sample_gaussian(Gaussian::scalar(0.0, 1.0), 50, rng);
  EvalCounter c;
  const EkiStats s = predict(e, model, Measurement{}, c);
  const Ensemble post = update(e, s, EkiUpdateSpec{Formulation::kMeanObservation, false, scalar_target(3.0, 1e20)}, pert);
  EXPECT_LT((post.members() - e.members()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Update, RejectsMismatchedTarget) {
  LinearModel model(Matrix::Identity(1, 1), Gaussian::scalar(0.0, 1.0));
  Ensemble e(Matrix::Constant(3, 1, 1.0));
  EvalCounter c;
  const EkiStats s = predict(e, model, Measurement{}, c);
  RngStream r(1, 1);
  EXPECT_THROW(update(e, s, EkiUpdateSpec{Formulation::kStacked, false, scalar_target(1.0, 1.0)}, r), InvalidArgument);
  EXPECT_THROW(kalman_gain(Matrix::Zero(1, 1), Matrix::Zero(1, 1), Matrix::Zero(1, 1)), GainSolveFailure);
}

TEST(UpdatePerGroup, ConsistencyAndZeroCost) {
  LinearModel model(Matrix::Identity(1, 1), Gaussian::scalar(0.0, 1.0));
  RngStream rng(6, streams::kPriorInner);
  Ensemble e = sample_gaussian(Gaussian::scalar(0.0, 1.0), 40, rng);
  EvalCounter c;
  const EkiStats s = predict(e, model, Measurement{}, c);
  const std::uint64_t before = c.value();

  std::vector<RngStream> one{RngStream(1, 4)};
  RngStream single(1, 4);
  const auto a = update_per_group(e, s, {scalar_target(1.0, 1.0)}, true, one);
  const Ensemble b = update(e, s, EkiUpdateSpec{Formulation::kMeanObservation, true, scalar_target(1.0, 1.0)}, single);
  EXPECT_EQ(a[0].members(), b.members());

  std::vector<RngStream> three{RngStream(2, 4), RngStream(3, 4), RngStream(2, 4)};
  const auto g = update_per_group(e, s, {scalar_target(-1.0, 1.0), scalar_target(0.5, 0.5), scalar_target(-1.0, 1.0)},
                                  true, three);
  ASSERT_EQ(g.size(), 3u);
  EXPECT_EQ(g[0].members(), g[2].members());
  EXPECT_EQ(c.value(), before);
}
