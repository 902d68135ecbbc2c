#include "gppbed/errors.hpp"
#include "gppbed/statcore.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace gppbed;

TEST(EnsembleStats, HandArithmetic) {
  Matrix m(2, 1);
  m << 1.0, 3.0;
  const MeanCov mc = ensemble_mean_cov(Ensemble(m));
  EXPECT_DOUBLE_EQ(mc.mean(0), 2.0);
  EXPECT_DOUBLE_EQ(mc.cov(0, 0), 2.0);
}

TEST(EnsembleStats, IdenticalMembers) {
  const Matrix m = Matrix::Constant(3, 1, 4.5);
  const MeanCov mc = ensemble_mean_cov(Ensemble(m));
  EXPECT_DOUBLE_EQ(mc.mean(0), 4.5);
  EXPECT_DOUBLE_EQ(mc.cov(0, 0), 0.0);
}

TEST(EnsembleStats, MonteCarloStandardNormal) {
  RngStream rng(11, streams::kFixture);
  const Ensemble e = sample_gaussian(Gaussian::standard(1), 100000, rng);
  const MeanCov mc = ensemble_mean_cov(e);
  EXPECT_NEAR(mc.mean(0), 0.0, 0.02);
  EXPECT_NEAR(mc.cov(0, 0), 1.0, 0.05);
}

TEST(EnsembleStats, SingleMemberIsDegenerate) {
  EXPECT_THROW(ensemble_mean_cov(Ensemble(Matrix::Zero(1, 2))), DegenerateEnsemble);
  EXPECT_THROW(Ensemble(Matrix::Zero(0, 2)), InvalidArgument);
}

TEST(EnsembleStats, CrossCovarianceMatchesJointCovariance) {
  RngStream rng(3, streams::kFixture);
  Matrix a(50, 2), b(50, 1);
  for (int j = 0; j < 50; ++j) {
    a.row(j) = rng.normal_vector(2).transpose();
    b(j, 0) = a(j, 0) - 2.0 * a(j, 1) + rng.normal();
  }
  Matrix joint(50, 3);
  joint << a, b;
  const Matrix full = row_mean_cov(joint).cov;
  EXPECT_LT((row_cross_cov(a, b) - full.topRightCorner(2, 1)).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(GaussianKl, Examples) {
  const Gaussian a = Gaussian::scalar(0.0, 1.0);
  EXPECT_EQ(gaussian_kl(a, a), 0.0);
  EXPECT_NEAR(gaussian_kl(a, Gaussian::scalar(0.0, 2.0)), 0.5 * (0.5 - 1.0 + std::log(2.0)), 1e-12);
  EXPECT_NEAR(gaussian_kl(Gaussian::scalar(1.0, 1.0), a), 0.5, 1e-12);
}

TEST(GaussianKl, SingularQ) {
  EXPECT_THROW(gaussian_kl(Gaussian::scalar(0.0, 1.0), Gaussian::scalar(0.0, 0.0)), SingularCovariance);
  EXPECT_THROW(gaussian_kl(Gaussian::standard(2), Gaussian::standard(3)), DimensionMismatch);
}

TEST(GaussianW2, Examples) {
  const Gaussian a = Gaussian::scalar(0.0, 1.0);
  EXPECT_EQ(gaussian_w2(a, a), 0.0);
  EXPECT_NEAR(gaussian_w2(a, Gaussian::scalar(3.0, 1.0)), 3.0, 1e-12);
  EXPECT_NEAR(gaussian_w2(a, Gaussian::scalar(0.0, 4.0)), 1.0, 1e-12);
}

TEST(GaussianW2, SymmetricAndTriangle) {
  RngStream rng(5, streams::kFixture);
  auto random_gaussian = [&]() {
    Matrix l = Matrix::Zero(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j <= i; ++j) l(i, j) = rng.normal();
    return Gaussian(rng.normal_vector(3), l * l.transpose() + 0.1 * Matrix::Identity(3, 3));
  };
  for (int t = 0; t < 20; ++t) {
    const Gaussian p = random_gaussian(), q = random_gaussian(), r = random_gaussian();
    EXPECT_NEAR(gaussian_w2(p, q), gaussian_w2(q, p), 1e-9);
    EXPECT_LE(gaussian_w2(p, r), gaussian_w2(p, q) + gaussian_w2(q, r) + 1e-9);
  }
}

TEST(GaussianW2, DimensionMismatch) {
  EXPECT_THROW(gaussian_w2(Gaussian::standard(1), Gaussian::standard(2)), DimensionMismatch);
}

TEST(Gaussian, RejectsInvalidCovariance) {
  Matrix asym(2, 2);
  asym << 1.0, 0.5, 0.0, 1.0;
  EXPECT_THROW(Gaussian(Vector::Zero(2), asym), InvalidArgument);
  Matrix neg(2, 2);
  neg << 1.0, 0.0, 0.0, -1.0;
  EXPECT_THROW(Gaussian(Vector::Zero(2), neg), InvalidArgument);
  EXPECT_THROW(Gaussian(Vector::Zero(3), Matrix::Identity(2, 2)), DimensionMismatch);
}

TEST(SampleGaussian, ZeroCovarianceGivesCopies) {
  RngStream rng(1, streams::kFixture);
  const Ensemble e = sample_gaussian(Gaussian::scalar(0.7, 0.0), 5, rng);
  for (Eigen::Index j = 0; j < 5; ++j) EXPECT_EQ(e.members()(j, 0), 0.7);
}

TEST(SampleGaussian, CovarianceMonteCarlo) {
  RngStream rng(2, streams::kFixture);
  const Ensemble e = sample_gaussian(Gaussian::standard(2), 100000, rng);
  EXPECT_LT((ensemble_mean_cov(e).cov - Matrix::Identity(2, 2)).norm(), 0.05);
}

TEST(SampleGaussian, Deterministic) {
  RngStream a(9, streams::kPriorInner), b(9, streams::kPriorInner);
  const Gaussian g = Gaussian::isotropic(Vector::Constant(3, 1.0), 2.0);
  EXPECT_EQ(sample_gaussian(g, 17, a).members(), sample_gaussian(g, 17, b).members());
}

TEST(RngStream, StreamsAndChildrenAreDistinct) {
  RngStream a(1, 1), b(1, 2);
  EXPECT_NE(a.normal(), b.normal());
  const RngStream base(4, 7);
  RngStream c0 = base.child(0), c0b = base.child(0), c1 = base.child(1);
  const double x = c0.normal();
  EXPECT_EQ(x, c0b.normal());
  EXPECT_NE(x, c1.normal());
  EXPECT_NE(derive_seed(1, 1), derive_seed(1, 2));
  EXPECT_EQ(derive_seed(5, 3), derive_seed(5, 3));
}

TEST(LinearAlgebra, FactorsAndLogdet) {
  Matrix c(2, 2);
  c << 2.0, 0.5, 0.5, 1.0;
  const Matrix l = psd_factor(c);
  EXPECT_LT((l * l.transpose() - c).cwiseAbs().maxCoeff(), 1e-13);
  const Matrix s = psd_sqrt(c);
  EXPECT_LT((s * s - c).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_NEAR(spd_logdet(c), std::log(1.75), 1e-13);
  EXPECT_LT((spd_inverse(c) * c - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-13);
  EXPECT_THROW(spd_logdet(Matrix::Zero(2, 2)), SingularCovariance);
}
