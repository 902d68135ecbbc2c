#include "gppbed/pooling.hpp"

#include "gppbed/errors.hpp"

#include <cmath>
#include <string>

namespace gppbed {

namespace {

constexpr double kWeightSumTol = 1e-12;

Eigen::LLT<Matrix> factor_noise(const Matrix& cov) {
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success || min_eigenvalue(cov) <= 0.0)
    throw SingularNoise("noise covariance is not positive definite");
  return llt;
}

}  // namespace

OuterSet::OuterSet(Matrix theta, Matrix y, Matrix noise_cov)
    : theta_(std::move(theta)), y_(std::move(y)), covs_{std::move(noise_cov)} {
  validate();
}

OuterSet::OuterSet(Matrix theta, Matrix y, std::vector<Matrix> noise_covs)
    : theta_(std::move(theta)), y_(std::move(y)), covs_(std::move(noise_covs)) {
  if (static_cast<Eigen::Index>(covs_.size()) != y_.rows() && covs_.size() != 1)
    throw DimensionMismatch("OuterSet: need one noise covariance per outer sample");
  validate();
  bool equal = true;
  for (const auto& c : covs_) equal = equal && c == covs_.front();
  if (equal) covs_.resize(1);
}

void OuterSet::validate() const {
  if (y_.rows() < 1) throw InvalidArgument("OuterSet: need at least one outer sample");
  if (theta_.rows() != y_.rows()) throw DimensionMismatch("OuterSet: theta and y row counts differ");
  if (!y_.allFinite()) throw InvalidArgument("OuterSet: observations must be finite");
  for (const auto& c : covs_) {
    if (c.rows() != y_.cols() || c.cols() != y_.cols())
      throw DimensionMismatch("OuterSet: noise covariance does not match observation dimension");
    factor_noise(c);
  }
}

const Matrix& OuterSet::noise(Eigen::Index i) const {
  return covs_.size() == 1 ? covs_.front() : covs_[static_cast<std::size_t>(i)];
}

OuterSet OuterSet::subset(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw EmptyGroup("OuterSet::subset: empty index set");
  const auto n = static_cast<Eigen::Index>(indices.size());
  Matrix th(n, theta_.cols());
  Matrix y(n, y_.cols());
  std::vector<Matrix> covs;
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto i = static_cast<Eigen::Index>(indices[static_cast<std::size_t>(k)]);
    if (i >= size()) throw InvalidArgument("OuterSet::subset: index out of range");
    th.row(k) = theta_.row(i);
    y.row(k) = y_.row(i);
    if (!homoskedastic()) covs.push_back(noise(i));
  }
  if (homoskedastic()) return OuterSet(std::move(th), std::move(y), covs_.front());
  return OuterSet(std::move(th), std::move(y), std::move(covs));
}

PoolingWeights::PoolingWeights(Vector nu) : nu_(std::move(nu)) {
  if (nu_.size() < 1) throw WeightSumError("pooling weights must be nonempty");
  if ((nu_.array() < 0.0).any() || !nu_.allFinite()) throw WeightSumError("pooling weights must be nonnegative");
  if (std::abs(nu_.sum() - 1.0) > kWeightSumTol)
    throw WeightSumError("pooling weights must sum to 1 (sum = " + std::to_string(nu_.sum()) + ")");
}

PoolingWeights PoolingWeights::uniform(Eigen::Index n) {
  if (n < 1) throw WeightSumError("pooling weights must be nonempty");
  return PoolingWeights(Vector::Constant(n, 1.0 / static_cast<double>(n)));
}

PoolingWeights PoolingWeights::renormalized(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw EmptyGroup("cannot renormalize weights over an empty group");
  Vector out(static_cast<Eigen::Index>(indices.size()));
  double total = 0.0;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    out(static_cast<Eigen::Index>(k)) = nu_(static_cast<Eigen::Index>(indices[k]));
    total += out(static_cast<Eigen::Index>(k));
  }
  if (!(total > 0.0)) throw ZeroWeight("group has zero total pooling weight");
  out /= total;
  // Absorb the rounding residue so the sum check holds exactly.
  Eigen::Index big = 0;
  out.maxCoeff(&big);
  out(big) += 1.0 - out.sum();
  return PoolingWeights(std::move(out));
}

PooledObservation make_pooled(const OuterSet& outer, const PoolingWeights& nu) {
  if (nu.size() != outer.size()) throw DimensionMismatch("make_pooled: one weight per outer sample required");
  const auto dy = outer.obs_dim();
  PooledObservation out;
  if (outer.homoskedastic()) {
    out.cov = outer.noise(0);
    out.mean = outer.y().transpose() * nu.values();
    return out;
  }
  Matrix precision = Matrix::Zero(dy, dy);
  Vector info = Vector::Zero(dy);
  for (Eigen::Index i = 0; i < outer.size(); ++i) {
    if (nu[i] == 0.0) continue;
    const auto llt = factor_noise(outer.noise(i));
    const Matrix inv = llt.solve(Matrix::Identity(dy, dy));
    precision += nu[i] * inv;
    info += nu[i] * (inv * outer.y(i));
  }
  precision = 0.5 * (precision + precision.transpose()).eval();
  Eigen::LLT<Matrix> llt(precision);
  if (llt.info() != Eigen::Success) throw SingularNoise("pooled precision is singular");
  out.cov = llt.solve(Matrix::Identity(dy, dy));
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  out.mean = llt.solve(info);
  return out;
}

PooledObservation make_pooled(const OuterSet& outer, const PoolingWeights& nu, const std::vector<std::size_t>& indices) {
  return make_pooled(outer.subset(indices), nu.renormalized(indices));
}

Matrix stacked_covariance(const OuterSet& outer, const PoolingWeights& nu) {
  if (nu.size() != outer.size()) throw DimensionMismatch("stacked_covariance: one weight per outer sample required");
  const auto dy = outer.obs_dim();
  const auto n = outer.size();
  Matrix out = Matrix::Zero(n * dy, n * dy);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (nu[i] == 0.0) throw ZeroWeight("stacked covariance needs strictly positive weights (index " + std::to_string(i) + ")");
    out.block(i * dy, i * dy, dy, dy) = outer.noise(i) / nu[i];
  }
  return out;
}

Vector stacked_observation(const OuterSet& outer) {
  const Matrix yt = outer.y().transpose();
  return Eigen::Map<const Vector>(yt.data(), yt.size());
}

double pooled_loglik_sum(const Vector& f, const OuterSet& outer, const PoolingWeights& nu) {
  if (f.size() != outer.obs_dim()) throw DimensionMismatch("pooled_loglik_sum: prediction dimension mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < outer.size(); ++i) {
    if (nu[i] == 0.0) continue;
    const Vector r = outer.y(i) - f;
    total += nu[i] * r.dot(factor_noise(outer.noise(i)).solve(r));
  }
  return -0.5 * total;
}

double pooled_loglik_mean(const Vector& f, const PooledObservation& pooled) {
  if (f.size() != pooled.mean.size()) throw DimensionMismatch("pooled_loglik_mean: prediction dimension mismatch");
  const Vector r = pooled.mean - f;
  return -0.5 * r.dot(factor_noise(pooled.cov).solve(r));
}

double pooled_logdensity_unnorm(const Vector& theta, const OuterSet& outer, const PoolingWeights& nu,
                                const ForwardModel& model, const Measurement& m, EvalCounter& counter,
                                const std::optional<Gaussian>& prior, PooledForm form) {
  const Vector f = eval_forward(model, theta, m, counter);
  const double loglik =
      form == PooledForm::kSum ? pooled_loglik_sum(f, outer, nu) : pooled_loglik_mean(f, make_pooled(outer, nu));
  return prior ? prior->log_density(theta) + loglik : loglik;
}

}  // namespace gppbed
