#pragma once

#include "gppbed/forward.hpp"
#include "gppbed/statcore.hpp"

#include <optional>
#include <vector>

namespace gppbed {

/// Outer samples: paired parameters theta_i (rows), observations y_i (rows) and the noise
/// covariance of each observation. A single shared covariance is the homoskedastic case.
class OuterSet {
 public:
  OuterSet(Matrix theta, Matrix y, Matrix noise_cov);
  OuterSet(Matrix theta, Matrix y, std::vector<Matrix> noise_covs);

  Eigen::Index size() const noexcept { return y_.rows(); }
  Eigen::Index obs_dim() const noexcept { return y_.cols(); }
  Eigen::Index param_dim() const noexcept { return theta_.cols(); }

  const Matrix& theta() const noexcept { return theta_; }
  const Matrix& y() const noexcept { return y_; }
  Vector y(Eigen::Index i) const { return y_.row(i).transpose(); }
  const Matrix& noise(Eigen::Index i) const;
  bool homoskedastic() const noexcept { return covs_.size() == 1; }

  OuterSet subset(const std::vector<std::size_t>& indices) const;

 private:
  void validate() const;

  Matrix theta_;
  Matrix y_;
  std::vector<Matrix> covs_;
};

class PoolingWeights {
 public:
  explicit PoolingWeights(Vector nu);
  static PoolingWeights uniform(Eigen::Index n);

  const Vector& values() const noexcept { return nu_; }
  double operator[](Eigen::Index i) const { return nu_(i); }
  Eigen::Index size() const noexcept { return nu_.size(); }

  /// nu'_i = nu_i / sum_{k in indices} nu_k over the listed entries.
  PoolingWeights renormalized(const std::vector<std::size_t>& indices) const;

 private:
  Vector nu_;
};

struct PooledObservation {
  Vector mean;  // y-bar_nu
  Matrix cov;   // Sigma_nu
};

PooledObservation make_pooled(const OuterSet& outer, const PoolingWeights& nu);
/// Pooled observation of a subset of outer samples with renormalized weights.
PooledObservation make_pooled(const OuterSet& outer, const PoolingWeights& nu, const std::vector<std::size_t>& indices);

/// blockdiag(Sigma_i / nu_i), (N d_y) x (N d_y).
Matrix stacked_covariance(const OuterSet& outer, const PoolingWeights& nu);
/// (y_1; ...; y_N) as one column.
Vector stacked_observation(const OuterSet& outer);

/// -1/2 sum_i nu_i |y_i - f|^2_{Sigma_i} for a given prediction f.
double pooled_loglik_sum(const Vector& f, const OuterSet& outer, const PoolingWeights& nu);
/// -1/2 |y-bar - f|^2_{Sigma_nu}.
double pooled_loglik_mean(const Vector& f, const PooledObservation& pooled);

enum class PooledForm { kSum, kMeanObservation };

/// log prior(theta) + pooled log-likelihood, up to a theta-independent constant. Without a
/// prior the prior term is omitted. One forward solve.
double pooled_logdensity_unnorm(const Vector& theta, const OuterSet& outer, const PoolingWeights& nu,
                                const ForwardModel& model, const Measurement& m, EvalCounter& counter,
                                const std::optional<Gaussian>& prior, PooledForm form = PooledForm::kSum);

}  // namespace gppbed
