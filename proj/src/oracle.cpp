#include "gppbed/oracle.hpp"

#include "gppbed/errors.hpp"

namespace gppbed {

ConjugateSpec::ConjugateSpec(Gaussian p, Matrix a_, Matrix noise_)
    : prior(std::move(p)), a(std::move(a_)), noise(std::move(noise_)) {
  if (a.cols() != prior.dim()) throw DimensionMismatch("ConjugateSpec: A columns must match the prior dimension");
  if (noise.rows() != a.rows() || noise.cols() != a.rows())
    throw DimensionMismatch("ConjugateSpec: noise covariance must be d_y x d_y");
  if (min_eigenvalue(noise) <= 0.0) throw SingularNoise("ConjugateSpec: noise covariance must be positive definite");
}

Gaussian posterior_closed_form(const ConjugateSpec& spec, const Vector& y) {
  return posterior_closed_form(spec, y, spec.noise);
}

Gaussian posterior_closed_form(const ConjugateSpec& spec, const Vector& y, const Matrix& noise) {
  if (y.size() != spec.a.rows()) throw DimensionMismatch("posterior_closed_form: observation dimension mismatch");
  const Matrix& c0 = spec.prior.cov();
  const Matrix cross = c0 * spec.a.transpose();
  Matrix innovation = spec.a * cross + noise;
  innovation = 0.5 * (innovation + innovation.transpose()).eval();
  Eigen::LLT<Matrix> llt(innovation);
  if (llt.info() != Eigen::Success) throw SingularInnovation("posterior_closed_form: singular innovation covariance");
  const Matrix gain = llt.solve(cross.transpose()).transpose();
  const Vector mean = spec.prior.mean() + gain * (y - spec.a * spec.prior.mean());
  Matrix cov = c0 - gain * spec.a * c0;
  cov = 0.5 * (cov + cov.transpose()).eval();
  // Round-off can leave tiny negative eigenvalues when the data are very informative.
  const double lo = min_eigenvalue(cov);
  if (lo < 0.0) cov += (-lo) * Matrix::Identity(cov.rows(), cov.cols());
  return Gaussian(mean, cov);
}

Gaussian pooled_posterior_closed_form(const ConjugateSpec& spec, const OuterSet& outer, const PoolingWeights& nu) {
  const PooledObservation p = make_pooled(outer, nu);
  return posterior_closed_form(spec, p.mean, p.cov);
}

WeightVector snis_bruteforce(const Matrix& members, const std::function<double(const Vector&)>& log_target,
                             const std::function<double(const Vector&)>& log_proposal) {
  Vector logw(members.rows());
  for (Eigen::Index j = 0; j < members.rows(); ++j) {
    const Vector th = members.row(j).transpose();
    logw(j) = log_target(th) - log_proposal(th);
  }
  return normalize_log_weights(logw);
}

Vector fd_gradient(const std::function<double(const Vector&)>& fn, const Vector& x, double h) {
  if (!(h > 0.0)) throw InvalidArgument("fd_gradient: step must be positive");
  Vector g(x.size());
  Vector xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    xp(i) = x(i) + h;
    const double up = fn(xp);
    xp(i) = x(i) - h;
    const double down = fn(xp);
    xp(i) = x(i);
    g(i) = (up - down) / (2.0 * h);
  }
  return g;
}

double eig_closed_form(const Gaussian& prior, const Matrix& a, const Matrix& noise) {
  if (a.cols() != prior.dim() || noise.rows() != a.rows())
    throw DimensionMismatch("eig_closed_form: dimension mismatch");
  const Matrix marginal = a * prior.cov() * a.transpose() + noise;
  return 0.5 * spd_logdet(0.5 * (marginal + marginal.transpose())) - 0.5 * spd_logdet(noise);
}

}  // namespace gppbed
