#pragma once

#include "gppbed/isampling.hpp"
#include "gppbed/pooling.hpp"
#include "gppbed/statcore.hpp"

#include <functional>

namespace gppbed {

/// Linear-Gaussian reference model Y = A theta + eps, eps ~ N(0, Sigma).
struct ConjugateSpec {
  Gaussian prior;
  Matrix a;
  Matrix noise;

  ConjugateSpec(Gaussian prior, Matrix a, Matrix noise);
};

/// Exact posterior N(m0 + K (y - A m0), C0 - K A C0), K = C0 A^T (A C0 A^T + Sigma)^{-1}.
Gaussian posterior_closed_form(const ConjugateSpec& spec, const Vector& y);
/// Same update with an explicit observation covariance (used for pooled targets).
Gaussian posterior_closed_form(const ConjugateSpec& spec, const Vector& y, const Matrix& noise);

/// Posterior conditioned on the pooled observation (y-bar_nu, Sigma_nu).
Gaussian pooled_posterior_closed_form(const ConjugateSpec& spec, const OuterSet& outer, const PoolingWeights& nu);

/// Self-normalized weights from full densities: prior(theta) p(y|theta) / q(theta).
WeightVector snis_bruteforce(const Matrix& members, const std::function<double(const Vector&)>& log_target,
                             const std::function<double(const Vector&)>& log_proposal);

/// Central differences, component-wise.
Vector fd_gradient(const std::function<double(const Vector&)>& fn, const Vector& x, double h);

/// 1/2 log det(A C0 A^T + Sigma) - 1/2 log det Sigma.
double eig_closed_form(const Gaussian& prior, const Matrix& a, const Matrix& noise);

}  // namespace gppbed
