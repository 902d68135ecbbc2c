#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>

namespace gppbed {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Multivariate normal N(mean, cov). The covariance is validated on construction:
/// symmetric to 1e-12 (relative) and no eigenvalue below -1e-10 * trace.
class Gaussian {
 public:
  Gaussian(Vector mean, Matrix cov);

  static Gaussian standard(Eigen::Index dim);
  static Gaussian scalar(double mean, double variance);
  /// N(mean, spread^2 I).
  static Gaussian isotropic(Vector mean, double spread);

  const Vector& mean() const noexcept { return mean_; }
  const Matrix& cov() const noexcept { return cov_; }
  Eigen::Index dim() const noexcept { return mean_.size(); }

  double log_density(const Vector& x) const;

  friend bool operator==(const Gaussian& a, const Gaussian& b) {
    return a.mean_ == b.mean_ && a.cov_ == b.cov_;
  }

 private:
  Vector mean_;
  Matrix cov_;
};

/// J parameter vectors (one per row) with optional cached forward predictions (J x d_y).
class Ensemble {
 public:
  Ensemble() = default;
  explicit Ensemble(Matrix members);

  Eigen::Index size() const noexcept { return members_.rows(); }
  Eigen::Index dim() const noexcept { return members_.cols(); }

  const Matrix& members() const noexcept { return members_; }
  Vector member(Eigen::Index j) const { return members_.row(j).transpose(); }

  bool has_predictions() const noexcept { return predictions_.has_value(); }
  const Matrix& predictions() const;
  void set_predictions(Matrix predictions);
  void clear_predictions() noexcept { predictions_.reset(); }

 private:
  Matrix members_;
  std::optional<Matrix> predictions_;
};

/// Deterministic random stream identified by (seed, stream id). Two streams with the
/// same identity produce identical sequences; distinct ids are decorrelated through
/// splitmix64 mixing of the seed material.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }

  /// Fresh stream keyed on (seed, hash(stream_id, child)); independent of this stream's state.
  RngStream child(std::uint64_t child_id) const;

  double normal();
  double uniform();
  Vector normal_vector(Eigen::Index n);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_id_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Well-known stream ids; every consumer of randomness draws from its own stream.
namespace streams {
inline constexpr std::uint64_t kPriorOuter = 1;
inline constexpr std::uint64_t kOuterNoise = 2;
inline constexpr std::uint64_t kPriorInner = 3;
inline constexpr std::uint64_t kEkiPerturbation = 4;
inline constexpr std::uint64_t kExperimentNoise = 5;
inline constexpr std::uint64_t kFixture = 6;
}  // namespace streams

/// Seed for a derived experiment (stage, repeat, ...), mixed with splitmix64.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

struct MeanCov {
  Vector mean;
  Matrix cov;
};

/// Unbiased sample mean and covariance (1/(J-1)); throws DegenerateEnsemble for J < 2.
MeanCov ensemble_mean_cov(const Ensemble& e);
/// Same, for the rows of an arbitrary matrix.
MeanCov row_mean_cov(const Matrix& rows);
/// Sample cross-covariance of paired rows, 1/(J-1).
Matrix row_cross_cov(const Matrix& a, const Matrix& b);

double gaussian_kl(const Gaussian& p, const Gaussian& q);
/// 2-Wasserstein distance (Bures form), not squared.
double gaussian_w2(const Gaussian& p, const Gaussian& q);

Ensemble sample_gaussian(const Gaussian& g, Eigen::Index n, RngStream& rng);

// Dense linear-algebra helpers shared by the modules.

/// Symmetric square root L with L L^T = cov; negative eigenvalues above -1e-10*trace are
/// clipped to zero, anything below raises FactorizationFailure.
Matrix psd_factor(const Matrix& cov);
/// Principal square root of a PSD matrix (same clipping policy as psd_factor).
Matrix psd_sqrt(const Matrix& cov);
/// log det of an SPD matrix; SingularCovariance if not positive definite.
double spd_logdet(const Matrix& m);
/// Inverse of an SPD matrix via Cholesky; SingularCovariance on failure.
Matrix spd_inverse(const Matrix& m);
double min_eigenvalue(const Matrix& sym);

}  // namespace gppbed
