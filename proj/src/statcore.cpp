#include "gppbed/statcore.hpp"

#include "gppbed/errors.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace gppbed {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::seed_seq make_seed_seq(std::uint64_t seed, std::uint64_t stream) {
  const std::uint64_t a = splitmix64(seed);
  const std::uint64_t b = splitmix64(a ^ splitmix64(stream + 0x632BE59BD9B4E019ULL));
  return std::seed_seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                       static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
}

std::mt19937_64 make_engine(std::uint64_t seed, std::uint64_t stream) {
  auto seq = make_seed_seq(seed, stream);
  return std::mt19937_64(seq);
}

double trace_scale(const Matrix& m) {
  const double t = m.trace();
  return std::abs(t) > 0.0 ? std::abs(t) : 1.0;
}

void validate_covariance(const Matrix& cov) {
  if (cov.rows() != cov.cols()) throw DimensionMismatch("covariance must be square");
  if (!cov.allFinite()) throw InvalidArgument("covariance has non-finite entries");
  const double scale = std::max(cov.cwiseAbs().maxCoeff(), 1e-300);
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw InvalidArgument("covariance is not symmetric");
  if (cov.size() == 0) return;
  if (min_eigenvalue(cov) < -1e-10 * trace_scale(cov))
    throw InvalidArgument("covariance is not positive semidefinite");
}

}  // namespace

Gaussian::Gaussian(Vector mean, Matrix cov) : mean_(std::move(mean)), cov_(std::move(cov)) {
  if (cov_.rows() != mean_.size()) throw DimensionMismatch("Gaussian mean/cov dimension mismatch");
  validate_covariance(cov_);
  // Store the exactly symmetric part.
  cov_ = 0.5 * (cov_ + cov_.transpose()).eval();
}

Gaussian Gaussian::standard(Eigen::Index dim) {
  return Gaussian(Vector::Zero(dim), Matrix::Identity(dim, dim));
}

Gaussian Gaussian::scalar(double mean, double variance) {
  return Gaussian(Vector::Constant(1, mean), Matrix::Constant(1, 1, variance));
}

Gaussian Gaussian::isotropic(Vector mean, double spread) {
  const auto n = mean.size();
  return Gaussian(std::move(mean), spread * spread * Matrix::Identity(n, n));
}

double Gaussian::log_density(const Vector& x) const {
  if (x.size() != dim()) throw DimensionMismatch("log_density: dimension mismatch");
  Eigen::LLT<Matrix> llt(cov_);
  if (llt.info() != Eigen::Success) throw SingularCovariance("log_density: covariance not positive definite");
  const Vector r = x - mean_;
  const Vector z = llt.matrixL().solve(r);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return -0.5 * (z.squaredNorm() + logdet + static_cast<double>(dim()) * std::log(2.0 * M_PI));
}

Ensemble::Ensemble(Matrix members) : members_(std::move(members)) {
  if (members_.rows() < 1) throw InvalidArgument("ensemble must have at least one member");
}

const Matrix& Ensemble::predictions() const {
  if (!predictions_) throw InvalidArgument("ensemble predictions have not been computed");
  return *predictions_;
}

void Ensemble::set_predictions(Matrix predictions) {
  if (predictions.rows() != members_.rows())
    throw DimensionMismatch("predictions must have one row per ensemble member");
  predictions_ = std::move(predictions);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) { return splitmix64(seed ^ splitmix64(tag + 0xD1B54A32D192ED03ULL)); }

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), engine_(make_engine(seed, stream_id)) {}

RngStream RngStream::child(std::uint64_t child_id) const {
  return RngStream(seed_, splitmix64(stream_id_ * 0x100000001B3ULL ^ splitmix64(child_id + 1)));
}

double RngStream::normal() { return normal_(engine_); }

double RngStream::uniform() { return uniform_(engine_); }

Vector RngStream::normal_vector(Eigen::Index n) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal_(engine_);
  return v;
}

MeanCov row_mean_cov(const Matrix& rows) {
  const auto n = rows.rows();
  if (n < 2) throw DegenerateEnsemble("sample covariance needs at least two members, got " + std::to_string(n));
  MeanCov out;
  out.mean = rows.colwise().mean().transpose();
  const Matrix centered = rows.rowwise() - out.mean.transpose();
  out.cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  return out;
}

Matrix row_cross_cov(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw DimensionMismatch("row_cross_cov: row counts differ");
  const auto n = a.rows();
  if (n < 2) throw DegenerateEnsemble("cross covariance needs at least two members");
  const Matrix ca = a.rowwise() - a.colwise().mean();
  const Matrix cb = b.rowwise() - b.colwise().mean();
  return (ca.transpose() * cb) / static_cast<double>(n - 1);
}

MeanCov ensemble_mean_cov(const Ensemble& e) { return row_mean_cov(e.members()); }

double min_eigenvalue(const Matrix& sym) {
  if (sym.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

Matrix psd_factor(const Matrix& cov) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  if (es.info() != Eigen::Success) throw FactorizationFailure("eigendecomposition failed");
  Vector ev = es.eigenvalues();
  const double floor = -1e-10 * trace_scale(cov);
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < floor) throw FactorizationFailure("covariance is indefinite beyond tolerance");
    ev(i) = ev(i) > 0.0 ? std::sqrt(ev(i)) : 0.0;
  }
  return es.eigenvectors() * ev.asDiagonal();
}

Matrix psd_sqrt(const Matrix& cov) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  if (es.info() != Eigen::Success) throw FactorizationFailure("eigendecomposition failed");
  Vector ev = es.eigenvalues();
  const double floor = -1e-10 * trace_scale(cov);
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < floor) throw FactorizationFailure("covariance is indefinite beyond tolerance");
    ev(i) = ev(i) > 0.0 ? std::sqrt(ev(i)) : 0.0;
  }
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

double spd_logdet(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw SingularCovariance("matrix is not positive definite");
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

Matrix spd_inverse(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw SingularCovariance("matrix is not positive definite");
  return llt.solve(Matrix::Identity(m.rows(), m.cols()));
}

double gaussian_kl(const Gaussian& p, const Gaussian& q) {
  if (p.dim() != q.dim()) throw DimensionMismatch("gaussian_kl: dimension mismatch");
  if (p == q) return 0.0;
  const double tol = 1e-12 * trace_scale(q.cov());
  if (min_eigenvalue(q.cov()) <= tol) throw SingularCovariance("gaussian_kl: q covariance is singular");
  Eigen::LLT<Matrix> llt(q.cov());
  const Vector diff = q.mean() - p.mean();
  const double trace_term = llt.solve(p.cov()).trace();
  const double maha = diff.dot(llt.solve(diff));
  const double logdet_q = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  Eigen::SelfAdjointEigenSolver<Matrix> es(p.cov(), Eigen::EigenvaluesOnly);
  double logdet_p = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double ev = es.eigenvalues()(i);
    if (ev <= 0.0) return std::numeric_limits<double>::infinity();
    logdet_p += std::log(ev);
  }
  const double kl = 0.5 * (trace_term + maha - static_cast<double>(p.dim()) + logdet_q - logdet_p);
  return std::max(kl, 0.0);
}

double gaussian_w2(const Gaussian& p, const Gaussian& q) {
  if (p.dim() != q.dim()) throw DimensionMismatch("gaussian_w2: dimension mismatch");
  if (p == q) return 0.0;
  const double mean_term = (p.mean() - q.mean()).squaredNorm();
  double cov_term = 0.0;
  if (p.cov() != q.cov()) {
    const Matrix sq = psd_sqrt(q.cov());
    const Matrix middle = sq * p.cov() * sq;
    const Matrix cross = psd_sqrt(0.5 * (middle + middle.transpose()));
    cov_term = p.cov().trace() + q.cov().trace() - 2.0 * cross.trace();
  }
  return std::sqrt(std::max(mean_term + std::max(cov_term, 0.0), 0.0));
}

Ensemble sample_gaussian(const Gaussian& g, Eigen::Index n, RngStream& rng) {
  if (n < 1) throw InvalidArgument("sample_gaussian: n must be >= 1");
  const Matrix factor = psd_factor(g.cov());
  const auto d = g.dim();
  Matrix draws(n, d);
  for (Eigen::Index j = 0; j < n; ++j) {
    const Vector z = rng.normal_vector(d);
    draws.row(j) = (g.mean() + factor * z).transpose();
  }
  return Ensemble(std::move(draws));
}

}  // namespace gppbed
