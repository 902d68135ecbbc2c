#include "gppbed/forward.hpp"

#include "gppbed/errors.hpp"
#include "gppbed/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

namespace gppbed {

// ---------------------------------------------------------------------------
// LinearModel

LinearModel::LinearModel(Matrix a, Gaussian noise)
    : LinearModel(a, Matrix::Zero(a.rows(), a.cols()), Matrix::Zero(a.rows(), a.cols()), std::move(noise)) {}

LinearModel::LinearModel(Matrix a, Matrix a_x, Matrix a_y, Gaussian noise)
    : a_(std::move(a)), a_x_(std::move(a_x)), a_y_(std::move(a_y)), noise_(std::move(noise)) {
  if (a_x_.rows() != a_.rows() || a_x_.cols() != a_.cols() || a_y_.rows() != a_.rows() || a_y_.cols() != a_.cols())
    throw DimensionMismatch("LinearModel: design operators must match A");
  if (noise_.dim() != a_.rows()) throw DimensionMismatch("LinearModel: noise dimension must equal rows of A");
  if (min_eigenvalue(noise_.cov()) <= 0.0) throw SingularNoise("LinearModel: noise covariance must be positive definite");
}

Matrix LinearModel::operator_at(const Point2& d) const { return a_ + d.x() * a_x_ + d.y() * a_y_; }

Evaluation LinearModel::solve(const Vector& theta, const Measurement& m, bool with_design_gradient) const {
  if (theta.size() != param_dim()) throw DimensionMismatch("LinearModel: parameter dimension mismatch");
  Evaluation out;
  out.value = operator_at(m.location) * theta;
  if (with_design_gradient) {
    out.design_jacobian.resize(output_dim(), 2);
    out.design_jacobian.col(0) = a_x_ * theta;
    out.design_jacobian.col(1) = a_y_ * theta;
  }
  return out;
}

// ---------------------------------------------------------------------------
// MlpCorrection

namespace {

constexpr std::size_t kW1 = 0;
constexpr std::size_t kB1 = kW1 + MlpCorrection::kHidden * MlpCorrection::kInputs;
constexpr std::size_t kW2 = kB1 + MlpCorrection::kHidden;
constexpr std::size_t kB2 = kW2 + MlpCorrection::kHidden * MlpCorrection::kHidden;
constexpr std::size_t kW3 = kB2 + MlpCorrection::kHidden;
constexpr std::size_t kB3 = kW3 + MlpCorrection::kHidden;

}  // namespace

MlpCorrection::MlpCorrection(const Vector& weights) { set_weights(weights); }

Vector MlpCorrection::weights() const {
  Vector w(static_cast<Eigen::Index>(kParameterCount));
  for (std::size_t i = 0; i < kParameterCount; ++i) w(static_cast<Eigen::Index>(i)) = weights_[i];
  return w;
}

void MlpCorrection::set_weights(const Vector& weights) {
  if (weights.size() != static_cast<Eigen::Index>(kParameterCount))
    throw DimensionMismatch("MlpCorrection expects exactly 37 weights, got " + std::to_string(weights.size()));
  for (std::size_t i = 0; i < kParameterCount; ++i) weights_[i] = weights(static_cast<Eigen::Index>(i));
}

double MlpCorrection::eval(double x0, double x1) const {
  const auto& w = weights_;
  std::array<double, kHidden> h1{};
  for (std::size_t k = 0; k < kHidden; ++k)
    h1[k] = std::tanh(w[kW1 + 2 * k] * x0 + w[kW1 + 2 * k + 1] * x1 + w[kB1 + k]);
  double out = w[kB3];
  for (std::size_t k = 0; k < kHidden; ++k) {
    double a = w[kB2 + k];
    for (std::size_t l = 0; l < kHidden; ++l) a += w[kW2 + kHidden * k + l] * h1[l];
    out += w[kW3 + k] * std::tanh(a);
  }
  return out;
}

MlpCorrection::ValueAndGradient MlpCorrection::eval_and_grad(double x0, double x1) const {
  const auto& w = weights_;
  std::array<double, kHidden> h1{};
  std::array<double, kHidden> h2{};
  for (std::size_t k = 0; k < kHidden; ++k)
    h1[k] = std::tanh(w[kW1 + 2 * k] * x0 + w[kW1 + 2 * k + 1] * x1 + w[kB1 + k]);
  double out = w[kB3];
  for (std::size_t k = 0; k < kHidden; ++k) {
    double a = w[kB2 + k];
    for (std::size_t l = 0; l < kHidden; ++l) a += w[kW2 + kHidden * k + l] * h1[l];
    h2[k] = std::tanh(a);
    out += w[kW3 + k] * h2[k];
  }

  ValueAndGradient r{out, Vector::Zero(static_cast<Eigen::Index>(kParameterCount))};
  auto g = [&r](std::size_t i) -> double& { return r.grad(static_cast<Eigen::Index>(i)); };
  g(kB3) = 1.0;
  std::array<double, kHidden> delta2{};
  for (std::size_t k = 0; k < kHidden; ++k) {
    g(kW3 + k) = h2[k];
    delta2[k] = w[kW3 + k] * (1.0 - h2[k] * h2[k]);
  }
  std::array<double, kHidden> delta1{};
  for (std::size_t k = 0; k < kHidden; ++k) {
    g(kB2 + k) = delta2[k];
    for (std::size_t l = 0; l < kHidden; ++l) {
      g(kW2 + kHidden * k + l) = delta2[k] * h1[l];
      delta1[l] += delta2[k] * w[kW2 + kHidden * k + l];
    }
  }
  for (std::size_t l = 0; l < kHidden; ++l) {
    const double d = delta1[l] * (1.0 - h1[l] * h1[l]);
    g(kB1 + l) = d;
    g(kW1 + 2 * l) = d * x0;
    g(kW1 + 2 * l + 1) = d * x1;
  }
  return r;
}

void to_json(nlohmann::json& j, const MlpCorrection& c) {
  const Vector w = c.weights();
  j = nlohmann::json{{"architecture", "2-4-4-1 tanh"}, {"weights", std::vector<double>(w.data(), w.data() + w.size())}};
}

void from_json(const nlohmann::json& j, MlpCorrection& c) {
  const auto w = j.at("weights").get<std::vector<double>>();
  c.set_weights(Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size())));
}

MlpCorrection::ValueAndGradient mlp_eval_and_grad(const MlpCorrection& c, const Point2& input) {
  return c.eval_and_grad(input.x(), input.y());
}

// ---------------------------------------------------------------------------
// Source and field

double SourceSpec::evaluate(double zx, double zy) const {
  const double r2 = (x - zx) * (x - zx) + (y - zy) * (y - zy);
  const double h2 = width * width;
  switch (kind) {
    case SourceKind::kGaussian:
      return strength / (2.0 * M_PI * h2) * std::exp(-r2 / (2.0 * h2));
    case SourceKind::kRational:
      return 3.0 * strength / (M_PI * (r2 / (2.0 * h2) + 2.0 * h2));
  }
  return 0.0;
}

Field::Field(PdeConfig config, std::vector<double> values, double time)
    : config_(config), values_(std::move(values)), time_(time) {}

bool Field::contains(const Point2& p) const {
  return p.x() >= config_.z_lo && p.x() <= config_.z_hi && p.y() >= config_.z_lo && p.y() <= config_.z_hi;
}

double Field::interpolate(const Point2& p) const {
  if (!contains(p)) throw OutOfDomain("measurement location outside the PDE domain");
  const double fx = (p.x() - config_.z_lo) / config_.dx();
  const double fy = (p.y() - config_.z_lo) / config_.dy();
  const int ix = std::clamp(static_cast<int>(std::floor(fx)), 0, config_.nx - 2);
  const int iy = std::clamp(static_cast<int>(std::floor(fy)), 0, config_.ny - 2);
  const double tx = fx - ix;
  const double ty = fy - iy;
  return (1.0 - tx) * (1.0 - ty) * at(ix, iy) + tx * (1.0 - ty) * at(ix + 1, iy) + (1.0 - tx) * ty * at(ix, iy + 1) +
         tx * ty * at(ix + 1, iy + 1);
}

Point2 Field::gradient(const Point2& p, double h) const {
  const Point2 ex(h, 0.0);
  const Point2 ey(0.0, h);
  if (!contains(p + ex) || !contains(p - ex) || !contains(p + ey) || !contains(p - ey))
    throw OutOfDomain("design finite-difference stencil leaves the PDE domain");
  return Point2((interpolate(p + ex) - interpolate(p - ex)) / (2.0 * h),
                (interpolate(p + ey) - interpolate(p - ey)) / (2.0 * h));
}

void Field::write_csv(std::ostream& os) const {
  os << "iy,ix,z_x[L],z_y[L],u[C]\n";
  os.precision(17);
  for (int iy = 0; iy < config_.ny; ++iy)
    for (int ix = 0; ix < config_.nx; ++ix)
      os << iy << ',' << ix << ',' << config_.z_lo + ix * config_.dx() << ',' << config_.z_lo + iy * config_.dy()
         << ',' << at(ix, iy) << '\n';
}

// ---------------------------------------------------------------------------
// PdeModel

namespace {

double stable_time_step(const PdeConfig& c) {
  const double dx = c.dx();
  const double dy = c.dy();
  const double vmax = std::abs(c.velocity_rate) * c.t_end;
  const double rate = 2.0 * c.diffusion / (dx * dx) + 2.0 * c.diffusion / (dy * dy) + vmax / dx + vmax / dy;
  const double bound = c.cfl_safety / rate;
  const double steps_per_quantum = std::ceil(c.time_quantum / bound);
  return c.time_quantum / steps_per_quantum;
}

/// One explicit Euler step of size dt starting at time t; central differences in space.
void euler_step(const PdeConfig& c, const std::vector<double>& u, const std::vector<double>& source, double t,
                double dt, std::vector<double>& out) {
  const int nx = c.nx;
  const int ny = c.ny;
  const double idx = 1.0 / c.dx();
  const double idy = 1.0 / c.dy();
  const double dxx = c.diffusion * idx * idx;
  const double dyy = c.diffusion * idy * idy;
  const double vx = c.velocity_rate * t;
  const double vy = c.velocity_rate * t;
  for (int j = 0; j < ny; ++j) {
    const int jm = j > 0 ? j - 1 : 1;
    const int jp = j < ny - 1 ? j + 1 : ny - 2;
    const double* row = u.data() + static_cast<std::size_t>(j) * nx;
    const double* row_m = u.data() + static_cast<std::size_t>(jm) * nx;
    const double* row_p = u.data() + static_cast<std::size_t>(jp) * nx;
    const double* src = source.data() + static_cast<std::size_t>(j) * nx;
    double* dst = out.data() + static_cast<std::size_t>(j) * nx;
    for (int i = 0; i < nx; ++i) {
      const int im = i > 0 ? i - 1 : 1;
      const int ip = i < nx - 1 ? i + 1 : nx - 2;
      const double ui = row[i];
      const double lap = dxx * (row[ip] - 2.0 * ui + row[im]) + dyy * (row_p[i] - 2.0 * ui + row_m[i]);
      const double adv_x = 0.5 * vx * (row[ip] - row[im]) * idx;
      const double adv_y = 0.5 * vy * (row_p[i] - row_m[i]) * idy;
      dst[i] = ui + dt * (lap - adv_x - adv_y + src[i]);
    }
  }
}

}  // namespace

PdeModel::PdeModel(PdeConfig config, SourceSpec base, Unknowns unknowns, std::optional<MlpCorrection> correction)
    : config_(config), base_(base), unknowns_(unknowns), correction_(std::move(correction)) {
  if (config_.nx < 16 || config_.ny < 16) throw InvalidArgument("PdeModel: grid must be at least 16x16");
  if (!(config_.z_hi > config_.z_lo)) throw InvalidArgument("PdeModel: empty domain");
  if (!(config_.t_end > 0.0) || !(config_.time_quantum > 0.0)) throw InvalidArgument("PdeModel: invalid time settings");
  if (!(base_.width > 0.0)) throw InvalidArgument("PdeModel: source width theta_h must be positive");
  if (unknowns_ == Unknowns::kNetworkWeights && !correction_)
    throw InvalidArgument("PdeModel: network-weight unknowns require a correction network");
  dt_ = stable_time_step(config_);
}

Eigen::Index PdeModel::param_dim() const {
  switch (unknowns_) {
    case Unknowns::kLocation:
      return 2;
    case Unknowns::kStrength:
      return 1;
    case Unknowns::kNetworkWeights:
      return static_cast<Eigen::Index>(MlpCorrection::kParameterCount);
    case Unknowns::kFull:
      return 4;
  }
  return 0;
}

Matrix PdeModel::noise_cov(const Measurement& m) const { return Matrix::Constant(1, 1, m.noise_variance); }

SourceSpec PdeModel::source_for(const Vector& theta) const {
  if (theta.size() != param_dim()) throw DimensionMismatch("PdeModel: parameter dimension mismatch");
  SourceSpec s = base_;
  switch (unknowns_) {
    case Unknowns::kLocation:
      s.x = theta(0);
      s.y = theta(1);
      break;
    case Unknowns::kStrength:
      s.strength = theta(0);
      break;
    case Unknowns::kNetworkWeights:
      break;
    case Unknowns::kFull:
      s.x = theta(0);
      s.y = theta(1);
      s.width = theta(2);
      s.strength = theta(3);
      if (!(s.width > 0.0)) throw InvalidArgument("PdeModel: source width theta_h must be positive");
      break;
  }
  return s;
}

std::optional<MlpCorrection> PdeModel::correction_for(const Vector& theta) const {
  if (unknowns_ == Unknowns::kNetworkWeights) return MlpCorrection(theta);
  return correction_;
}

PdeModel PdeModel::with_unknowns(Unknowns u) const { return PdeModel(config_, base_, u, correction_); }
PdeModel PdeModel::with_source(const SourceSpec& s) const { return PdeModel(config_, s, unknowns_, correction_); }
PdeModel PdeModel::with_correction(std::optional<MlpCorrection> c) const {
  return PdeModel(config_, base_, unknowns_, std::move(c));
}

void PdeModel::validate(const Measurement& m) const {
  const Point2& d = m.location;
  if (!(d.x() >= config_.z_lo && d.x() <= config_.z_hi && d.y() >= config_.z_lo && d.y() <= config_.z_hi))
    throw OutOfDomain("measurement location outside the PDE domain");
  if (!(m.time > 0.0) || m.time > config_.t_end * (1.0 + 1e-12))
    throw InvalidArgument("measurement time must lie in (0, t_end]");
  if (!(m.noise_variance > 0.0)) throw SingularNoise("measurement noise variance must be positive");
}

std::vector<double> PdeModel::source_field(const Vector& theta) const {
  const SourceSpec src = source_for(theta);
  const std::optional<MlpCorrection> net = correction_for(theta);
  const int nx = config_.nx;
  const int ny = config_.ny;
  std::vector<double> source(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j) {
    const double zy = config_.z_lo + j * config_.dy();
    for (int i = 0; i < nx; ++i) {
      const double zx = config_.z_lo + i * config_.dx();
      double s = src.evaluate(zx, zy);
      if (net) s += net->eval(src.x - zx, src.y - zy);
      source[static_cast<std::size_t>(j) * nx + i] = s;
    }
  }
  return source;
}

std::vector<Field> PdeModel::solve_fields(const Vector& theta, const std::vector<double>& times) const {
  return march(source_field(theta), times);
}

std::vector<Field> PdeModel::march(const std::vector<double>& source, const std::vector<double>& times) const {
  const std::size_t cells = static_cast<std::size_t>(config_.nx) * config_.ny;
  if (source.size() != cells) throw DimensionMismatch("march: source must have one value per grid node");
  std::vector<double> u(cells, 0.0);
  std::vector<double> next(cells, 0.0);
  std::vector<Field> fields;
  fields.reserve(times.size());
  long step = 0;
  double last = 0.0;
  for (const double t : times) {
    if (!(t > 0.0) || t > config_.t_end * (1.0 + 1e-12)) throw InvalidArgument("solve time must lie in (0, t_end]");
    if (t < last) throw InvalidArgument("solve times must be nondecreasing");
    last = t;
    const long target = static_cast<long>(std::floor(t / dt_ + 1e-9));
    while (step < target) {
      euler_step(config_, u, source, static_cast<double>(step) * dt_, dt_, next);
      u.swap(next);
      ++step;
    }
    const double remainder = t - static_cast<double>(step) * dt_;
    std::vector<double> snapshot = u;
    if (remainder > 1e-12 * dt_) {
      euler_step(config_, u, source, static_cast<double>(step) * dt_, remainder, snapshot);
    }
    for (const double v : snapshot)
      if (!std::isfinite(v)) throw UnstableStep("PDE solution became non-finite");
    fields.emplace_back(config_, std::move(snapshot), t);
  }
  return fields;
}

Field PdeModel::solve_field(const Vector& theta, double time) const { return std::move(solve_fields(theta, {time}).front()); }

Evaluation PdeModel::solve(const Vector& theta, const Measurement& m, bool with_design_gradient) const {
  validate(m);
  const Field field = solve_field(theta, m.time);
  Evaluation out;
  out.value = Vector::Constant(1, field.interpolate(m.location));
  if (with_design_gradient) {
    const Point2 g = field.gradient(m.location, design_step());
    out.design_jacobian = g.transpose();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Counted evaluation

Vector eval_forward(const ForwardModel& model, const Vector& theta, const Measurement& m, EvalCounter& counter) {
  counter.add(1);
  return model.solve(theta, m, false).value;
}

Evaluation eval_forward_with_design_gradient(const ForwardModel& model, const Vector& theta, const Measurement& m,
                                              EvalCounter& counter) {
  counter.add(1);
  return model.solve(theta, m, true);
}

Matrix eval_forward_batch(const ForwardModel& model, Ensemble& ensemble, const Measurement& m, EvalCounter& counter) {
  const auto n = ensemble.size();
  Matrix out(n, model.output_dim());
  const Matrix& members = ensemble.members();
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t j) {
    const auto row = static_cast<Eigen::Index>(j);
    try {
      out.row(row) = model.solve(members.row(row).transpose(), m, false).value.transpose();
    } catch (const std::exception& e) {
      throw MemberEvaluationError(j, e.what());
    }
  });
  counter.add(static_cast<std::uint64_t>(n));
  ensemble.set_predictions(out);
  return out;
}

BatchEvaluation eval_forward_batch_with_design_gradient(const ForwardModel& model, const Matrix& members,
                                                        const Measurement& m, EvalCounter& counter) {
  const auto n = members.rows();
  BatchEvaluation out;
  out.values.resize(n, model.output_dim());
  out.design_jacobians.resize(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t j) {
    const auto row = static_cast<Eigen::Index>(j);
    try {
      Evaluation e = model.solve(members.row(row).transpose(), m, true);
      out.values.row(row) = e.value.transpose();
      out.design_jacobians[j] = std::move(e.design_jacobian);
    } catch (const std::exception& e) {
      throw MemberEvaluationError(j, e.what());
    }
  });
  counter.add(static_cast<std::uint64_t>(n));
  return out;
}

Point2 design_loglik_grad(const ForwardModel& model, const Vector& theta, const Vector& y, const Measurement& m,
                          EvalCounter& counter) {
  const Evaluation e = eval_forward_with_design_gradient(model, theta, m, counter);
  if (y.size() != e.value.size()) throw DimensionMismatch("design_loglik_grad: observation dimension mismatch");
  const Matrix noise = model.noise_cov(m);
  const Vector a = noise.llt().solve(y - e.value);
  return (e.design_jacobian.transpose() * a);
}

}  // namespace gppbed
