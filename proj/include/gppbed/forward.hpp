#pragma once

#include "gppbed/statcore.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <atomic>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

namespace gppbed {

using Point2 = Eigen::Vector2d;

/// One scalar (or d_y-vector) measurement: where, when, and with what noise variance.
struct Measurement {
  Point2 location{0.0, 0.0};
  double time = 0.05;
  double noise_variance = 0.0025;
};

/// Counts full forward solves. Thread-safe; increments commute.
class EvalCounter {
 public:
  EvalCounter() = default;
  EvalCounter(const EvalCounter&) = delete;
  EvalCounter& operator=(const EvalCounter&) = delete;

  void add(std::uint64_t n = 1) noexcept { count_.fetch_add(n, std::memory_order_relaxed); }
  std::uint64_t value() const noexcept { return count_.load(std::memory_order_relaxed); }

 private:
  std::atomic<std::uint64_t> count_{0};
};

/// Result of one forward solve: the prediction and, optionally, its Jacobian with respect
/// to the 2D design (d_y x 2).
struct Evaluation {
  Vector value;
  Matrix design_jacobian;
};

/// Parameter-to-observation map for a given measurement. Implementations are pure and
/// reentrant; callers account for cost through eval_forward and friends.
class ForwardModel {
 public:
  virtual ~ForwardModel() = default;

  virtual Eigen::Index param_dim() const = 0;
  virtual Eigen::Index output_dim() const = 0;
  virtual Matrix noise_cov(const Measurement& m) const = 0;
  /// Exactly one forward solve. The design Jacobian, when requested, must come from the
  /// same solve.
  virtual Evaluation solve(const Vector& theta, const Measurement& m, bool with_design_gradient) const = 0;
};

/// f_d(theta) = (A + d_x A_x + d_y A_y) theta with Gaussian noise. With A_x = A_y = 0 the
/// map does not depend on the design.
class LinearModel final : public ForwardModel {
 public:
  LinearModel(Matrix a, Gaussian noise);
  LinearModel(Matrix a, Matrix a_x, Matrix a_y, Gaussian noise);

  Eigen::Index param_dim() const override { return a_.cols(); }
  Eigen::Index output_dim() const override { return a_.rows(); }
  Matrix noise_cov(const Measurement&) const override { return noise_.cov(); }
  Evaluation solve(const Vector& theta, const Measurement& m, bool with_design_gradient) const override;

  /// The operator A(d) at a design.
  Matrix operator_at(const Point2& d) const;
  const Gaussian& noise() const noexcept { return noise_; }

 private:
  Matrix a_;
  Matrix a_x_;
  Matrix a_y_;
  Gaussian noise_;
};

/// Fully connected 2 -> 4 -> 4 -> 1 tanh network. Weight layout (37 values):
/// W1 (4x2, row-major), b1 (4), W2 (4x4, row-major), b2 (4), W3 (1x4), b3 (1).
class MlpCorrection {
 public:
  static constexpr std::size_t kInputs = 2;
  static constexpr std::size_t kHidden = 4;
  static constexpr std::size_t kParameterCount =
      kHidden * kInputs + kHidden + kHidden * kHidden + kHidden + kHidden + 1;
  static_assert(kParameterCount == 37);

  MlpCorrection() { weights_.fill(0.0); }
  explicit MlpCorrection(const Vector& weights);

  Vector weights() const;
  void set_weights(const Vector& weights);

  double eval(double x0, double x1) const;

  struct ValueAndGradient {
    double value;
    Vector grad;  // with respect to the 37 weights
  };
  ValueAndGradient eval_and_grad(double x0, double x1) const;

  friend bool operator==(const MlpCorrection& a, const MlpCorrection& b) { return a.weights_ == b.weights_; }

 private:
  std::array<double, kParameterCount> weights_{};
};

void to_json(nlohmann::json& j, const MlpCorrection& c);
void from_json(const nlohmann::json& j, MlpCorrection& c);

MlpCorrection::ValueAndGradient mlp_eval_and_grad(const MlpCorrection& c, const Point2& input);

enum class SourceKind { kGaussian, kRational };

/// Source term parameters theta = (theta_x, theta_y, theta_h, theta_s).
struct SourceSpec {
  SourceKind kind = SourceKind::kGaussian;
  double x = 0.25;
  double y = 0.25;
  double width = 0.1;
  double strength = 2.0;

  double evaluate(double zx, double zy) const;
};

struct PdeConfig {
  int nx = 64;
  int ny = 64;
  double z_lo = -3.0;
  double z_hi = 2.0;
  double diffusion = 1.0;
  /// v(t) = (rate * t, rate * t).
  double velocity_rate = 50.0;
  double t_end = 0.1;
  /// Base time steps are chosen to divide this interval (stage times are multiples of it).
  double time_quantum = 0.005;
  double cfl_safety = 0.9;
  /// Design finite-difference step as a fraction of the cell width.
  double design_step_fraction = 0.25;

  double dx() const { return (z_hi - z_lo) / (nx - 1); }
  double dy() const { return (z_hi - z_lo) / (ny - 1); }
};

/// Concentration on the (nx x ny) node grid, row-major with x fastest.
class Field {
 public:
  Field(PdeConfig config, std::vector<double> values, double time);

  double at(int ix, int iy) const { return values_[static_cast<std::size_t>(iy) * config_.nx + ix]; }
  const std::vector<double>& values() const noexcept { return values_; }
  double time() const noexcept { return time_; }
  const PdeConfig& config() const noexcept { return config_; }

  bool contains(const Point2& p) const;
  /// Bilinear interpolation; OutOfDomain outside the grid.
  double interpolate(const Point2& p) const;
  /// Central differences of the interpolant with step h.
  Point2 gradient(const Point2& p, double h) const;

  /// Row-major CSV with header "iy,ix,z_x[L],z_y[L],u[C]".
  void write_csv(std::ostream& os) const;

 private:
  PdeConfig config_;
  std::vector<double> values_;
  double time_;
};

/// Which entries of the source/correction the parameter vector theta controls.
enum class Unknowns {
  kLocation,        // theta = (theta_x, theta_y)
  kStrength,        // theta = (theta_s)
  kNetworkWeights,  // theta = 37 correction weights
  kFull             // theta = (theta_x, theta_y, theta_h, theta_s)
};

/// 2D convection-diffusion u_t = D lap u - v(t).grad u + S + NN on [z_lo, z_hi]^2, zero
/// initial condition, homogeneous Neumann boundaries; explicit Euler, central diffusion,
/// first-order upwind convection.
class PdeModel final : public ForwardModel {
 public:
  PdeModel(PdeConfig config, SourceSpec base, Unknowns unknowns,
           std::optional<MlpCorrection> correction = std::nullopt);

  Eigen::Index param_dim() const override;
  Eigen::Index output_dim() const override { return 1; }
  Matrix noise_cov(const Measurement& m) const override;
  Evaluation solve(const Vector& theta, const Measurement& m, bool with_design_gradient) const override;

  /// Full fields at each requested time from a single march (one solve).
  std::vector<Field> solve_fields(const Vector& theta, const std::vector<double>& times) const;
  Field solve_field(const Vector& theta, double time) const;
  /// Source (plus correction) sampled on the grid nodes.
  std::vector<double> source_field(const Vector& theta) const;
  /// Marches an arbitrary nodal source from u = 0 (one solve).
  std::vector<Field> march(const std::vector<double>& source, const std::vector<double>& times) const;

  const PdeConfig& config() const noexcept { return config_; }
  const SourceSpec& base_source() const noexcept { return base_; }
  const std::optional<MlpCorrection>& correction() const noexcept { return correction_; }
  Unknowns unknowns() const noexcept { return unknowns_; }

  PdeModel with_unknowns(Unknowns u) const;
  PdeModel with_source(const SourceSpec& s) const;
  PdeModel with_correction(std::optional<MlpCorrection> c) const;

  /// Source/correction implied by theta under this model's Unknowns.
  SourceSpec source_for(const Vector& theta) const;
  std::optional<MlpCorrection> correction_for(const Vector& theta) const;

  double base_time_step() const noexcept { return dt_; }
  double design_step() const noexcept { return config_.design_step_fraction * std::min(config_.dx(), config_.dy()); }

  void validate(const Measurement& m) const;

 private:
  PdeConfig config_;
  SourceSpec base_;
  Unknowns unknowns_;
  std::optional<MlpCorrection> correction_;
  double dt_;
};

/// Single forward evaluation (counter += 1).
Vector eval_forward(const ForwardModel& model, const Vector& theta, const Measurement& m, EvalCounter& counter);
Evaluation eval_forward_with_design_gradient(const ForwardModel& model, const Vector& theta, const Measurement& m,
                                              EvalCounter& counter);

/// Evaluates every member (counter += J), stores predictions on the ensemble and returns them.
Matrix eval_forward_batch(const ForwardModel& model, Ensemble& ensemble, const Measurement& m, EvalCounter& counter);

struct BatchEvaluation {
  Matrix values;                         // J x d_y
  std::vector<Matrix> design_jacobians;  // J entries, d_y x 2 each
};
BatchEvaluation eval_forward_batch_with_design_gradient(const ForwardModel& model, const Matrix& members,
                                                        const Measurement& m, EvalCounter& counter);

/// Partial design score (y - f_d(theta))^T Sigma^{-1} grad_d f_d(theta); one solve.
Point2 design_loglik_grad(const ForwardModel& model, const Vector& theta, const Vector& y, const Measurement& m,
                          EvalCounter& counter);

}  // namespace gppbed
