#pragma once

#include "gppbed/seqbed.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace gppbed {

enum class Experiment { kParametric, kStructural, kLinearToy, kDiagnostics };

/// Run configuration. Parsed from a key = value file; unknown keys raise ConfigError.
struct RunConfig {
  Experiment experiment = Experiment::kParametric;
  std::uint64_t seed = 1;
  long outer = 180;
  long inner = 180;
  long groups = 3;
  double threshold = 0.0;  // S; 0 selects the parameter dimension
  double trigger_fraction = 0.05;
  bool grouping = false;
  bool perturb = true;
  PdeConfig pde;
  int stages = 3;
  double design_step = 0.002;
  int design_iterations = 3;
  double noise_variance = 0.0025;
  int grid = 50;
  int candidates = 11;
  double sigma_e_strength = 1.0;
  double sigma_e_network = 0.1;
  double initial_network_spread = 0.3;
  double model_strength = 3.0;
  int training_steps = 200;
  double learning_rate = 1e-3;
  ErrorData error_data = ErrorData::kAccumulated;
  bool random_error_design = false;
  SourceSpec truth{SourceKind::kGaussian, 0.23, 0.27, 0.1, 2.0};
  // Diagnostics / gradient-std settings for the error model at a fixed design.
  Point2 design{0.3, 0.3};
  double measurement_time = 0.055;
  long std_repeats = 0;
  // Linear toy.
  long toy_outer = 50;
  double toy_gain = 0.2;
  double toy_prior_mean = 3.0;
  double toy_prior_variance = 1.0;
  std::string output_dir = "out";
  long threads = 0;  // 0: environment default
};

/// Defaults that depend on the experiment (grouping, N, J) applied before file values.
RunConfig default_config(Experiment e);

Experiment parse_experiment(const std::string& s);
std::string experiment_name(Experiment e);

/// Reads key = value lines ('#' starts a comment). The experiment key, if present, selects
/// the defaults; every other key overrides one field.
RunConfig parse_config(std::istream& is);
RunConfig load_config(const std::string& path);

/// Checks counts and ranges; ConfigError on violation.
void validate_config(const RunConfig& cfg);

/// Canonical key = value listing of every field (stable order and formatting).
std::string canonical_config(const RunConfig& cfg);
/// FNV-1a 64 of the canonical listing, as 16 hex digits.
std::string config_hash(const RunConfig& cfg);

SeqConfig to_seq_config(const RunConfig& cfg);

}  // namespace gppbed
