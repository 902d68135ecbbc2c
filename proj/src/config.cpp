#include "gppbed/config.hpp"

#include "gppbed/errors.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <set>
#include <sstream>

namespace gppbed {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(x))
    throw ConfigError("config key '" + key + "': expected a finite number, got '" + v + "'");
  return x;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int x{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError("config key '" + key + "': expected an integer, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string fmt(bool b) { return b ? "true" : "false"; }

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define GPPBED_DOUBLE(name, field) \
  Key{name, [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_double(k, v); }, \
      [](const RunConfig& c) { return fmt(static_cast<double>(c.field)); }}
#define GPPBED_INT(name, field) \
  Key{name, [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_int<decltype(c.field)>(k, v); }, \
      [](const RunConfig& c) { return std::to_string(c.field); }}
#define GPPBED_BOOL(name, field) \
  Key{name, [](RunConfig& c, const std::string& k, const std::string& v) { c.field = to_bool(k, v); }, \
      [](const RunConfig& c) { return fmt(c.field); }}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"experiment", [](RunConfig& c, const std::string&, const std::string& v) { c.experiment = parse_experiment(v); },
          [](const RunConfig& c) { return experiment_name(c.experiment); }},
      GPPBED_INT("seed", seed),
      GPPBED_INT("outer", outer),
      GPPBED_INT("inner", inner),
      GPPBED_INT("groups", groups),
      GPPBED_DOUBLE("threshold", threshold),
      GPPBED_DOUBLE("trigger_fraction", trigger_fraction),
      GPPBED_BOOL("grouping", grouping),
      GPPBED_BOOL("perturb", perturb),
      GPPBED_INT("nx", pde.nx),
      GPPBED_INT("ny", pde.ny),
      GPPBED_DOUBLE("diffusion", pde.diffusion),
      GPPBED_DOUBLE("velocity_rate", pde.velocity_rate),
      GPPBED_DOUBLE("t_end", pde.t_end),
      GPPBED_INT("stages", stages),
      GPPBED_DOUBLE("design_step", design_step),
      GPPBED_INT("design_iterations", design_iterations),
      GPPBED_DOUBLE("noise_variance", noise_variance),
      GPPBED_INT("grid", grid),
      GPPBED_INT("candidates", candidates),
      GPPBED_DOUBLE("sigma_e_strength", sigma_e_strength),
      GPPBED_DOUBLE("sigma_e_network", sigma_e_network),
      GPPBED_DOUBLE("initial_network_spread", initial_network_spread),
      GPPBED_DOUBLE("model_strength", model_strength),
      GPPBED_INT("training_steps", training_steps),
      GPPBED_DOUBLE("learning_rate", learning_rate),
      Key{"error_data",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            if (v == "current") c.error_data = ErrorData::kCurrent;
            else if (v == "accumulated") c.error_data = ErrorData::kAccumulated;
            else throw ConfigError("config key '" + k + "': expected current or accumulated, got '" + v + "'");
          },
          [](const RunConfig& c) { return std::string(c.error_data == ErrorData::kCurrent ? "current" : "accumulated"); }},
      GPPBED_BOOL("random_error_design", random_error_design),
      GPPBED_DOUBLE("truth_x", truth.x),
      GPPBED_DOUBLE("truth_y", truth.y),
      GPPBED_DOUBLE("truth_width", truth.width),
      GPPBED_DOUBLE("truth_strength", truth.strength),
      Key{"design_x", [](RunConfig& c, const std::string& k, const std::string& v) { c.design.x() = to_double(k, v); },
          [](const RunConfig& c) { return fmt(c.design.x()); }},
      Key{"design_y", [](RunConfig& c, const std::string& k, const std::string& v) { c.design.y() = to_double(k, v); },
          [](const RunConfig& c) { return fmt(c.design.y()); }},
      GPPBED_DOUBLE("measurement_time", measurement_time),
      GPPBED_INT("std_repeats", std_repeats),
      GPPBED_INT("toy_outer", toy_outer),
      GPPBED_DOUBLE("toy_gain", toy_gain),
      GPPBED_DOUBLE("toy_prior_mean", toy_prior_mean),
      GPPBED_DOUBLE("toy_prior_variance", toy_prior_variance),
      Key{"output_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.output_dir = v; },
          [](const RunConfig& c) { return c.output_dir; }},
      GPPBED_INT("threads", threads),
  };
  return table;
}

#undef GPPBED_DOUBLE
#undef GPPBED_INT
#undef GPPBED_BOOL

const Key* find_key(const std::string& name) {
  for (const auto& k : keys())
    if (name == k.name) return &k;
  return nullptr;
}

}  // namespace

Experiment parse_experiment(const std::string& s) {
  if (s == "parametric") return Experiment::kParametric;
  if (s == "structural") return Experiment::kStructural;
  if (s == "linear-toy") return Experiment::kLinearToy;
  if (s == "diagnostics") return Experiment::kDiagnostics;
  throw ConfigError("unknown experiment '" + s + "' (parametric, structural, linear-toy, diagnostics)");
}

std::string experiment_name(Experiment e) {
  switch (e) {
    case Experiment::kParametric: return "parametric";
    case Experiment::kStructural: return "structural";
    case Experiment::kLinearToy: return "linear-toy";
    case Experiment::kDiagnostics: return "diagnostics";
  }
  return "parametric";
}

RunConfig default_config(Experiment e) {
  RunConfig c;
  c.experiment = e;
  switch (e) {
    case Experiment::kParametric:
      break;
    case Experiment::kStructural:
      c.outer = 500;
      c.inner = 500;
      c.grouping = true;
      break;
    case Experiment::kLinearToy:
      c.outer = 2000;
      c.inner = 4000;
      c.grouping = true;
      break;
    case Experiment::kDiagnostics:
      c.outer = 500;
      c.inner = 500;
      c.grouping = true;
      c.sigma_e_network = 1.0;
      break;
  }
  return c;
}

RunConfig parse_config(std::istream& is) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!find_key(key)) throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (!seen.insert(key).second) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    entries.emplace_back(key, value);
  }
  RunConfig cfg;
  for (const auto& [k, v] : entries)
    if (k == "experiment") cfg = default_config(parse_experiment(v));
  for (const auto& [k, v] : entries) find_key(k)->set(cfg, k, v);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return parse_config(in);
}

void validate_config(const RunConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  require(c.outer >= 1, "outer must be >= 1");
  require(c.inner >= 2, "inner must be >= 2");
  require(c.groups >= 1, "groups must be >= 1");
  require(c.threshold >= 0.0, "threshold must be >= 0 (0 selects the parameter dimension)");
  require(c.trigger_fraction >= 0.0 && c.trigger_fraction <= 1.0, "trigger_fraction must lie in [0, 1]");
  require(c.pde.nx >= 16 && c.pde.ny >= 16, "nx and ny must be >= 16");
  require(c.pde.diffusion > 0.0, "diffusion must be positive");
  require(c.pde.t_end > 0.0, "t_end must be positive");
  require(c.stages >= 1, "stages must be >= 1");
  require(c.design_step >= 0.0, "design_step must be >= 0");
  require(c.design_iterations >= 1, "design_iterations must be >= 1");
  require(c.noise_variance > 0.0, "noise_variance must be positive");
  require(c.grid >= 1, "grid must be >= 1");
  require(c.candidates >= 1, "candidates must be >= 1");
  require(c.sigma_e_strength > 0.0 && c.sigma_e_network > 0.0, "error-prior spreads must be positive");
  require(c.initial_network_spread >= 0.0, "initial_network_spread must be >= 0");
  require(c.training_steps >= 0, "training_steps must be >= 0");
  require(c.learning_rate >= 0.0, "learning_rate must be >= 0");
  require(c.truth.width > 0.0, "truth_width must be positive");
  require(c.measurement_time > 0.0 && c.measurement_time <= c.pde.t_end, "measurement_time must lie in (0, t_end]");
  require(c.std_repeats == 0 || c.std_repeats >= 5, "std_repeats must be 0 or >= 5");
  require(c.toy_outer >= 1, "toy_outer must be >= 1");
  require(c.toy_prior_variance > 0.0, "toy_prior_variance must be positive");
  require(!c.output_dir.empty(), "output_dir must not be empty");
  require(c.threads >= 0, "threads must be >= 0");
  const SeqConfig s = to_seq_config(c);
  const double last = s.first_time + s.time_step * s.stages;
  if (c.experiment == Experiment::kParametric || c.experiment == Experiment::kStructural)
    require(last <= c.pde.t_end + 1e-12, "final stage time exceeds t_end");
}

std::string canonical_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + " = " + k.get(cfg) + "\n";
  return out;
}

std::string config_hash(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char ch : canonical_config(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

SeqConfig to_seq_config(const RunConfig& c) {
  SeqConfig s;
  s.discrepancy = c.experiment == Experiment::kParametric ? DiscrepancyCase::kParametric : DiscrepancyCase::kStructural;
  s.pde = c.pde;
  s.truth = c.truth;
  s.model_strength = c.model_strength;
  s.initial_network_spread = c.initial_network_spread;
  s.noise_variance = c.noise_variance;
  s.grid = c.grid;
  s.candidates = c.candidates;
  s.stages = c.stages;
  s.sigma_e_strength = c.sigma_e_strength;
  s.sigma_e_network = c.sigma_e_network;
  s.gpp.outer = c.outer;
  s.gpp.inner = c.inner;
  s.gpp.grouping = c.grouping;
  s.gpp.perturb = c.perturb;
  s.gpp.grouping_options.proposals = static_cast<std::size_t>(c.groups);
  s.gpp.grouping_options.trigger_fraction = c.trigger_fraction;
  const double dim = s.discrepancy == DiscrepancyCase::kParametric ? 1.0 : static_cast<double>(MlpCorrection::kParameterCount);
  s.gpp.grouping_options.threshold = c.threshold > 0.0 ? c.threshold : dim;
  s.design_step = c.design_step;
  s.design_iterations = c.design_iterations;
  s.training_steps = c.training_steps;
  s.learning_rate = c.learning_rate;
  s.error_data = c.error_data;
  s.random_error_design = c.random_error_design;
  s.seed = c.seed;
  return s;
}

}  // namespace gppbed
