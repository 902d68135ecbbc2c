#include "gppbed/config.hpp"
#include "gppbed/errors.hpp"
#include "gppbed/experiments.hpp"
#include "gppbed/parallel.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

namespace fs = std::filesystem;
using namespace gppbed;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::string out;
  long threads = 0;
  bool has_threads = false;
};

RunConfig resolve(const Flags& f) {
  RunConfig cfg = f.config.empty() ? default_config(Experiment::kParametric) : load_config(f.config);
  if (f.has_seed) cfg.seed = f.seed;
  if (!f.out.empty()) cfg.output_dir = f.out;
  if (f.has_threads) cfg.threads = f.threads;
  validate_config(cfg);
  if (cfg.threads > 0) set_thread_count(static_cast<std::size_t>(cfg.threads));
  return cfg;
}

void write_error(const fs::path& out, const std::string& kind, const std::string& message) {
  std::error_code ec;
  fs::create_directories(out, ec);
  std::ofstream os(out / "error.json");
  if (os) os << nlohmann::json{{"error", kind}, {"message", message}}.dump(2) << '\n';
}

template <typename Fn>
int execute(const Flags& flags, Fn&& body) {
  RunConfig cfg;
  try {
    cfg = resolve(flags);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }
  const fs::path out = cfg.output_dir;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw ConfigError("output directory '" + out.string() + "' is not writable");
    std::ofstream(out / "config.txt") << canonical_config(cfg);
    write_manifest(out, cfg, "running", RunOutcome{{}, {}, {"config.txt"}}, 0.0);
    RunOutcome outcome = body(cfg, out);
    outcome.files.insert(outcome.files.begin(), "config.txt");
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_manifest(out, cfg, "complete", outcome, wall);
    std::cout << experiment_name(cfg.experiment) << ": " << outcome.files.size() << " files in " << out.string()
              << ", " << outcome.model_cost << " model solves, " << wall << " s\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const AllWeightsUnderflow& e) {
    write_error(out, "AllWeightsUnderflow", e.what());
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const Error& e) {
    write_error(out, "numerical", e.what());
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  }
}

int report(const std::string& dir) {
  const fs::path out = dir;
  std::ifstream in(out / "manifest.json");
  if (!in) {
    std::cerr << "no manifest.json in " << dir << '\n';
    return kExitConfig;
  }
  nlohmann::json m;
  try {
    in >> m;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "unreadable manifest: " << e.what() << '\n';
    return kExitConfig;
  }
  std::cout << "experiment     " << m.value("experiment", "?") << '\n'
            << "status         " << m.value("status", "?") << '\n'
            << "seed           " << m.value("seed", 0ULL) << '\n'
            << "config hash    " << m.value("config_hash", "?") << '\n'
            << "model solves   " << m["forward_cost"].value("model", 0ULL) << '\n'
            << "truth solves   " << m["forward_cost"].value("truth", 0ULL) << '\n'
            << "wall time [s]  " << m.value("wall_time_seconds", 0.0) << '\n';
  std::ifstream ledger(out / "cost_ledger.csv");
  if (ledger) {
    std::cout << "\ncost ledger\n";
    std::string line;
    while (std::getline(ledger, line)) std::cout << "  " << line << '\n';
  }
  if (std::ifstream err(out / "error.json"); err) {
    std::cout << "\nerror\n  " << std::string(std::istreambuf_iterator<char>(err), {}) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Grouped pooled-posterior Bayesian experimental design"};
  app.require_subcommand(1);
  Flags flags;
  auto add_flags = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "key = value configuration file");
    sub->add_option_function<std::uint64_t>(
        "--seed", [&](const std::uint64_t& v) { flags.seed = v; flags.has_seed = true; }, "seed (overrides the config)");
    sub->add_option("--out", flags.out, "output directory (overrides the config)");
    sub->add_option_function<long>(
        "--threads", [&](const long& v) { flags.threads = v; flags.has_threads = true; },
        "worker threads (default: GPPBED_THREADS or 1)");
  };
  CLI::App* run = app.add_subcommand("run", "run the configured experiment");
  add_flags(run);
  CLI::App* diag = app.add_subcommand("diagnose", "ESS and grouping report at a fixed design");
  add_flags(diag);
  CLI::App* rep = app.add_subcommand("report", "summarize an output directory");
  std::string report_dir;
  rep->add_option("--out", report_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  if (*run) return execute(flags, [](const RunConfig& c, const fs::path& o) { return run_experiment(c, o); });
  if (*diag) return execute(flags, [](const RunConfig& c, const fs::path& o) { return run_diagnose(c, o); });
  return report(report_dir);
}
