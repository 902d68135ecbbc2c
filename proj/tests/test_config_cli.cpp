#include "gppbed/config.hpp"
#include "gppbed/errors.hpp"
#include "gppbed/experiments.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

using namespace gppbed;
namespace fs = std::filesystem;

namespace {

RunConfig parse(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gppbed_test_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Config, ParseOverridesDefaults) {
  const RunConfig c = parse("# comment\nexperiment = structural\nseed = 7\nouter=40  # trailing\ngrouping = false\n");
  EXPECT_EQ(c.experiment, Experiment::kStructural);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.outer, 40);
  EXPECT_EQ(c.inner, default_config(Experiment::kStructural).inner);
  EXPECT_FALSE(c.grouping);
}

TEST(Config, RejectsUnknownDuplicateAndMalformed) {
  EXPECT_THROW(parse("outre = 3\n"), ConfigError);
  EXPECT_THROW(parse("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(parse("outer = many\n"), ConfigError);
  EXPECT_THROW(parse("grouping = maybe\n"), ConfigError);
  EXPECT_THROW(parse("no equals sign\n"), ConfigError);
  try {
    parse("seed = 1\n\nbogus = 2\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
  }
}

TEST(Config, ValidationAndHash) {
  RunConfig c = default_config(Experiment::kParametric);
  EXPECT_NO_THROW(validate_config(c));
  c.inner = 1;
  EXPECT_THROW(validate_config(c), ConfigError);
  c = default_config(Experiment::kParametric);
  c.std_repeats = 3;
  EXPECT_THROW(validate_config(c), ConfigError);

  const RunConfig a = parse("seed = 3\n");
  const RunConfig b = parse("seed=3 # same\n");
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
  EXPECT_NE(config_hash(a), config_hash(parse("seed = 4\n")));
  EXPECT_EQ(canonical_config(parse(canonical_config(a))), canonical_config(a));
}

TEST(Config, ThresholdDefaultsToParameterDimension) {
  EXPECT_EQ(to_seq_config(default_config(Experiment::kParametric)).gpp.grouping_options.threshold, 1.0);
  EXPECT_EQ(to_seq_config(default_config(Experiment::kStructural)).gpp.grouping_options.threshold, 37.0);
  RunConfig c = default_config(Experiment::kStructural);
  c.threshold = 4.5;
  EXPECT_EQ(to_seq_config(c).gpp.grouping_options.threshold, 4.5);
}

TEST(Diagnose, CostIsOuterPlusInner) {
  RunConfig c = default_config(Experiment::kLinearToy);
  c.outer = 60;
  c.inner = 90;
  EvalCounter counter;
  const Diagnosis d = diagnose(error_problem(c), c.seed, counter);
  EXPECT_EQ(counter.value(), 150u);
  EXPECT_EQ(d.ledger.total(), 150u);
  EXPECT_EQ(d.proposals.grouping.ess.size(), 60u);
}

TEST(Diagnose, WeakDataGivesTrivialGrouping) {
  RunConfig c = default_config(Experiment::kLinearToy);
  c.outer = 50;
  c.inner = 100;
  c.toy_gain = 1e-3;
  EvalCounter counter;
  const Diagnosis d = diagnose(error_problem(c), c.seed, counter);
  EXPECT_FALSE(d.proposals.grouping.triggered);
  EXPECT_EQ(d.proposals.grouping.proposal_count(), 1u);
  EXPECT_EQ(d.proposals.grouping.ok.size(), 50u);
}

TEST(Diagnose, InformativeDataTriggersGrouping) {
  RunConfig c = default_config(Experiment::kLinearToy);
  c.outer = 200;
  c.inner = 200;
  c.toy_gain = 1.0;
  c.noise_variance = 1e-4;
  EvalCounter counter;
  const Diagnosis d = diagnose(error_problem(c), c.seed, counter);
  EXPECT_TRUE(d.proposals.grouping.triggered);
  EXPECT_GE(d.proposals.grouping.proposal_count(), 2u);
  EXPECT_EQ(d.proposals.proposals.size(), d.proposals.grouping.proposal_count());
  EXPECT_LE(d.proposals.grouping.proposal_count(), static_cast<std::size_t>(c.groups));
}

TEST(RunExperiment, RerunsAreByteIdentical) {
  RunConfig c = default_config(Experiment::kLinearToy);
  c.outer = 200;
  c.inner = 400;
  c.toy_outer = 20;
  const fs::path a = scratch("a"), b = scratch("b");
  const RunOutcome ra = run_experiment(c, a);
  const RunOutcome rb = run_experiment(c, b);
  EXPECT_EQ(ra.model_cost, rb.model_cost);
  ASSERT_EQ(ra.files, rb.files);
  ASSERT_FALSE(ra.files.empty());
  for (const auto& f : ra.files) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST(RunDiagnose, WritesReportFiles) {
  RunConfig c = default_config(Experiment::kLinearToy);
  c.outer = 40;
  c.inner = 40;
  const fs::path out = scratch("diag");
  const RunOutcome r = run_diagnose(c, out);
  EXPECT_EQ(r.model_cost, 80u);
  for (const char* f : {"ess.csv", "ess_histogram.csv", "grouping.json", "cost_ledger.csv"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  fs::remove_all(out);
}
