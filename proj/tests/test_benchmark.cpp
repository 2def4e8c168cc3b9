#include <doctest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "fake_server.hpp"
#include "riskbench/benchmark.hpp"
#include "riskbench/error.hpp"
#include "test_util.hpp"

#ifndef RISKBENCH_FIXTURE_DIR
#define RISKBENCH_FIXTURE_DIR "tests/fixtures"
#endif
#ifndef RISKBENCH_CLI
#define RISKBENCH_CLI "riskbench"
#endif

using namespace riskbench;
using nlohmann::json;

namespace {

const std::filesystem::path kFixtures = RISKBENCH_FIXTURE_DIR;

BenchmarkConfig base_config(const std::filesystem::path& results) {
  BenchmarkConfig c;
  c.tasks_dir = testutil::data_dir() / "tasks";
  c.codebook_dir = testutil::data_dir() / "codebook";
  c.results_dir = results;
  return c;
}

BenchmarkConfig golden_config(const std::filesystem::path& results) {
  BenchmarkConfig c = base_config(results);
  c.source = ModelSource::mock;
  c.mock_fixture = kFixtures / "golden" / "mock.json";
  c.data_dir = kFixtures / "golden" / "people.csv";
  c.feature_subset = {"SEX", "AGEP"};
  c.split.reset();
  c.endpoint.max_in_flight = 1;
  return c;
}

BenchmarkConfig oracle_config(const std::filesystem::path& results) {
  BenchmarkConfig c = base_config(results);
  c.source = ModelSource::oracle;
  c.oracle_spec = testutil::data_dir() / "synthetic" / "acs_income_oracle.json";
  c.split.reset();
  return c;
}

int run_cli(const std::string& args) {
  const std::string command = std::string(RISKBENCH_CLI) + " -q " + args + " > /dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string quoted(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

const std::vector<std::string> kMetricFiles = {"metrics.csv", "calibration_curve_equal_width.csv",
                                               "calibration_curve_quantile.csv", "score_histogram.csv",
                                               "group_metrics.csv"};

}  // namespace

TEST_CASE("oracle benchmark is well calibrated") {
  testutil::TempDir dir("oracle");
  const auto full = run_benchmark(oracle_config(dir / "full"));
  const auto& m = *full.evaluation.metrics;
  CHECK(m.n == 20000);
  CHECK(m.ece_equal_width <= 0.02);
  CHECK(full.evaluation.excluded == 0);
  REQUIRE(m.auc.has_value());

  auto weak = oracle_config(dir / "weak");
  weak.feature_subset = {"POBP", "RAC1P"};
  const auto sub = run_benchmark(weak);
  const auto& ms = *sub.evaluation.metrics;
  CHECK(ms.score_std < m.score_std);
  CHECK(*ms.auc < *m.auc);
  CHECK(ms.ece_equal_width <= 0.02);

  for (const auto& name : kMetricFiles) CHECK(std::filesystem::exists(dir / "full" / name));
  for (const auto& name : {"report.json", "run_stats.json", "scored_records.csv"}) {
    CHECK(std::filesystem::exists(dir / "full" / name));
  }
}

TEST_CASE("mock benchmark report is byte stable") {
  testutil::TempDir dir("golden");
  const auto result = run_benchmark(golden_config(dir.path()));
  CHECK(result.evaluation.scored == 4);
  CHECK(result.evaluation.flag_counts.at(std::string(kFlagSingleOrder)) == 1);
  const auto report = testutil::read_file(dir / "report.json");
  const auto expected_path = kFixtures / "golden" / "expected_report.json";
  if (std::getenv("RISKBENCH_UPDATE_GOLDEN") != nullptr) testutil::write_file(expected_path, report);
  CHECK(report == testutil::read_file(expected_path));

  const auto records = read_records_csv(dir / "scored_records.csv");
  REQUIRE(records.scored.size() == 4);
  // Row 0: positive-first gives .2/.9, negative-first gives .3/.9.
  CHECK(records.scored[0].score == doctest::Approx((0.2 / 0.9 + 0.3 / 0.9) / 2.0));
  CHECK(records.scored[3].score == doctest::Approx(0.35 / 0.95));
  CHECK(records.scored[0].split == "all");
}

TEST_CASE("cached re-run makes no model calls and reproduces the report") {
  testutil::TempDir dir("rerun");
  auto config = golden_config(dir / "a");
  config.cache_dir = dir / "cache";
  const auto first = run_benchmark(config);
  CHECK(first.stats.model_calls == 8);
  CHECK(first.stats.cache_misses == 8);
  config.results_dir = dir / "b";
  const auto second = run_benchmark(config);
  CHECK(second.stats.model_calls == 0);
  CHECK(second.stats.cache_hits == 8);
  CHECK(testutil::read_file(dir / "a" / "report.json") == testutil::read_file(dir / "b" / "report.json"));
}

TEST_CASE("metric files can be rebuilt from the records alone") {
  testutil::TempDir dir("reeval");
  auto config = oracle_config(dir / "run");
  config.split = SplitSpec{};
  config.fit_threshold = true;
  config.subsample = 1000;
  const auto result = run_benchmark(config);
  CHECK(result.evaluation.tau_fitted);

  const auto records = read_records_csv(dir / "run" / "scored_records.csv");
  const auto ev = evaluate_records(records, {config.bins, true, 0.5, true});
  std::filesystem::create_directories(dir / "again");
  write_metric_files(dir / "again", ev);
  for (const auto& name : kMetricFiles) {
    CAPTURE(name);
    CHECK(testutil::read_file(dir / "run" / name) == testutil::read_file(dir / "again" / name));
  }

  const auto no_groups = evaluate_records(records, {config.bins, true, 0.5, false});
  write_metric_files(dir / "again", no_groups);
  CHECK_FALSE(std::filesystem::exists(dir / "again" / "group_metrics.csv"));
  CHECK(std::filesystem::exists(dir / "again" / "metrics.csv"));
}

TEST_CASE("disabled grouping omits the group table") {
  testutil::TempDir dir("nogroup");
  auto config = golden_config(dir.path());
  config.group_column = "";
  const auto result = run_benchmark(config);
  CHECK_FALSE(result.evaluation.groups.has_value());
  CHECK_FALSE(std::filesystem::exists(dir / "group_metrics.csv"));
  CHECK(result.report.contains("group_note"));
}

TEST_CASE("unwritable results directory fails before any request") {
  testutil::TempDir dir("unwritable");
  testutil::write_file(dir / "blocker", "x");
  testutil::FakeServer server({200});
  auto config = base_config(dir / "blocker" / "results");
  config.endpoint.base_url = server.url();
  config.model_id = "m";
  config.data_dir = kFixtures / "golden" / "people.csv";
  CHECK_THROWS_AS(run_benchmark(config), IoError);
  CHECK(server.hits() == 0);
}

TEST_CASE("endpoint without logprobs stops the run") {
  testutil::TempDir dir("capability");
  testutil::FakeServer server({200}, json{{"choices", {{{"text", "A"}}}}});
  auto config = golden_config(dir.path());
  config.source = ModelSource::endpoint;
  config.endpoint.base_url = server.url();
  config.model_id = "m";
  try {
    run_benchmark(config);
    FAIL("expected CapabilityError");
  } catch (const CapabilityError& e) {
    CHECK(exit_code_for(e) == 3);
  }
}

TEST_CASE("config digest follows semantic fields only") {
  const auto a = golden_config("/tmp/one");
  auto b = a;
  b.results_dir = "/tmp/two";
  b.cache_dir = "/tmp/cache";
  b.endpoint.max_in_flight = 16;
  b.endpoint.api_key_env = "OTHER_KEY";
  CHECK(config_digest(a) == config_digest(b));
  auto c = a;
  c.bins = 15;
  CHECK(config_digest(a) != config_digest(c));
  auto d = a;
  d.seed = 1;
  CHECK(config_digest(a) != config_digest(d));
  auto e = a;
  e.scheme = PromptScheme::numeric;
  CHECK(config_digest(a) != config_digest(e));
}

TEST_CASE("config documents") {
  const auto c = benchmark_config_from_json(json{{"task", "ACSEmployment"}, {"bins", 20}, {"split", "none"},
                                                 {"endpoint", "http://localhost:1/v1"}, {"model", "m"}});
  CHECK(c.task_id == "ACSEmployment");
  CHECK(c.bins == 20);
  CHECK_FALSE(c.split.has_value());
  CHECK(c.source == ModelSource::endpoint);
  CHECK_THROWS_AS(benchmark_config_from_json(json{{"api_key", "sk-secret"}}), ConfigError);
  CHECK_THROWS_AS(benchmark_config_from_json(json{{"token", "sk-secret"}}), ConfigError);
  CHECK_THROWS_AS(benchmark_config_from_json(json{{"bins", "ten"}}), ConfigError);
}

TEST_CASE("threshold fitting without a split is rejected") {
  testutil::TempDir dir("nosplit");
  auto config = golden_config(dir.path());
  config.fit_threshold = true;
  CHECK_THROWS_AS(run_benchmark(config), ConfigError);
}

TEST_CASE("command line exit codes") {
  testutil::TempDir dir("cli");
  const auto spec = testutil::data_dir() / "synthetic" / "acs_income_oracle.json";
  const auto golden = kFixtures / "golden";

  CHECK(run_cli("run --oracle " + quoted(spec) + " --split none --subsample 300 --results-dir " +
                quoted(dir / "ok")) == 0);
  CHECK(std::filesystem::exists(dir / "ok" / "report.json"));
  CHECK(run_cli("evaluate --records " + quoted(dir / "ok" / "scored_records.csv") + " --results-dir " +
                quoted(dir / "ok2")) == 0);

  CHECK(run_cli("run --no-such-flag") == 2);
  testutil::write_file(dir / "secret.json", R"({"api_key": "sk-123"})");
  CHECK(run_cli("run --config " + quoted(dir / "secret.json") + " --results-dir " + quoted(dir / "x")) == 2);
  CHECK(run_cli("run --task NoSuchTask --oracle " + quoted(spec) + " --results-dir " + quoted(dir / "x")) == 2);

  // One row in four answers with neither letter: 25% excluded.
  auto doc = json::parse(testutil::read_file(golden / "mock.json"));
  for (auto& entry : doc["entries"]) {
    if (entry["prompt"].get<std::string>().find("Age is: 45 years old.") != std::string::npos) {
      entry["completion"] = json::array({{{"position", 0}, {"entries", json::array({json::array({"\n", 0.9})})}}});
    }
  }
  testutil::write_file(dir / "mostly.json", doc.dump());
  CHECK(run_cli("run --mock " + quoted(dir / "mostly.json") + " --data-dir " + quoted(golden / "people.csv") +
                " --features SEX,AGEP --split none --max-in-flight 1 --results-dir " + quoted(dir / "excl")) == 4);
  CHECK(std::filesystem::exists(dir / "excl" / "report.json"));

  testutil::write_file(dir / "blocker", "x");
  CHECK(run_cli("run --oracle " + quoted(spec) + " --split none --results-dir " + quoted(dir / "blocker" / "r")) == 5);

  testutil::FakeServer server({200}, json{{"choices", {{{"text", "A"}}}}});
  CHECK(run_cli("run --endpoint " + server.url() + " --model m --data-dir " + quoted(golden / "people.csv") +
                " --features SEX,AGEP --split none --results-dir " + quoted(dir / "cap")) == 3);
}
