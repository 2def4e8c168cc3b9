#include <doctest.h>

#include <cmath>
#include <numeric>

#include "riskbench/calibration_metrics.hpp"
#include "riskbench/error.hpp"
#include "riskbench/synth_harness.hpp"
#include "test_util.hpp"

using namespace riskbench;
using nlohmann::json;

namespace {

const CodebookConfig& codebook() {
  static const CodebookConfig cb = load_codebook(testutil::data_dir() / "codebook");
  return cb;
}

const TaskDefinition& income() {
  static const TaskDefinition task = resolve_task("ACSIncome", testutil::data_dir() / "tasks");
  return task;
}

const SyntheticSpec& acs_spec() {
  static const SyntheticSpec spec = load_synthetic_spec(testutil::data_dir() / "synthetic" / "acs_income_oracle.json");
  return spec;
}

SyntheticSpec table_spec(std::size_t n, double p_male, double p_female, std::uint64_t seed = 1) {
  return synthetic_spec_from_json(json{
      {"n", n},
      {"seed", seed},
      {"features", {{{"name", "SEX"}, {"values", {1, 2}}, {"probs", {0.5, 0.5}}}}},
      {"rule", {{"kind", "table"}, {"column", "SEX"}, {"table", {{"1", p_male}, {"2", p_female}}}}}});
}

std::vector<int> labels_of(const SyntheticPopulation& pop) {
  std::vector<int> y;
  for (const auto& t : pop.truth) y.push_back(t.y);
  return y;
}

double mean(const std::vector<int>& y) {
  return static_cast<double>(std::accumulate(y.begin(), y.end(), 0)) / static_cast<double>(y.size());
}

}  // namespace

TEST_CASE("label prevalence follows the probability rule") {
  SUBCASE("p = 0 gives no positives") {
    const auto pop = generate_population(table_spec(1000, 0.0, 0.0));
    CHECK(mean(labels_of(pop)) == 0.0);
  }
  SUBCASE("p = 1/2") {
    const auto pop = generate_population(table_spec(10000, 0.5, 0.5));
    CHECK(std::fabs(mean(labels_of(pop)) - 0.5) < 0.015);
  }
  SUBCASE("two strata") {
    const auto pop = generate_population(table_spec(20000, 0.2, 0.7));
    const auto sex = pop.dataset.column("SEX");
    double pos[3] = {0, 0, 0};
    double count[3] = {0, 0, 0};
    for (std::size_t i = 0; i < pop.truth.size(); ++i) {
      const auto s = static_cast<int>(sex[i]);
      count[s] += 1;
      pos[s] += pop.truth[i].y;
      CHECK(pop.truth[i].p == (s == 1 ? 0.2 : 0.7));
    }
    CHECK(std::fabs(pos[1] / count[1] - 0.2) < 0.02);
    CHECK(std::fabs(pos[2] / count[2] - 0.7) < 0.02);
  }
}

TEST_CASE("population generation is deterministic and seeded") {
  SyntheticSpec spec = acs_spec();
  spec.n = 500;
  const auto a = generate_population(spec);
  const auto b = generate_population(spec);
  for (std::size_t i = 0; i < 500; ++i) {
    CHECK(a.truth[i].y == b.truth[i].y);
    CHECK(a.truth[i].p == b.truth[i].p);
    CHECK(a.truth[i].row_id == i);
  }
  spec.seed += 1;
  const auto c = generate_population(spec);
  std::size_t differ = 0;
  for (std::size_t i = 0; i < 500; ++i) differ += a.truth[i].p != c.truth[i].p ? 1 : 0;
  CHECK(differ > 100);
  CHECK(a.dataset.has_column("SYNTH_Y"));
}

TEST_CASE("marginal probabilities") {
  SyntheticSpec spec = acs_spec();
  spec.n = 2000;
  const auto pop = generate_population(spec);
  std::vector<std::string> all;
  for (const auto& f : spec.features) all.push_back(f.name);

  SUBCASE("with every feature visible they equal the generating probabilities") {
    const auto p = marginal_probabilities(spec, pop.dataset, all);
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(pop.truth[i].p).epsilon(1e-12));
  }
  SUBCASE("one hidden feature matches a brute-force average") {
    std::vector<std::string> visible(all.begin(), all.end() - 1);
    const auto& hidden = spec.features.back();
    const auto& rule = std::get<LogisticRule>(spec.rule);
    const auto p = marginal_probabilities(spec, pop.dataset, visible);
    for (std::size_t i = 0; i < 50; ++i) {
      double z = rule.intercept;
      for (const auto& name : visible) {
        const auto it = rule.coefficients.find(name);
        if (it != rule.coefficients.end()) z += it->second * pop.dataset.column(name)[i];
      }
      const double w = rule.coefficients.at(hidden.name);
      double expected = 0.0;
      for (std::size_t k = 0; k < hidden.values.size(); ++k) {
        expected += hidden.probability_of_index(k) / (1.0 + std::exp(-(z + w * hidden.values[k])));
      }
      CHECK(p[i] == doctest::Approx(expected).epsilon(1e-12));
    }
  }
  SUBCASE("nothing visible gives the population mean") {
    const auto p = marginal_probabilities(spec, pop.dataset, {});
    for (double v : p) CHECK(v == p.front());
  }
}

TEST_CASE("discrimination grows with nested visible feature sets") {
  SyntheticSpec spec = acs_spec();
  spec.n = 20000;
  const auto pop = generate_population(spec);
  const auto y = labels_of(pop);
  const std::vector<std::string> order = {"SCHL", "SEX", "AGEP", "WKHP", "RELP", "MAR", "RAC1P", "COW", "OCCP", "POBP"};
  std::vector<std::string> visible;
  double previous = auc(marginal_probabilities(spec, pop.dataset, visible), y);
  CHECK(previous == doctest::Approx(0.5));
  for (const auto& name : order) {
    visible.push_back(name);
    const double current = auc(marginal_probabilities(spec, pop.dataset, visible), y);
    CAPTURE(name);
    // Small slack for sampling noise on features with tiny effects.
    CHECK(current >= previous - 2e-3);
    previous = current;
  }
  CHECK(previous > 0.75);
}

TEST_CASE("oracle run recovers the oracle probabilities exactly") {
  SyntheticSpec spec = acs_spec();
  spec.n = 1000;
  SUBCASE("multiple choice with leakage") {
    OracleRunOptions options;
    options.leakage = 0.7;
    const auto run = end_to_end_oracle_run(spec, income(), codebook(), options);
    CHECK(run.excluded == 0);
    REQUIRE(run.scores.size() == run.oracle_p.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < run.scores.size(); ++i) worst = std::max(worst, std::fabs(run.scores[i] - run.oracle_p[i]));
    CHECK(worst < 1e-12);
  }
  SUBCASE("numeric lands on the two-digit grid") {
    OracleRunOptions options;
    options.scheme = PromptScheme::numeric;
    const auto run = end_to_end_oracle_run(spec, income(), codebook(), options);
    CHECK(run.excluded == 0);
    for (std::size_t i = 0; i < run.scores.size(); ++i) {
      const double expected = static_cast<double>(std::min(99LL, std::llround(100.0 * run.oracle_p[i]))) / 100.0;
      CHECK(run.scores[i] == doctest::Approx(expected).epsilon(1e-12));
    }
  }
}

TEST_CASE("calibration error shrinks with sample size") {
  int wins = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SyntheticSpec spec = acs_spec();
    spec.seed = 100 + seed;
    spec.n = 2000;
    const auto small = end_to_end_oracle_run(spec, income(), codebook(), {});
    spec.n = 20000;
    const auto large = end_to_end_oracle_run(spec, income(), codebook(), {});
    wins += large.report.ece_equal_width < small.report.ece_equal_width ? 1 : 0;
  }
  CHECK(wins >= 9);
}

TEST_CASE("oracle task shape") {
  const auto task = make_oracle_task(income(), acs_spec());
  CHECK(task.task_id == "ACSIncome-synthetic");
  CHECK(task.target_column == "SYNTH_Y");
  CHECK(task.population_filter.empty());
  CHECK(task.question_text == income().question_text);
  CHECK(task.group_column == std::optional<std::string>("RAC1P"));
  CHECK(task.feature_columns.size() == acs_spec().features.size());
}

TEST_CASE("ground truth csv") {
  testutil::TempDir dir("truth");
  const std::vector<GroundTruthRecord> truth = {{0, 0.25, 1}, {1, 0.5, 0}};
  write_ground_truth_csv(dir / "truth.csv", truth);
  CHECK(testutil::read_file(dir / "truth.csv") == "row_id,p,y\n0,0.25,1\n1,0.5,0\n");
}

TEST_CASE("invalid specs are rejected") {
  const json good = {{"n", 10},
                     {"features", {{{"name", "SEX"}, {"values", {1, 2}}}}},
                     {"rule", {{"kind", "logistic"}, {"intercept", 0.0}, {"coefficients", {{"SEX", 1.0}}}}}};
  CHECK_NOTHROW(synthetic_spec_from_json(good));
  auto unknown = good;
  unknown["rule"]["coefficients"] = {{"AGEP", 1.0}};
  CHECK_THROWS_AS(synthetic_spec_from_json(unknown), SpecError);
  auto bad_probs = good;
  bad_probs["features"][0]["probs"] = {0.3, 0.3};
  CHECK_THROWS_AS(synthetic_spec_from_json(bad_probs), SpecError);
  auto bad_kind = good;
  bad_kind["rule"]["kind"] = "forest";
  CHECK_THROWS_AS(synthetic_spec_from_json(bad_kind), SpecError);
  auto missing_entry = good;
  missing_entry["rule"] = {{"kind", "table"}, {"column", "SEX"}, {"table", {{"1", 0.5}}}};
  CHECK_THROWS_AS(synthetic_spec_from_json(missing_entry), SpecError);
  auto out_of_range = good;
  out_of_range["rule"] = {{"kind", "table"}, {"column", "SEX"}, {"table", {{"1", 0.5}, {"2", 1.5}}}};
  CHECK_THROWS_AS(synthetic_spec_from_json(out_of_range), SpecError);
  auto collide = good;
  collide["label_column"] = "SEX";
  CHECK_THROWS_AS(synthetic_spec_from_json(collide), SpecError);
}
