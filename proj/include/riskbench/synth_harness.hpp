#pragma once

// Synthetic populations with known P(Y=1 | x), and oracle runs over them.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "riskbench/calibration_metrics.hpp"
#include "riskbench/risk_scoring.hpp"
#include "riskbench/tabular_data.hpp"
#include "riskbench/task.hpp"
#include "riskbench/text_encoding.hpp"

namespace riskbench {

/// A discrete feature drawn independently of the others.
struct SyntheticFeature {
  std::string name;
  ColumnKind kind = ColumnKind::categorical;
  std::vector<double> values;
  /// Same length as `values`; empty means uniform.
  std::vector<double> probs;

  double probability_of_index(std::size_t i) const;
};

/// p = sigmoid(intercept + sum_j coefficient_j * x_j)
struct LogisticRule {
  double intercept = 0.0;
  std::map<std::string, double> coefficients;
};

/// p = table[x_column]
struct TableRule {
  std::string column;
  std::map<double, double> table;
};

struct SyntheticSpec {
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  std::vector<SyntheticFeature> features;
  std::variant<LogisticRule, TableRule> rule;
  std::string label_column = "SYNTH_Y";

  /// Throws SpecError when the rule can leave [0, 1] or names unknown features.
  void validate() const;
  const SyntheticFeature& feature(std::string_view name) const;
};

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& doc);
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

struct GroundTruthRecord {
  RowId row_id = 0;
  double p = 0.0;
  int y = 0;
};

struct SyntheticPopulation {
  /// Feature columns plus the 0/1 label column; row ids are 0..n-1.
  TabularDataset dataset;
  std::vector<GroundTruthRecord> truth;
};

SyntheticPopulation generate_population(const SyntheticSpec& spec);

/// P(Y=1 | visible features) for each row, with every feature outside
/// `visible` marginalized exactly over its distribution.
std::vector<double> marginal_probabilities(const SyntheticSpec& spec, const TabularDataset& dataset,
                                           std::span<const std::string> visible);

void write_ground_truth_csv(const std::filesystem::path& path,
                            std::span<const GroundTruthRecord> truth);

/// Task over the synthetic features: question texts come from `base`, the
/// target is the label column, and there is no population filter.
TaskDefinition make_oracle_task(const TaskDefinition& base, const SyntheticSpec& spec);

struct OracleRunOptions {
  PromptScheme scheme = PromptScheme::multiple_choice;
  std::size_t bins = 10;
  /// Probability mass the oracle places on answer tokens.
  double leakage = 1.0;
  std::size_t max_in_flight = 1;
  /// Features shown to the oracle (and in prompts); empty means all.
  std::vector<std::string> visible_features;
};

struct OracleRunResult {
  MetricReport report;
  /// Probabilities the oracle answered with.
  std::vector<double> oracle_p;
  std::vector<double> scores;
  std::vector<int> labels;
  std::size_t excluded = 0;
};

/// Generates the population, prompts an oracle model through the full
/// extraction path and evaluates the scores.
OracleRunResult end_to_end_oracle_run(const SyntheticSpec& spec, const TaskDefinition& base,
                                      const CodebookConfig& codebook,
                                      const OracleRunOptions& options);

}  // namespace riskbench
