#pragma once

// End-to-end benchmark runs: data -> prompts -> model -> scores -> reports.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "riskbench/calibration_metrics.hpp"
#include "riskbench/model_transport.hpp"
#include "riskbench/risk_scoring.hpp"
#include "riskbench/tabular_data.hpp"
#include "riskbench/text_encoding.hpp"

namespace riskbench {

enum class ModelSource { endpoint, mock, oracle };

std::string_view to_string(ModelSource source);

struct BenchmarkConfig {
  std::string task_id = "ACSIncome";
  std::filesystem::path data_dir;
  std::filesystem::path tasks_dir;
  std::filesystem::path codebook_dir;

  std::string model_id;
  ModelSource source = ModelSource::endpoint;
  EndpointConfig endpoint;
  std::filesystem::path mock_fixture;
  std::filesystem::path oracle_spec;
  double oracle_leakage = 1.0;
  int top_k_logprobs = 20;

  PromptScheme scheme = PromptScheme::multiple_choice;
  std::size_t bins = 10;
  bool fit_threshold = false;
  double tau = 0.5;

  std::optional<std::size_t> subsample;
  std::uint64_t seed = 0;
  /// Absent: evaluate every row (no split).
  std::optional<SplitSpec> split = SplitSpec{};

  /// Absent: the task's group column. Empty string: grouping disabled.
  std::optional<std::string> group_column;
  std::size_t top_k_groups = 5;
  /// Ordered feature override; empty keeps the task's features.
  std::vector<std::string> feature_subset;

  std::filesystem::path results_dir;
  /// Empty: no response cache.
  std::filesystem::path cache_dir;

  void validate() const;
};

/// Reads a JSON config document. API keys are never accepted here.
BenchmarkConfig benchmark_config_from_json(const nlohmann::json& doc, BenchmarkConfig base = {});

/// Echo of the fields that change results (paths to outputs and caches,
/// concurrency and credentials are left out).
nlohmann::json semantic_config(const BenchmarkConfig& config);
std::string config_digest(const BenchmarkConfig& config);

struct EvaluationSettings {
  std::size_t bins = 10;
  /// Fit tau on the validation records instead of using `tau`.
  bool fit_threshold = false;
  double tau = 0.5;
  bool grouping = true;
};

struct Evaluation {
  std::size_t scored = 0;
  std::size_t excluded = 0;
  ThresholdPolicy policy;
  bool tau_fitted = false;
  /// Absent when nothing was scored.
  std::optional<MetricReport> metrics;
  std::optional<CalibrationCurve> curve_equal_width;
  std::optional<CalibrationCurve> curve_quantile;
  std::optional<ScoreDistribution> histogram;
  std::optional<GroupReport> groups;
  std::map<std::string, std::size_t> excluded_by_reason;
  std::map<std::string, std::size_t> flag_counts;
};

/// Metrics over the records not in the validation split. Depends on the
/// record table alone, so persisted records reproduce it exactly.
Evaluation evaluate_records(const RecordTable& records, const EvaluationSettings& settings);

nlohmann::json to_json(const Evaluation& evaluation);

/// metrics.csv, calibration_curve_{equal_width,quantile}.csv,
/// score_histogram.csv and, with grouping, group_metrics.csv.
void write_metric_files(const std::filesystem::path& dir, const Evaluation& evaluation);

struct RunStats {
  double wall_clock_seconds = 0.0;
  std::size_t model_calls = 0;
  std::size_t cache_hits = 0;
  std::size_t cache_misses = 0;
};

struct BenchmarkResult {
  Evaluation evaluation;
  nlohmann::json report;
  RunStats stats;
  double excluded_rate = 0.0;
};

/// Share of excluded rows above which a run counts as failed.
inline constexpr double kMaxExcludedRate = 0.10;

/// Validates the config, checks that results_dir is writable and loads data
/// and codebook before the first model request; then scores, evaluates and
/// writes every output file.
BenchmarkResult run_benchmark(const BenchmarkConfig& config);

/// report.json, run_stats.json and the metric files.
void emit_report(const BenchmarkResult& result, const std::filesystem::path& results_dir);

/// Maps library errors to process exit codes (2 config/schema, 3 capability,
/// 5 I/O, 1 anything else).
int exit_code_for(const std::exception& error);

}  // namespace riskbench
