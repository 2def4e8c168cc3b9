#pragma once

// Calibration and discrimination metrics over (score, label) pairs.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "riskbench/risk_scoring.hpp"
#include "riskbench/tabular_data.hpp"

namespace riskbench {

enum class BinningKind { equal_width, quantile };

std::string_view to_string(BinningKind kind);

struct BinningSpec {
  std::size_t bins = 10;
  BinningKind kind = BinningKind::equal_width;

  void validate() const;
};

/// Equal-width: bin m holds m/M <= r < (m+1)/M, the last bin also takes 1.
/// Quantile: records sorted by score, bin = floor(rank * M / n) where a run of
/// tied scores shares the rank of its first member.
std::vector<std::size_t> bin_assign(std::span<const double> scores, const BinningSpec& spec);

/// (1/n) * sum over bins of |sum y - sum r|.
double ece(std::span<const double> scores, std::span<const int> labels, const BinningSpec& spec);
double brier(std::span<const double> scores, std::span<const int> labels);
/// Rank-sum AUC with midranks. Throws UndefinedMetricError for one-class input.
double auc(std::span<const double> scores, std::span<const int> labels);
double accuracy(std::span<const double> scores, std::span<const int> labels,
                const ThresholdPolicy& policy);
/// sum over bins of (|B|/n) * (mean max(r, 1-r) - thresholded accuracy).
/// Positive values mean over-confidence.
double confidence_bias(std::span<const double> scores, std::span<const int> labels,
                       const BinningSpec& spec, const ThresholdPolicy& policy);
/// mean(r - y); negative values mean scores lean low.
double signed_calibration_error(std::span<const double> scores, std::span<const int> labels);

struct CurvePoint {
  std::size_t bin = 0;
  std::size_t count = 0;
  double mean_score = 0.0;
  double positive_rate = 0.0;
  /// 1.96 * sqrt(p(1-p)/count)
  double ci_half_width = 0.0;
};

struct CalibrationCurve {
  BinningSpec spec;
  /// Non-empty bins only, in bin order.
  std::vector<CurvePoint> points;
};

CalibrationCurve calibration_curve(std::span<const double> scores, std::span<const int> labels,
                                   const BinningSpec& spec);

struct ScoreDistribution {
  double mean = 0.0;
  /// Population standard deviation.
  double stddev = 0.0;
  /// Equal-width cells over [0, 1].
  std::vector<std::size_t> histogram;
};

ScoreDistribution score_distribution_stats(std::span<const double> scores, std::size_t cells = 20);

struct MetricReport {
  std::size_t n = 0;
  std::size_t excluded_count = 0;
  std::size_t bins = 10;
  double tau = 0.5;
  double ece_equal_width = 0.0;
  double ece_quantile = 0.0;
  double brier = 0.0;
  /// Absent when only one class is present.
  std::optional<double> auc;
  double accuracy = 0.0;
  double confidence_bias = 0.0;
  double sce = 0.0;
  double score_mean = 0.0;
  double score_std = 0.0;
};

/// Throws UndefinedMetricError when there are no scores.
MetricReport metric_report(std::span<const double> scores, std::span<const int> labels,
                           std::size_t bins, const ThresholdPolicy& policy,
                           std::size_t excluded_count = 0);

struct GroupEntry {
  std::string group;
  MetricReport metrics;
  CalibrationCurve curve;
};

struct SceDifference {
  std::string a;
  std::string b;
  /// SCE(a) - SCE(b)
  double delta = 0.0;
};

struct GroupReport {
  std::vector<GroupEntry> groups;
  std::vector<SceDifference> sce_differences;
  std::vector<std::string> notes;
};

/// Per-group metrics in `order` (groups seen but not listed are appended in
/// sorted order), plus SCE differences for every ordered pair of groups.
/// Listed groups without records are omitted with a note.
GroupReport group_metrics(std::span<const double> scores, std::span<const int> labels,
                          std::span<const std::string> group_of_record,
                          std::span<const std::string> order, std::size_t bins,
                          const ThresholdPolicy& policy);

struct PermutationImportance {
  double auc_original = 0.0;
  double auc_permuted = 0.0;
  /// auc_original - auc_permuted
  double delta = 0.0;
};

using DatasetScorer = std::function<std::vector<double>(const TabularDataset&)>;

/// Drop in AUC after shuffling one column across rows.
PermutationImportance permutation_feature_importance(const DatasetScorer& score_fn,
                                                     const TabularDataset& dataset,
                                                     std::span<const int> labels,
                                                     std::string_view feature, std::uint64_t seed);

nlohmann::json to_json(const MetricReport& report);
nlohmann::json to_json(const CalibrationCurve& curve);
nlohmann::json to_json(const ScoreDistribution& dist);
nlohmann::json to_json(const GroupReport& report);

/// Flat tables, one row per metric set / bin / cell.
void write_metrics_csv(const std::filesystem::path& path, const MetricReport& report);
void write_curve_csv(const std::filesystem::path& path, const CalibrationCurve& curve);
void write_histogram_csv(const std::filesystem::path& path, const ScoreDistribution& dist);
void write_group_csv(const std::filesystem::path& path, const GroupReport& report);

}  // namespace riskbench
