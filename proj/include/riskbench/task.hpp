#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "riskbench/tabular_data.hpp"

namespace riskbench {

struct ChoiceTexts {
  std::string positive;
  std::string negative;
};

/// A binary prediction task over survey rows: which columns are evidence,
/// which column is the outcome and how it is binarized, which rows form the
/// population, and how the outcome is asked about in text.
struct TaskDefinition {
  std::string task_id;
  std::vector<std::string> feature_columns;
  std::string target_column;
  BinarizationRule target_rule;
  std::vector<Predicate> population_filter;
  std::string question_text;
  ChoiceTexts choice_texts;
  std::string numeric_question_text;
  std::optional<std::string> group_column;

  /// Features, target, filter and group columns, deduplicated, in first-use order.
  std::vector<std::string> referenced_columns() const;

  /// Structural checks: non-empty id and texts, target not a feature, no
  /// duplicate features, valid rule.
  void validate() const;
  /// Also checks that every referenced column exists in `schema`.
  void validate_against(std::span<const ColumnSchema> schema) const;

  /// Copy with a different, ordered feature list (validated).
  TaskDefinition with_features(std::vector<std::string> features) const;
};

TaskDefinition task_from_json(const nlohmann::json& doc);
nlohmann::json task_to_json(const TaskDefinition& task);
TaskDefinition load_task_config(const std::filesystem::path& path);

/// Resolves a task id against `tasks_dir/<id>.json`, or treats the argument
/// as a path when it names an existing file.
TaskDefinition resolve_task(const std::string& id_or_path, const std::filesystem::path& tasks_dir);

/// Rows satisfying every population predicate; rows with a missing target are
/// then dropped (logged, recorded in lineage).
TabularDataset apply_population_filter(const TabularDataset& dataset, const TaskDefinition& task);

/// Binary label per row. Throws SchemaError naming the row id when a target
/// value is missing.
std::vector<int> binarize_target(const TabularDataset& dataset, const TaskDefinition& task);

}  // namespace riskbench
