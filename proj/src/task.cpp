#include "riskbench/task.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include <spdlog/spdlog.h>

#include "riskbench/error.hpp"

namespace riskbench {
namespace {

using nlohmann::json;

template <typename T>
T required(const json& doc, const char* key) {
  if (!doc.contains(key)) throw SchemaError(std::string("task config missing \"") + key + "\"");
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("task config field \"") + key + "\": " + e.what());
  }
}

Predicate predicate_from_json(const json& doc) {
  Predicate p;
  p.column = required<std::string>(doc, "column");
  p.op = parse_comparison(required<std::string>(doc, "op"));
  if (p.op == Comparison::in_set) {
    p.operands = required<std::vector<double>>(doc, "values");
  } else {
    p.operands = {required<double>(doc, "value")};
  }
  return p;
}

json predicate_to_json(const Predicate& p) {
  json doc = {{"column", p.column}, {"op", std::string(to_string(p.op))}};
  if (p.op == Comparison::in_set) {
    doc["values"] = p.operands;
  } else {
    doc["value"] = p.operands.empty() ? 0.0 : p.operands.front();
  }
  return doc;
}

}  // namespace

std::vector<std::string> TaskDefinition::referenced_columns() const {
  std::vector<std::string> out;
  auto add = [&](const std::string& name) {
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
  };
  for (const auto& f : feature_columns) add(f);
  add(target_column);
  for (const auto& p : population_filter) add(p.column);
  if (group_column) add(*group_column);
  return out;
}

void TaskDefinition::validate() const {
  if (task_id.empty()) throw SchemaError("task_id is empty");
  if (target_column.empty()) throw SchemaError("task " + task_id + " has no target column");
  if (std::find(feature_columns.begin(), feature_columns.end(), target_column) !=
      feature_columns.end()) {
    throw SchemaError("task " + task_id + ": target " + target_column + " is also a feature");
  }
  std::set<std::string> seen;
  for (const auto& f : feature_columns) {
    if (!seen.insert(f).second) throw SchemaError("task " + task_id + ": duplicate feature " + f);
  }
  if (choice_texts.positive.empty() || choice_texts.negative.empty()) {
    throw SchemaError("task " + task_id + " needs two choice texts");
  }
  if (choice_texts.positive == choice_texts.negative) {
    throw SchemaError("task " + task_id + ": choice texts must differ");
  }
  if (question_text.empty() || numeric_question_text.empty()) {
    throw SchemaError("task " + task_id + " needs question texts");
  }
  target_rule.validate();
}

void TaskDefinition::validate_against(std::span<const ColumnSchema> schema) const {
  validate();
  for (const auto& column : referenced_columns()) {
    const bool found = std::any_of(schema.begin(), schema.end(),
                                   [&](const ColumnSchema& c) { return c.name == column; });
    if (!found) throw SchemaError("task " + task_id + " references unknown column \"" + column + "\"");
  }
}

TaskDefinition TaskDefinition::with_features(std::vector<std::string> features) const {
  TaskDefinition copy = *this;
  copy.feature_columns = std::move(features);
  copy.validate();
  return copy;
}

TaskDefinition task_from_json(const json& doc) {
  TaskDefinition task;
  task.task_id = required<std::string>(doc, "task_id");
  task.feature_columns = required<std::vector<std::string>>(doc, "features");
  task.target_column = required<std::string>(doc, "target");

  const json& rule = doc.contains("target_rule") ? doc.at("target_rule") : json();
  const auto kind = required<std::string>(rule, "kind");
  if (kind == "threshold-above") {
    if (rule.contains("positive_codes")) throw SchemaError("threshold rule with positive_codes");
    task.target_rule = BinarizationRule::above(required<double>(rule, "threshold"));
  } else if (kind == "code-in-set") {
    if (rule.contains("threshold")) throw SchemaError("code-in-set rule with threshold");
    task.target_rule = BinarizationRule::in_set(required<std::vector<double>>(rule, "positive_codes"));
  } else {
    throw SchemaError("unknown target_rule kind: " + kind);
  }

  if (doc.contains("population_filter")) {
    for (const auto& p : doc.at("population_filter")) task.population_filter.push_back(predicate_from_json(p));
  }
  task.question_text = required<std::string>(doc, "question");
  const json& choices = doc.contains("choices") ? doc.at("choices") : json();
  task.choice_texts.positive = required<std::string>(choices, "positive");
  task.choice_texts.negative = required<std::string>(choices, "negative");
  task.numeric_question_text = required<std::string>(doc, "numeric_question");
  if (doc.contains("group_column") && !doc.at("group_column").is_null()) {
    task.group_column = doc.at("group_column").get<std::string>();
  }
  task.validate();
  return task;
}

json task_to_json(const TaskDefinition& task) {
  json rule;
  if (task.target_rule.kind == BinarizationRule::Kind::threshold_above) {
    rule = {{"kind", "threshold-above"}, {"threshold", *task.target_rule.threshold}};
  } else {
    rule = {{"kind", "code-in-set"}, {"positive_codes", *task.target_rule.positive_codes}};
  }
  json filters = json::array();
  for (const auto& p : task.population_filter) filters.push_back(predicate_to_json(p));
  json doc = {{"task_id", task.task_id},
              {"features", task.feature_columns},
              {"target", task.target_column},
              {"target_rule", rule},
              {"population_filter", filters},
              {"question", task.question_text},
              {"choices",
               {{"positive", task.choice_texts.positive}, {"negative", task.choice_texts.negative}}},
              {"numeric_question", task.numeric_question_text}};
  doc["group_column"] = task.group_column ? json(*task.group_column) : json(nullptr);
  return doc;
}

TaskDefinition load_task_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open task config " + path.string());
  try {
    return task_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw SchemaError("task config " + path.string() + ": " + e.what());
  }
}

TaskDefinition resolve_task(const std::string& id_or_path, const std::filesystem::path& tasks_dir) {
  if (std::filesystem::is_regular_file(id_or_path)) return load_task_config(id_or_path);
  const auto bundled = tasks_dir / (id_or_path + ".json");
  if (std::filesystem::is_regular_file(bundled)) return load_task_config(bundled);
  throw ConfigError("unknown task \"" + id_or_path + "\" (looked in " + tasks_dir.string() + ")");
}

TabularDataset apply_population_filter(const TabularDataset& dataset, const TaskDefinition& task) {
  TabularDataset filtered = filter_rows(dataset, task.population_filter, task.task_id);
  if (!filtered.has_column(task.target_column)) return filtered;
  std::size_t dropped = 0;
  TabularDataset out = drop_missing(filtered, task.target_column, &dropped);
  if (dropped > 0) {
    spdlog::info("{}: dropped {} row(s) with missing target {}", task.task_id, dropped,
                 task.target_column);
  }
  return out;
}

std::vector<int> binarize_target(const TabularDataset& dataset, const TaskDefinition& task) {
  const auto values = dataset.column(task.target_column);
  const auto ids = dataset.row_ids();
  std::vector<int> labels;
  labels.reserve(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (is_missing(values[i])) {
      throw SchemaError("missing target " + task.target_column + " for row id " +
                        std::to_string(ids[i]));
    }
    labels.push_back(task.target_rule.apply(values[i]));
  }
  return labels;
}

}  // namespace riskbench
