#pragma once

// Column-to-text codebooks and prompt assembly.

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "riskbench/tabular_data.hpp"
#include "riskbench/task.hpp"

namespace riskbench {

/// How one survey column is rendered as text.
///
/// Two sentence forms are produced from the same value text:
///   full:   "<question_phrase>: <value>."   e.g. "The individual's age is: 42 years old."
///   bullet: "<label> is: <value>."          e.g. "Age is: 42 years old."
/// Columns flagged `value_only` render the value text alone in both forms.
struct ColumnToText {
  std::string column;
  ColumnKind kind = ColumnKind::categorical;
  std::string label;
  std::string question_phrase;
  /// Categorical code -> text.
  std::map<long long, std::string> value_map;
  /// Numeric template; "{}" is replaced by the formatted number.
  std::string numeric_format = "{}";
  /// Render numbers as "$12,345".
  bool currency = false;
  bool value_only = false;
  std::string missing_text = "N/A (unreported)";
  std::vector<double> missing_codes;

  /// Text for one cell. Throws CodebookError for unmapped categorical codes.
  std::string value_text(double raw) const;
  ColumnSchema schema() const;
};

/// "42" -> "$42", 50000 -> "$50,000", -1200 -> "-$1,200".
std::string format_currency(double value);

struct CodebookConfig {
  std::map<std::string, ColumnToText> mappings;
  std::string population_preamble;

  const ColumnToText& at(std::string_view column) const;
  bool contains(std::string_view column) const;
  /// Throws CodebookError naming the first column without a mapping.
  void require(std::span<const std::string> columns) const;
  std::vector<ColumnSchema> schema_for(std::span<const std::string> columns) const;
  void validate() const;
};

/// Loads every `<COLUMN>.json` in `dir` plus `population.json` (the preamble).
CodebookConfig load_codebook(const std::filesystem::path& dir);
ColumnToText column_to_text_from_json(const nlohmann::json& doc);

enum class PromptScheme { multiple_choice, numeric };
enum class ChoiceOrdering { positive_first, negative_first };

std::string_view to_string(PromptScheme scheme);
PromptScheme parse_scheme(std::string_view text);
std::string_view to_string(ChoiceOrdering ordering);

inline constexpr std::string_view kFeatureHeader = "Information about this person:";
inline constexpr std::string_view kNumericAnswerLine = "Answer (between 0 and 1): ";
inline constexpr std::string_view kNumericAnswerPrefix = "0.";

struct ChoiceAssignment {
  char letter;
  int label;
};

struct PromptBundle {
  std::string text;
  PromptScheme scheme = PromptScheme::multiple_choice;
  std::optional<ChoiceOrdering> ordering;
  std::string answer_prefix;
  /// Letter -> class; exactly {A, B} for multiple choice, empty for numeric.
  std::vector<ChoiceAssignment> choice_token_map;

  std::optional<int> label_of(char letter) const;
  std::optional<char> letter_of(int label) const;
};

/// Full sentence for one value.
std::string encode_value(const ColumnToText& mapping, double raw);
/// Bulleted short sentence (without the leading "- ").
std::string encode_bullet(const ColumnToText& mapping, double raw);

/// Header line followed by one "- " bullet per task feature, in task order.
std::string encode_row(const TabularDataset& dataset, std::size_t row, const TaskDefinition& task,
                       const CodebookConfig& codebook);

PromptBundle build_multiple_choice_prompt(const TabularDataset& dataset, std::size_t row,
                                          const TaskDefinition& task,
                                          const CodebookConfig& codebook, ChoiceOrdering ordering);

PromptBundle build_numeric_prompt(const TabularDataset& dataset, std::size_t row,
                                  const TaskDefinition& task, const CodebookConfig& codebook);

}  // namespace riskbench
