#include "riskbench/text_encoding.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "riskbench/csv.hpp"
#include "riskbench/error.hpp"

namespace riskbench {
namespace {

using nlohmann::json;

std::string with_period(std::string sentence) {
  if (sentence.empty() || (sentence.back() != '.' && sentence.back() != '?' && sentence.back() != '!')) {
    sentence.push_back('.');
  }
  return sentence;
}

std::string format_number(double value, ColumnKind kind) {
  if (kind == ColumnKind::integer) return std::to_string(std::llround(value));
  return csv::format_double(value);
}

std::string fill_template(std::string_view pattern, std::string_view value) {
  std::string out(pattern);
  const auto pos = out.find("{}");
  if (pos == std::string::npos) return out;
  out.replace(pos, 2, value);
  return out;
}

void append_question(std::string& text, const TaskDefinition& task,
                     const CodebookConfig& codebook, const TabularDataset& dataset,
                     std::size_t row) {
  text += codebook.population_preamble;
  text += "\n\n";
  text += encode_row(dataset, row, task, codebook);
  text += "\n\nQuestion: ";
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw CodebookError(path.string() + ": " + e.what());
  }
}

}  // namespace

std::string format_currency(double value) {
  const long long rounded = std::llround(value);
  std::string digits = std::to_string(rounded < 0 ? -rounded : rounded);
  std::string grouped;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) grouped.push_back(',');
    grouped.push_back(digits[i]);
  }
  return (rounded < 0 ? "-$" : "$") + grouped;
}

std::string ColumnToText::value_text(double raw) const {
  if (is_missing(raw) ||
      std::find(missing_codes.begin(), missing_codes.end(), raw) != missing_codes.end()) {
    return missing_text;
  }
  if (kind == ColumnKind::categorical) {
    const double integral = std::nearbyint(raw);
    const auto it = integral == raw ? value_map.find(static_cast<long long>(integral)) : value_map.end();
    if (it == value_map.end()) {
      throw CodebookError("column " + column + " has no text for code " + csv::format_double(raw));
    }
    return it->second;
  }
  const std::string number = currency ? format_currency(raw) : format_number(raw, kind);
  return fill_template(numeric_format, number);
}

ColumnSchema ColumnToText::schema() const { return {column, kind, missing_codes}; }

const ColumnToText& CodebookConfig::at(std::string_view column) const {
  const auto it = mappings.find(std::string(column));
  if (it == mappings.end()) throw CodebookError("codebook has no mapping for column " + std::string(column));
  return it->second;
}

bool CodebookConfig::contains(std::string_view column) const {
  return mappings.find(std::string(column)) != mappings.end();
}

void CodebookConfig::require(std::span<const std::string> columns) const {
  for (const auto& c : columns) at(c);
}

std::vector<ColumnSchema> CodebookConfig::schema_for(std::span<const std::string> columns) const {
  std::vector<ColumnSchema> out;
  for (const auto& c : columns) out.push_back(at(c).schema());
  return out;
}

void CodebookConfig::validate() const {
  if (population_preamble.empty()) throw CodebookError("codebook population preamble is empty");
  for (const auto& [name, mapping] : mappings) {
    if (name != mapping.column) throw CodebookError("codebook key mismatch for " + name);
    if (mapping.kind == ColumnKind::categorical && mapping.value_map.empty()) {
      throw CodebookError("categorical column " + name + " has an empty value map");
    }
    for (double code : mapping.missing_codes) {
      if (mapping.value_map.count(std::llround(code)) > 0) {
        throw CodebookError("column " + name + ": missing code overlaps a category code");
      }
    }
  }
}

ColumnToText column_to_text_from_json(const json& doc) {
  ColumnToText m;
  try {
    m.column = doc.at("column").get<std::string>();
    m.kind = parse_column_kind(doc.at("kind").get<std::string>());
    m.label = doc.at("label").get<std::string>();
    m.question_phrase = doc.at("phrase").get<std::string>();
    if (doc.contains("values")) {
      for (const auto& [code, text] : doc.at("values").items()) {
        m.value_map.emplace(std::stoll(code), text.get<std::string>());
      }
    }
    m.numeric_format = doc.value("format", std::string("{}"));
    m.currency = doc.value("currency", false);
    m.value_only = doc.value("value_only", false);
    m.missing_text = doc.value("missing_text", m.missing_text);
    if (doc.contains("missing_codes")) m.missing_codes = doc.at("missing_codes").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw CodebookError("codebook entry: " + std::string(e.what()));
  } catch (const std::invalid_argument&) {
    throw CodebookError("codebook entry " + m.column + ": non-integer category code");
  }
  return m;
}

CodebookConfig load_codebook(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("codebook directory not found: " + dir.string());
  CodebookConfig config;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    const json doc = read_json(file);
    if (doc.contains("preamble")) {
      config.population_preamble = doc.at("preamble").get<std::string>();
      continue;
    }
    auto mapping = column_to_text_from_json(doc);
    const std::string name = mapping.column;
    if (!config.mappings.emplace(name, std::move(mapping)).second) {
      throw CodebookError("duplicate codebook entry for " + name);
    }
  }
  config.validate();
  return config;
}

std::string_view to_string(PromptScheme scheme) {
  return scheme == PromptScheme::multiple_choice ? "multiple-choice" : "numeric";
}

PromptScheme parse_scheme(std::string_view text) {
  if (text == "mc" || text == "multiple-choice") return PromptScheme::multiple_choice;
  if (text == "numeric") return PromptScheme::numeric;
  throw ConfigError("unknown prompting scheme: " + std::string(text));
}

std::string_view to_string(ChoiceOrdering ordering) {
  return ordering == ChoiceOrdering::positive_first ? "positive-first" : "negative-first";
}

std::optional<int> PromptBundle::label_of(char letter) const {
  for (const auto& c : choice_token_map) {
    if (c.letter == letter) return c.label;
  }
  return std::nullopt;
}

std::optional<char> PromptBundle::letter_of(int label) const {
  for (const auto& c : choice_token_map) {
    if (c.label == label) return c.letter;
  }
  return std::nullopt;
}

std::string encode_value(const ColumnToText& mapping, double raw) {
  const std::string value = mapping.value_text(raw);
  if (mapping.value_only) return with_period(value);
  return with_period(mapping.question_phrase + ": " + value);
}

std::string encode_bullet(const ColumnToText& mapping, double raw) {
  const std::string value = mapping.value_text(raw);
  if (mapping.value_only) return with_period(value);
  return with_period(mapping.label + " is: " + value);
}

std::string encode_row(const TabularDataset& dataset, std::size_t row, const TaskDefinition& task,
                       const CodebookConfig& codebook) {
  std::string out(kFeatureHeader);
  for (const auto& feature : task.feature_columns) {
    out += "\n- ";
    out += encode_bullet(codebook.at(feature), dataset.value(row, dataset.column_index(feature)));
  }
  return out;
}

PromptBundle build_multiple_choice_prompt(const TabularDataset& dataset, std::size_t row,
                                          const TaskDefinition& task,
                                          const CodebookConfig& codebook, ChoiceOrdering ordering) {
  PromptBundle bundle;
  bundle.scheme = PromptScheme::multiple_choice;
  bundle.ordering = ordering;
  const bool positive_first = ordering == ChoiceOrdering::positive_first;
  const std::string& first = positive_first ? task.choice_texts.positive : task.choice_texts.negative;
  const std::string& second = positive_first ? task.choice_texts.negative : task.choice_texts.positive;
  bundle.choice_token_map = {{'A', positive_first ? 1 : 0}, {'B', positive_first ? 0 : 1}};

  append_question(bundle.text, task, codebook, dataset, row);
  bundle.text += task.question_text;
  bundle.text += "\nA: " + first;
  bundle.text += "\nB: " + second;
  bundle.text += "\nAnswer:";
  return bundle;
}

PromptBundle build_numeric_prompt(const TabularDataset& dataset, std::size_t row,
                                  const TaskDefinition& task, const CodebookConfig& codebook) {
  PromptBundle bundle;
  bundle.scheme = PromptScheme::numeric;
  bundle.answer_prefix = std::string(kNumericAnswerPrefix);
  append_question(bundle.text, task, codebook, dataset, row);
  bundle.text += task.numeric_question_text;
  bundle.text += "\n";
  bundle.text += kNumericAnswerLine;
  bundle.text += kNumericAnswerPrefix;
  return bundle;
}

}  // namespace riskbench
