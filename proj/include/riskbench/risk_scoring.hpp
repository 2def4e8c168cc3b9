#pragma once

// Turning next-token distributions into risk scores, and scores into class
// predictions.

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "riskbench/model_transport.hpp"
#include "riskbench/tabular_data.hpp"
#include "riskbench/text_encoding.hpp"

namespace riskbench {

inline constexpr std::string_view kFlagSingleOrder = "single-order";
inline constexpr std::string_view kFlagSingleDigit = "single-digit";

/// Accepted spellings of a choice letter: "A", " A", "A)", "A:".
std::vector<std::string> letter_variants(char letter);

struct ChoiceProbabilities {
  double p_positive = 0.0;
  double p_negative = 0.0;
  std::vector<std::string> matched_variants;
};

/// Sums the mass of every accepted variant of each choice letter. Throws
/// ExtractionError when neither choice appears.
ChoiceProbabilities choice_probabilities(const TokenDistribution& dist, const PromptBundle& bundle);

double mc_score_single_order(const TokenDistribution& dist, const PromptBundle& bundle);

struct ScoreResult {
  double score = 0.0;
  std::vector<std::string> flags;
};

/// One ordering's prompt and, unless its request failed, the returned
/// first-position distribution.
struct OrderingResponse {
  PromptBundle bundle;
  std::optional<TokenDistribution> distribution;
};

/// Mean of the single-order scores. Orderings that fail extraction are
/// dropped with a single-order flag; throws ExtractionError if none remain.
ScoreResult mc_score(std::span<const OrderingResponse> responses);

/// Highest-probability token that is a single decimal digit (surrounding
/// blanks ignored).
std::optional<int> top_digit(const TokenDistribution& dist);

/// r = (10*d1 + d2)/100, or d1/10 when pass two is absent or digitless.
ScoreResult numeric_score(const TokenDistribution& first_pass,
                          const std::optional<TokenDistribution>& second_pass);

struct ThresholdPolicy {
  double tau = 0.5;
  void validate() const;
};

/// 1 iff r > tau.
inline int threshold_predict(double r, const ThresholdPolicy& policy) { return r > policy.tau ? 1 : 0; }

/// Accuracy-maximizing threshold among 0, 1, 0.5 and the midpoints between
/// consecutive distinct scores. Ties go to the candidate nearest 0.5, then the
/// smaller one. Throws DegenerateDataError unless both classes are present.
double fit_threshold(std::span<const double> scores, std::span<const int> labels);

struct ScoredRecord {
  RowId row_id = 0;
  double score = 0.0;
  int label = 0;
  /// Group category text, or "other".
  std::string group = "other";
  PromptScheme scheme = PromptScheme::multiple_choice;
  std::vector<std::string> flags;
  std::string split = "test";
};

/// A row whose score could not be obtained.
struct ExcludedRecord {
  RowId row_id = 0;
  int label = 0;
  std::string group = "other";
  PromptScheme scheme = PromptScheme::multiple_choice;
  /// Short reason code such as "extraction-failed" or "request-failed".
  std::string reason;
  std::string split = "test";
};

struct RecordTable {
  std::vector<ScoredRecord> scored;
  std::vector<ExcludedRecord> excluded;
};

/// Columns: row_id,score,label,group,scheme,flags,split. Excluded rows have
/// an empty score and their reason in the flags column.
void write_records_csv(const std::filesystem::path& path, const RecordTable& table);
RecordTable read_records_csv(const std::filesystem::path& path);

struct ScoringOptions {
  std::string model_id;
  PromptScheme scheme = PromptScheme::multiple_choice;
  int top_k_logprobs = 20;
  std::size_t max_in_flight = 4;
};

/// Outcome for one dataset row: a score, or a failure reason code
/// ("request-failed" or "extraction-failed") with a message.
struct RowScore {
  std::optional<ScoreResult> result;
  std::string failure;
  std::string detail;
};

/// Builds prompts, queries the model with bounded concurrency and extracts
/// one score per row, in row order. Multiple-choice rows are asked under both
/// choice orderings; numeric rows take two greedy passes. Endpoint and
/// extraction failures are recorded per row; any other error aborts.
std::vector<RowScore> score_rows(const TabularDataset& dataset, const TaskDefinition& task,
                                 const CodebookConfig& codebook, CompletionModel& model,
                                 const ScoringOptions& options);

}  // namespace riskbench
