#include "riskbench/risk_scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "riskbench/csv.hpp"
#include "riskbench/error.hpp"

namespace riskbench {
namespace {

const std::vector<std::string> kRecordHeader = {"row_id", "score", "label", "group",
                                                "scheme", "flags", "split"};

std::string join_flags(const std::vector<std::string>& flags) {
  std::string out;
  for (const auto& f : flags) {
    if (!out.empty()) out.push_back(';');
    out += f;
  }
  return out;
}

std::vector<std::string> split_flags(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ';')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string_view trim(std::string_view text) {
  const auto begin = text.find_first_not_of(" \t\n\r");
  if (begin == std::string_view::npos) return {};
  const auto end = text.find_last_not_of(" \t\n\r");
  return text.substr(begin, end - begin + 1);
}

}  // namespace

std::vector<std::string> letter_variants(char letter) {
  const std::string l(1, letter);
  return {l, " " + l, l + ")", l + ":"};
}

ChoiceProbabilities choice_probabilities(const TokenDistribution& dist, const PromptBundle& bundle) {
  if (bundle.scheme != PromptScheme::multiple_choice) {
    throw ExtractionError("choice probabilities requested for a numeric prompt");
  }
  ChoiceProbabilities out;
  for (const auto& choice : bundle.choice_token_map) {
    double& target = choice.label == 1 ? out.p_positive : out.p_negative;
    for (const auto& variant : letter_variants(choice.letter)) {
      const double p = dist.probability_of(variant);
      if (p > 0.0) {
        target += p;
        out.matched_variants.push_back(variant);
      }
    }
  }
  if (out.p_positive + out.p_negative <= 0.0) {
    throw ExtractionError("neither answer choice appears among the returned tokens");
  }
  return out;
}

double mc_score_single_order(const TokenDistribution& dist, const PromptBundle& bundle) {
  const auto probs = choice_probabilities(dist, bundle);
  return probs.p_positive / (probs.p_positive + probs.p_negative);
}

ScoreResult mc_score(std::span<const OrderingResponse> responses) {
  if (responses.empty()) throw ExtractionError("no choice orderings to score");
  double sum = 0.0;
  std::size_t used = 0;
  std::string last_failure = "request failed";
  for (const auto& response : responses) {
    if (!response.distribution) continue;
    try {
      sum += mc_score_single_order(*response.distribution, response.bundle);
      ++used;
    } catch (const ExtractionError& e) {
      last_failure = e.what();
    }
  }
  if (used == 0) throw ExtractionError("all orderings failed: " + last_failure);
  ScoreResult result{sum / static_cast<double>(used), {}};
  if (used < responses.size()) result.flags.emplace_back(kFlagSingleOrder);
  return result;
}

std::optional<int> top_digit(const TokenDistribution& dist) {
  for (const auto& entry : dist.entries()) {
    const auto token = trim(entry.token);
    if (token.size() == 1 && token[0] >= '0' && token[0] <= '9') return token[0] - '0';
  }
  return std::nullopt;
}

ScoreResult numeric_score(const TokenDistribution& first_pass,
                          const std::optional<TokenDistribution>& second_pass) {
  const auto d1 = top_digit(first_pass);
  if (!d1) throw ExtractionError("no digit token in the first numeric pass");
  const auto d2 = second_pass ? top_digit(*second_pass) : std::nullopt;
  if (!d2) return {*d1 / 10.0, {std::string(kFlagSingleDigit)}};
  return {(10 * *d1 + *d2) / 100.0, {}};
}

void ThresholdPolicy::validate() const {
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("threshold must lie in [0, 1]");
}

double fit_threshold(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw SizeError("scores and labels differ in length");
  std::vector<std::pair<double, int>> sorted;
  sorted.reserve(scores.size());
  std::size_t positives = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    sorted.emplace_back(scores[i], labels[i]);
    positives += labels[i] == 1 ? 1 : 0;
  }
  if (positives == 0 || positives == scores.size()) {
    throw DegenerateDataError("threshold fitting needs both classes in the validation split");
  }
  std::sort(sorted.begin(), sorted.end());

  std::vector<double> candidates = {0.0, 0.5, 1.0};
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i].first != sorted[i - 1].first) {
      candidates.push_back(sorted[i - 1].first + (sorted[i].first - sorted[i - 1].first) / 2.0);
    }
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  // Prefix counts of negatives among the first k sorted rows.
  std::vector<std::size_t> negatives_below(sorted.size() + 1, 0);
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    negatives_below[i + 1] = negatives_below[i] + (sorted[i].second == 0 ? 1 : 0);
  }

  double best_tau = 0.5;
  std::size_t best_correct = 0;
  bool have_best = false;
  for (double tau : candidates) {
    // Rows with score <= tau are predicted 0.
    const auto k = static_cast<std::size_t>(
        std::upper_bound(sorted.begin(), sorted.end(), tau,
                         [](double t, const auto& row) { return t < row.first; }) -
        sorted.begin());
    const std::size_t true_negatives = negatives_below[k];
    const std::size_t true_positives = positives - (k - negatives_below[k]);
    const std::size_t correct = true_negatives + true_positives;
    const bool better =
        !have_best || correct > best_correct ||
        (correct == best_correct && (std::abs(tau - 0.5) < std::abs(best_tau - 0.5) ||
                                     (std::abs(tau - 0.5) == std::abs(best_tau - 0.5) && tau < best_tau)));
    if (better) {
      best_tau = tau;
      best_correct = correct;
      have_best = true;
    }
  }
  return best_tau;
}

void write_records_csv(const std::filesystem::path& path, const RecordTable& table) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << csv::join(kRecordHeader) << '\n';
  for (const auto& r : table.scored) {
    out << csv::join({std::to_string(r.row_id), csv::format_double(r.score), std::to_string(r.label),
                      r.group, std::string(to_string(r.scheme)), join_flags(r.flags), r.split})
        << '\n';
  }
  for (const auto& r : table.excluded) {
    out << csv::join({std::to_string(r.row_id), "", std::to_string(r.label), r.group,
                      std::string(to_string(r.scheme)), r.reason, r.split})
        << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

RecordTable read_records_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> fields;
  if (!csv::read_record(in, fields) || fields != kRecordHeader) {
    throw SchemaError(path.string() + ": unexpected scored-records header");
  }
  RecordTable table;
  std::size_t row = 0;
  while (csv::read_record(in, fields)) {
    if (fields.size() == 1 && fields[0].empty()) continue;
    if (fields.size() != kRecordHeader.size()) throw ParseError(row, "expected 7 fields");
    try {
      const RowId id = std::stoull(fields[0]);
      const int label = std::stoi(fields[2]);
      if (label != 0 && label != 1) throw ParseError(row, "label must be 0 or 1");
      const PromptScheme scheme = parse_scheme(fields[4]);
      if (fields[1].empty()) {
        table.excluded.push_back({id, label, fields[3], scheme, fields[5], fields[6]});
      } else {
        const auto score = csv::parse_double(fields[1]);
        if (!score || *score < 0.0 || *score > 1.0) throw ParseError(row, "bad score " + fields[1]);
        table.scored.push_back({id, *score, label, fields[3], scheme, split_flags(fields[5]), fields[6]});
      }
    } catch (const std::logic_error&) {
      throw ParseError(row, "malformed record");
    }
    ++row;
  }
  return table;
}

namespace {

struct PassOutcome {
  std::optional<TokenDistribution> distribution;
  std::string error;
};

PassOutcome fetch_first(CompletionModel& model, const CompletionRequest& request) {
  try {
    Completion completion = model.complete(request);
    if (completion.empty()) return {std::nullopt, "empty completion"};
    return {std::move(completion.front()), {}};
  } catch (const EndpointError& e) {
    return {std::nullopt, e.what()};
  }
}

}  // namespace

std::vector<RowScore> score_rows(const TabularDataset& dataset, const TaskDefinition& task,
                                 const CodebookConfig& codebook, CompletionModel& model,
                                 const ScoringOptions& options) {
  const std::size_t rows = dataset.num_rows();
  std::vector<RowScore> out(rows);
  const auto make_request = [&](std::size_t row, std::string prompt) {
    CompletionRequest request;
    request.model_id = options.model_id;
    request.prompt = std::move(prompt);
    request.top_k_logprobs = options.top_k_logprobs;
    request.row_id = dataset.row_ids()[row];
    return request;
  };

  if (options.scheme == PromptScheme::numeric) {
    run_bounded(rows, options.max_in_flight, [&](std::size_t row) {
      const PromptBundle bundle = build_numeric_prompt(dataset, row, task, codebook);
      const PassOutcome first = fetch_first(model, make_request(row, bundle.text));
      if (!first.distribution) {
        out[row] = {std::nullopt, "request-failed", first.error};
        return;
      }
      const auto d1 = top_digit(*first.distribution);
      if (!d1) {
        out[row] = {std::nullopt, "extraction-failed", "no digit token in the first numeric pass"};
        return;
      }
      const PassOutcome second =
          fetch_first(model, make_request(row, bundle.text + std::to_string(*d1)));
      if (!second.distribution && !second.error.empty()) {
        out[row] = {std::nullopt, "request-failed", second.error};
        return;
      }
      out[row] = {numeric_score(*first.distribution, second.distribution), {}, {}};
    });
    return out;
  }

  constexpr ChoiceOrdering kOrderings[] = {ChoiceOrdering::positive_first,
                                           ChoiceOrdering::negative_first};
  std::vector<OrderingResponse> responses(rows * 2);
  std::vector<std::string> errors(rows * 2);
  run_bounded(rows * 2, options.max_in_flight, [&](std::size_t job) {
    const std::size_t row = job / 2;
    PromptBundle bundle = build_multiple_choice_prompt(dataset, row, task, codebook, kOrderings[job % 2]);
    PassOutcome outcome = fetch_first(model, make_request(row, bundle.text));
    responses[job] = {std::move(bundle), std::move(outcome.distribution)};
    errors[job] = std::move(outcome.error);
  });
  for (std::size_t row = 0; row < rows; ++row) {
    const std::span<const OrderingResponse> pair(&responses[row * 2], 2);
    if (!pair[0].distribution && !pair[1].distribution) {
      out[row] = {std::nullopt, "request-failed", errors[row * 2]};
      continue;
    }
    try {
      out[row] = {mc_score(pair), {}, {}};
    } catch (const ExtractionError& e) {
      out[row] = {std::nullopt, "extraction-failed", e.what()};
    }
  }
  return out;
}

}  // namespace riskbench
