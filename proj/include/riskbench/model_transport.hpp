#pragma once

// Access to completion endpoints that return next-token probabilities, plus
// the in-process models used for testing and verification.

#include <atomic>
#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "riskbench/tabular_data.hpp"

namespace riskbench {

struct CompletionRequest {
  std::string model_id;
  std::string prompt;
  int max_generated_tokens = 1;
  int top_k_logprobs = 20;
  /// In-process metadata for verification models; never sent on the wire and
  /// not part of the cache key.
  std::optional<RowId> row_id;

  void validate() const;
};

struct TokenProbability {
  std::string token;
  double probability = 0.0;
};

/// Top-k next-token probabilities at one generated position, sorted by
/// descending probability (ties by token text).
class TokenDistribution {
 public:
  TokenDistribution() = default;
  /// Sorts and validates: each p in (0, 1], total mass <= 1 + 1e-6.
  TokenDistribution(std::vector<TokenProbability> entries, int position = 0);

  const std::vector<TokenProbability>& entries() const noexcept { return entries_; }
  int position() const noexcept { return position_; }
  /// 0 when the token is absent from the top-k.
  double probability_of(std::string_view token) const;

  friend bool operator==(const TokenDistribution& a, const TokenDistribution& b);

 private:
  std::vector<TokenProbability> entries_;
  int position_ = 0;
};

/// One distribution per generated position.
using Completion = std::vector<TokenDistribution>;

nlohmann::json completion_to_json(const Completion& completion);
Completion completion_from_json(const nlohmann::json& doc);

class CompletionModel {
 public:
  virtual ~CompletionModel() = default;
  /// Must be safe to call concurrently.
  virtual Completion complete(const CompletionRequest& request) = 0;
};

/// Hex digest over (model_id, prompt, max_generated_tokens, top_k_logprobs).
std::string cache_key_digest(const CompletionRequest& request);

/// Persistent content-addressed cache in front of another model. Layout:
/// {cache_dir}/{model_id}/{digest}.entry, one JSON document per entry.
class CachedModel final : public CompletionModel {
 public:
  static constexpr int kFormatVersion = 1;

  CachedModel(std::shared_ptr<CompletionModel> inner, std::filesystem::path cache_dir);

  Completion complete(const CompletionRequest& request) override;

  std::filesystem::path entry_path(const CompletionRequest& request) const;
  std::size_t hits() const noexcept { return hits_.load(); }
  std::size_t misses() const noexcept { return misses_.load(); }

 private:
  std::optional<Completion> read_entry(const std::filesystem::path& path,
                                       const CompletionRequest& request) const;
  void write_entry(const std::filesystem::path& path, const CompletionRequest& request,
                   const Completion& completion) const;

  std::shared_ptr<CompletionModel> inner_;
  std::filesystem::path cache_dir_;
  std::atomic<std::size_t> hits_{0};
  std::atomic<std::size_t> misses_{0};
};

/// Deterministic playback keyed by sha256(prompt).
class ScriptedModel final : public CompletionModel {
 public:
  explicit ScriptedModel(std::map<std::string, Completion> table);

  /// Fixture: {"entries": [{"prompt": ... | "prompt_sha256": ..., "completion": [...]}]}
  static ScriptedModel from_fixture(const std::filesystem::path& path);
  static std::string prompt_digest(std::string_view prompt);

  Completion complete(const CompletionRequest& request) override;

 private:
  std::map<std::string, Completion> table_;
};

/// Verification model that answers with known probabilities.
///
/// Multiple-choice prompts get mass leakage*p on the letter whose line carries
/// the positive choice text and leakage*(1-p) on the other; numeric prompts get
/// the digits of round(100*p) (capped at 99) one pass at a time.
class OracleModel final : public CompletionModel {
 public:
  /// Token receiving the 1 - leakage remainder.
  static constexpr std::string_view kFillerToken = "\n";

  OracleModel(std::function<double(RowId)> probability, double leakage,
               std::string positive_choice_text);

  Completion complete(const CompletionRequest& request) override;

 private:
  std::function<double(RowId)> probability_;
  double leakage_;
  std::string positive_choice_text_;
};

/// Pass-through wrapper counting calls and peak concurrency.
class InstrumentedModel final : public CompletionModel {
 public:
  explicit InstrumentedModel(std::shared_ptr<CompletionModel> inner,
                             std::chrono::microseconds delay = {});

  Completion complete(const CompletionRequest& request) override;

  std::size_t calls() const noexcept { return calls_.load(); }
  std::size_t peak_in_flight() const noexcept { return peak_.load(); }

 private:
  std::shared_ptr<CompletionModel> inner_;
  std::chrono::microseconds delay_;
  std::atomic<std::size_t> calls_{0};
  std::atomic<std::size_t> in_flight_{0};
  std::atomic<std::size_t> peak_{0};
};

struct RetryPolicy {
  int max_attempts = 5;
  double base_backoff_seconds = 0.5;
  double max_backoff_seconds = 30.0;
};

/// Delay before retry number `attempt` (1-based) with jitter draw u in [0, 1):
/// base * 2^(attempt-1) scaled into [50%, 100%], capped at the maximum.
std::chrono::duration<double> backoff_delay(const RetryPolicy& policy, int attempt, double u);

struct EndpointConfig {
  std::string base_url;
  /// Name of the environment variable holding the API key.
  std::string api_key_env = "RISKBENCH_API_KEY";
  std::size_t max_in_flight = 4;
  RetryPolicy retry;
  double timeout_seconds = 60.0;

  void validate() const;
};

using Sleeper = std::function<void(std::chrono::duration<double>)>;

/// POST {base_url}/completions with {model, prompt, max_tokens, logprobs,
/// temperature: 0}; reads choices[0].logprobs.top_logprobs.
class HttpCompletionModel final : public CompletionModel {
 public:
  explicit HttpCompletionModel(EndpointConfig config, Sleeper sleeper = {});

  Completion complete(const CompletionRequest& request) override;

  std::size_t attempts() const noexcept { return attempts_.load(); }

 private:
  EndpointConfig config_;
  Sleeper sleeper_;
  std::string scheme_host_port_;
  std::string path_prefix_;
  std::atomic<std::size_t> attempts_{0};
};

nlohmann::json make_completion_request_body(const CompletionRequest& request);

/// Parses a completions response; log-probabilities are exponentiated here.
/// Throws CapabilityError when token log-probabilities are absent.
Completion parse_completion_response(const nlohmann::json& body, int max_positions);

/// Runs job(0..count-1) on at most `max_in_flight` worker threads.
void run_bounded(std::size_t count, std::size_t max_in_flight,
                 const std::function<void(std::size_t)>& job);

}  // namespace riskbench
