#include "riskbench/model_transport.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "riskbench/digest.hpp"
#include "riskbench/error.hpp"
#include "riskbench/text_encoding.hpp"

namespace riskbench {
namespace {

using nlohmann::json;

constexpr std::string_view kCacheFormat = "riskbench-cache";

std::string sanitize_path_component(std::string_view text) {
  std::string out;
  for (char c : text) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '-' || c == '_';
    out.push_back(ok ? c : '_');
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

// Text of the line starting with `marker` after the last question, if any.
std::optional<std::string> choice_line(std::string_view prompt, std::string_view marker) {
  const auto question = prompt.rfind("Question: ");
  if (question == std::string_view::npos) return std::nullopt;
  const auto start = prompt.find(marker, question);
  if (start == std::string_view::npos) return std::nullopt;
  const auto begin = start + marker.size();
  const auto end = prompt.find('\n', begin);
  return std::string(prompt.substr(begin, end == std::string_view::npos ? end : end - begin));
}

}  // namespace

void CompletionRequest::validate() const {
  if (max_generated_tokens < 1) throw ConfigError("max_generated_tokens must be >= 1");
  if (top_k_logprobs < 2) throw ConfigError("top_k_logprobs must be >= 2");
}

TokenDistribution::TokenDistribution(std::vector<TokenProbability> entries, int position)
    : position_(position) {
  double total = 0.0;
  for (auto& e : entries) {
    if (std::isnan(e.probability) || e.probability < 0.0 || e.probability > 1.0) {
      throw Error("token probability out of range for \"" + e.token + "\"");
    }
    if (e.probability == 0.0) continue;
    total += e.probability;
    entries_.push_back(std::move(e));
  }
  if (total > 1.0 + 1e-6) throw Error("token probabilities sum to more than 1");
  std::sort(entries_.begin(), entries_.end(), [](const auto& a, const auto& b) {
    return a.probability != b.probability ? a.probability > b.probability : a.token < b.token;
  });
}

double TokenDistribution::probability_of(std::string_view token) const {
  for (const auto& e : entries_) {
    if (e.token == token) return e.probability;
  }
  return 0.0;
}

bool operator==(const TokenDistribution& a, const TokenDistribution& b) {
  if (a.position_ != b.position_ || a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    if (a.entries_[i].token != b.entries_[i].token ||
        a.entries_[i].probability != b.entries_[i].probability) {
      return false;
    }
  }
  return true;
}

json completion_to_json(const Completion& completion) {
  json out = json::array();
  for (const auto& dist : completion) {
    json entries = json::array();
    for (const auto& e : dist.entries()) entries.push_back(json::array({e.token, e.probability}));
    out.push_back({{"position", dist.position()}, {"entries", entries}});
  }
  return out;
}

Completion completion_from_json(const json& doc) {
  Completion out;
  for (const auto& item : doc) {
    std::vector<TokenProbability> entries;
    for (const auto& e : item.at("entries")) {
      entries.push_back({e.at(0).get<std::string>(), e.at(1).get<double>()});
    }
    out.emplace_back(std::move(entries), item.value("position", 0));
  }
  return out;
}

std::string cache_key_digest(const CompletionRequest& request) {
  FieldHasher hasher;
  hasher.add("riskbench-completion-v1")
      .add(request.model_id)
      .add(request.prompt)
      .add(static_cast<long long>(request.max_generated_tokens))
      .add(static_cast<long long>(request.top_k_logprobs));
  return hasher.hex();
}

CachedModel::CachedModel(std::shared_ptr<CompletionModel> inner, std::filesystem::path cache_dir)
    : inner_(std::move(inner)), cache_dir_(std::move(cache_dir)) {}

std::filesystem::path CachedModel::entry_path(const CompletionRequest& request) const {
  return cache_dir_ / sanitize_path_component(request.model_id) /
         (cache_key_digest(request) + ".entry");
}

std::optional<Completion> CachedModel::read_entry(const std::filesystem::path& path,
                                                  const CompletionRequest& request) const {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  try {
    const json doc = json::parse(in);
    if (doc.at("format").get<std::string>() != kCacheFormat ||
        doc.at("version").get<int>() != kFormatVersion ||
        doc.at("digest").get<std::string>() != cache_key_digest(request)) {
      throw Error("cache entry header mismatch");
    }
    auto completion = completion_from_json(doc.at("completion"));
    if (completion.empty()) throw Error("cache entry has no distributions");
    return completion;
  } catch (const std::exception& e) {
    spdlog::warn("discarding corrupt cache entry {}: {}", path.string(), e.what());
    std::error_code ec;
    std::filesystem::remove(path, ec);
    return std::nullopt;
  }
}

void CachedModel::write_entry(const std::filesystem::path& path, const CompletionRequest& request,
                              const Completion& completion) const {
  static std::atomic<std::uint64_t> counter{0};
  std::filesystem::create_directories(path.parent_path());
  const json doc = {{"format", kCacheFormat},
                    {"version", kFormatVersion},
                    {"digest", cache_key_digest(request)},
                    {"model_id", request.model_id},
                    {"prompt_sha256", sha256_hex(request.prompt)},
                    {"max_generated_tokens", request.max_generated_tokens},
                    {"top_k_logprobs", request.top_k_logprobs},
                    {"completion", completion_to_json(completion)}};
  std::ostringstream suffix;
  suffix << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id()) << "."
         << counter.fetch_add(1);
  auto temp = path;
  temp += suffix.str();
  {
    std::ofstream out(temp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write cache entry " + temp.string());
    out << doc.dump(2) << '\n';
    if (!out) throw IoError("cannot write cache entry " + temp.string());
  }
  std::filesystem::rename(temp, path);
}

Completion CachedModel::complete(const CompletionRequest& request) {
  request.validate();
  const auto path = entry_path(request);
  if (auto cached = read_entry(path, request)) {
    hits_.fetch_add(1);
    return *std::move(cached);
  }
  misses_.fetch_add(1);
  Completion completion = inner_->complete(request);
  write_entry(path, request, completion);
  return completion;
}

ScriptedModel::ScriptedModel(std::map<std::string, Completion> table) : table_(std::move(table)) {}

std::string ScriptedModel::prompt_digest(std::string_view prompt) { return sha256_hex(prompt); }

ScriptedModel ScriptedModel::from_fixture(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open mock fixture " + path.string());
  std::map<std::string, Completion> table;
  try {
    const json doc = json::parse(in);
    for (const auto& entry : doc.at("entries")) {
      const std::string key = entry.contains("prompt_sha256")
                                  ? entry.at("prompt_sha256").get<std::string>()
                                  : prompt_digest(entry.at("prompt").get<std::string>());
      table[key] = completion_from_json(entry.at("completion"));
    }
  } catch (const json::exception& e) {
    throw ConfigError("mock fixture " + path.string() + ": " + e.what());
  }
  return ScriptedModel(std::move(table));
}

Completion ScriptedModel::complete(const CompletionRequest& request) {
  request.validate();
  const auto it = table_.find(prompt_digest(request.prompt));
  if (it == table_.end()) {
    throw ScriptedMissError("no scripted completion for prompt " + prompt_digest(request.prompt));
  }
  Completion out(it->second.begin(),
                 it->second.begin() + std::min<std::ptrdiff_t>(
                                          request.max_generated_tokens,
                                          static_cast<std::ptrdiff_t>(it->second.size())));
  return out;
}

OracleModel::OracleModel(std::function<double(RowId)> probability, double leakage,
                         std::string positive_choice_text)
    : probability_(std::move(probability)),
      leakage_(leakage),
      positive_choice_text_(std::move(positive_choice_text)) {
  if (!(leakage_ > 0.0 && leakage_ <= 1.0)) throw ConfigError("oracle leakage must lie in (0, 1]");
}

Completion OracleModel::complete(const CompletionRequest& request) {
  request.validate();
  if (!request.row_id) throw OracleError("oracle request carries no row id");
  const double p = probability_(*request.row_id);
  if (!(p >= 0.0 && p <= 1.0)) throw OracleError("oracle probability outside [0, 1]");

  std::vector<TokenProbability> entries;
  const std::string_view prompt = request.prompt;
  const auto answer = prompt.rfind(kNumericAnswerLine);
  if (answer != std::string_view::npos) {
    const auto tail = prompt.substr(answer + kNumericAnswerLine.size());
    const long long percent = std::min(99LL, std::llround(100.0 * p));
    if (tail == kNumericAnswerPrefix) {
      entries.push_back({std::to_string(percent / 10), leakage_});
    } else if (tail.size() == kNumericAnswerPrefix.size() + 1 &&
               tail.substr(0, kNumericAnswerPrefix.size()) == kNumericAnswerPrefix) {
      entries.push_back({std::to_string(percent % 10), leakage_});
    } else {
      throw OracleError("numeric prompt has an unexpected answer suffix");
    }
  } else {
    const auto a = choice_line(prompt, "\nA: ");
    const auto b = choice_line(prompt, "\nB: ");
    if (!a || !b) throw OracleError("prompt is neither multiple-choice nor numeric");
    std::string positive;
    std::string negative;
    if (*a == positive_choice_text_) {
      positive = "A";
      negative = "B";
    } else if (*b == positive_choice_text_) {
      positive = "B";
      negative = "A";
    } else {
      throw OracleError("no choice line carries the positive choice text");
    }
    entries.push_back({positive, leakage_ * p});
    entries.push_back({negative, leakage_ * (1.0 - p)});
  }
  if (leakage_ < 1.0) entries.push_back({std::string(kFillerToken), 1.0 - leakage_});
  return {TokenDistribution(std::move(entries), 0)};
}

InstrumentedModel::InstrumentedModel(std::shared_ptr<CompletionModel> inner,
                                     std::chrono::microseconds delay)
    : inner_(std::move(inner)), delay_(delay) {}

Completion InstrumentedModel::complete(const CompletionRequest& request) {
  calls_.fetch_add(1);
  const auto now = in_flight_.fetch_add(1) + 1;
  auto peak = peak_.load();
  while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
  }
  struct Leave {
    std::atomic<std::size_t>& counter;
    ~Leave() { counter.fetch_sub(1); }
  } leave{in_flight_};
  if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
  return inner_->complete(request);
}

std::chrono::duration<double> backoff_delay(const RetryPolicy& policy, int attempt, double u) {
  const double base = policy.base_backoff_seconds * std::pow(2.0, std::max(0, attempt - 1));
  const double jittered = base * (0.5 + 0.5 * std::clamp(u, 0.0, 1.0));
  return std::chrono::duration<double>(std::min(jittered, policy.max_backoff_seconds));
}

void EndpointConfig::validate() const {
  if (base_url.empty()) throw ConfigError("endpoint base_url is empty");
  if (max_in_flight < 1) throw ConfigError("max_in_flight must be >= 1");
  if (!(timeout_seconds > 0.0)) throw ConfigError("timeout must be positive");
  if (retry.max_attempts < 1) throw ConfigError("retry max_attempts must be >= 1");
}

void run_bounded(std::size_t count, std::size_t max_in_flight,
                 const std::function<void(std::size_t)>& job) {
  if (count == 0) return;
  const std::size_t workers = std::clamp<std::size_t>(max_in_flight, 1, count);
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex error_mutex;

  auto work = [&] {
    while (!failed.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        job(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
      }
    }
  };

  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(work);
  }
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace riskbench
