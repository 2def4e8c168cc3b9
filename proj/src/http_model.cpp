#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cmath>
#include <cstdlib>
#include <random>
#include <regex>
#include <thread>

#include <spdlog/spdlog.h>

#include "riskbench/error.hpp"
#include "riskbench/model_transport.hpp"

namespace riskbench {
namespace {

using nlohmann::json;

double jitter_draw() {
  thread_local std::mt19937_64 engine{std::random_device{}()};
  return std::uniform_real_distribution<double>(0.0, 1.0)(engine);
}

void default_sleep(std::chrono::duration<double> d) { std::this_thread::sleep_for(d); }

std::string body_excerpt(const std::string& body) {
  return body.size() > 200 ? body.substr(0, 200) + "..." : body;
}

}  // namespace

json make_completion_request_body(const CompletionRequest& request) {
  return {{"model", request.model_id},
          {"prompt", request.prompt},
          {"max_tokens", request.max_generated_tokens},
          {"logprobs", request.top_k_logprobs},
          {"temperature", 0}};
}

Completion parse_completion_response(const json& body, int max_positions) {
  if (body.contains("error") && !body.at("error").is_null()) {
    throw EndpointError("endpoint returned an error: " + body.at("error").dump());
  }
  if (!body.contains("choices") || !body.at("choices").is_array() || body.at("choices").empty()) {
    throw EndpointError("completion response has no choices");
  }
  const json& choice = body.at("choices").at(0);
  const json* top = nullptr;
  if (choice.contains("logprobs") && choice.at("logprobs").is_object()) {
    const json& logprobs = choice.at("logprobs");
    if (logprobs.contains("top_logprobs") && logprobs.at("top_logprobs").is_array()) {
      top = &logprobs.at("top_logprobs");
    }
  }
  if (top == nullptr || top->empty()) {
    throw CapabilityError("endpoint does not expose logprobs");
  }

  Completion out;
  const auto positions = std::min<std::size_t>(top->size(), static_cast<std::size_t>(max_positions));
  for (std::size_t pos = 0; pos < positions; ++pos) {
    const json& step = top->at(pos);
    if (!step.is_object()) throw CapabilityError("endpoint does not expose logprobs");
    std::vector<TokenProbability> entries;
    for (const auto& [token, logprob] : step.items()) {
      if (!logprob.is_number()) continue;
      entries.push_back({token, std::exp(logprob.get<double>())});
    }
    out.emplace_back(std::move(entries), static_cast<int>(pos));
  }
  return out;
}

HttpCompletionModel::HttpCompletionModel(EndpointConfig config, Sleeper sleeper)
    : config_(std::move(config)), sleeper_(sleeper ? std::move(sleeper) : Sleeper(default_sleep)) {
  config_.validate();
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch match;
  if (!std::regex_match(config_.base_url, match, kUrl)) {
    throw ConfigError("endpoint URL must look like http(s)://host[:port][/path]: " + config_.base_url);
  }
  scheme_host_port_ = match[1].str();
  path_prefix_ = match[2].matched ? match[2].str() : std::string();
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

Completion HttpCompletionModel::complete(const CompletionRequest& request) {
  request.validate();
  httplib::Client client(scheme_host_port_);
  const auto timeout = std::chrono::duration<double>(config_.timeout_seconds);
  client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
  client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key != nullptr && *key != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const std::string body = make_completion_request_body(request).dump();
  const std::string path = path_prefix_ + "/completions";

  bool rate_limited = false;
  std::string last_error;
  for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
    attempts_.fetch_add(1);
    auto result = client.Post(path, headers, body, "application/json");
    if (!result) {
      rate_limited = false;
      last_error = "transport error: " + httplib::to_string(result.error());
    } else if (result->status == 200) {
      json parsed;
      try {
        parsed = json::parse(result->body);
      } catch (const json::parse_error& e) {
        throw EndpointError(std::string("malformed completion response: ") + e.what());
      }
      return parse_completion_response(parsed, request.max_generated_tokens);
    } else if (result->status == 429) {
      rate_limited = true;
      last_error = "HTTP 429: " + body_excerpt(result->body);
    } else if (result->status >= 500) {
      rate_limited = false;
      last_error = "HTTP " + std::to_string(result->status) + ": " + body_excerpt(result->body);
    } else {
      throw EndpointError("HTTP " + std::to_string(result->status) + ": " + body_excerpt(result->body));
    }
    if (attempt < config_.retry.max_attempts) {
      const auto delay = backoff_delay(config_.retry, attempt, jitter_draw());
      spdlog::debug("retrying completion after {} ({:.3f}s)", last_error, delay.count());
      sleeper_(delay);
    }
  }
  if (rate_limited) {
    throw RateLimitError("rate limited after " + std::to_string(config_.retry.max_attempts) +
                         " attempts: " + last_error);
  }
  throw EndpointError("endpoint failed after " + std::to_string(config_.retry.max_attempts) +
                      " attempts: " + last_error);
}

}  // namespace riskbench
