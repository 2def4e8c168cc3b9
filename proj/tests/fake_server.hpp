#pragma once

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cmath>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

namespace testutil {

/// Local completions server with a scripted sequence of statuses.
class FakeServer {
 public:
  explicit FakeServer(std::vector<int> statuses, nlohmann::json success_body = default_body())
      : statuses_(std::move(statuses)), success_body_(std::move(success_body)) {
    server_.Post("/v1/completions", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mutex_);
      bodies.push_back(req.body);
      authorization.push_back(req.get_header_value("Authorization"));
      const int status = hits_ < statuses_.size() ? statuses_[hits_] : statuses_.back();
      ++hits_;
      res.status = status;
      res.set_content(status == 200 ? success_body_.dump() : R"({"error":"nope"})", "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }
  std::size_t hits() const {
    std::lock_guard lock(mutex_);
    return hits_;
  }

  static nlohmann::json default_body() {
    return {{"choices",
             {{{"text", " A"},
               {"logprobs", {{"top_logprobs", {{{" A", std::log(0.6)}, {" B", std::log(0.3)}}}}}}}}}};
  }

  std::vector<std::string> bodies;
  std::vector<std::string> authorization;

 private:
  httplib::Server server_;
  std::vector<int> statuses_;
  nlohmann::json success_body_;
  mutable std::mutex mutex_;
  std::size_t hits_ = 0;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace testutil
