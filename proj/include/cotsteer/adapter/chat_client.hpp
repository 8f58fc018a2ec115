#pragma once

// Chat-completion HTTP client. Transport, sleep, and clock are injectable so
// retry/backoff and rate limiting are testable without sockets or real time.
// Every call attempt is appended to a JSONL log with request and response
// bodies verbatim; the bearer token lives only in a header and is never
// logged.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "cotsteer/common/errors.hpp"
#include "cotsteer/common/rng.hpp"
#include "cotsteer/common/textio.hpp"

namespace cotsteer::adapter {

struct RemoteConfig {
  std::string base_url;      // e.g. "http://127.0.0.1:8080"
  std::string base_url_env;  // optional env var that overrides base_url when set
  std::string model;
  std::string api_key_env;  // env var NAME holding the bearer token; empty sends no auth
  std::string path = "/v1/chat/completions";
  bool supports_logprobs = true;
  int top_logprobs = 20;
  int max_retries = 5;
  double backoff_base_ms = 500.0;
  double requests_per_second = 4.0;
  double bucket_capacity = 4.0;
  int max_in_flight = 2;
  uint64_t seed = 0;
  double timeout_s = 30.0;
  std::filesystem::path call_log;  // empty disables logging
};

struct ChatMessage {
  std::string role, content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 64;
  uint64_t seed = 0;
  bool logprobs = false;
};

struct TokenLogprob {
  std::string token;
  double logprob;
};

struct ChatResponse {
  std::string text;
  std::vector<std::vector<TokenLogprob>> top_logprobs;  // per generated token
  std::string finish_reason;
};

struct HttpResult {
  bool transport_error = false;
  std::string error;  // transport failure description
  int status = 0;
  std::string body;
  std::string retry_after;  // Retry-After header if present
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResult post_json(const std::string& path,
                               const std::vector<std::pair<std::string, std::string>>& headers,
                               const std::string& body) = 0;
};

struct ClientEnv {
  std::shared_ptr<HttpTransport> transport;   // null: real HTTP
  std::function<void(double)> sleep_ms;       // null: real sleep
  std::function<double()> now_ms;             // null: steady_clock
};

class ChatClient {
 public:
  explicit ChatClient(RemoteConfig cfg, ClientEnv env = {});

  ChatResponse complete(const ChatRequest& req);

  const RemoteConfig& config() const { return cfg_; }

 private:
  void throttle();
  std::string auth_token() const;
  void log_attempt(const nlohmann::ordered_json& entry);

  RemoteConfig cfg_;
  std::shared_ptr<HttpTransport> transport_;
  std::function<void(double)> sleep_ms_;
  std::function<double()> now_ms_;
  Rng jitter_;
  double bucket_tokens_;
  double bucket_stamp_ms_;
  int in_flight_ = 0;
};

namespace detail {

inline bool retryable_status(int status) {
  return status == 408 || status == 429 || (status >= 500 && status < 600);
}

inline ChatResponse parse_chat_response(const std::string& body) {
  nlohmann::json j = nlohmann::json::parse(body, nullptr, false);
  if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() ||
      j["choices"].empty())
    fail(Errc::format_error, "chat response has no choices");
  const auto& choice = j["choices"][0];
  ChatResponse out;
  if (choice.contains("message") && choice["message"].contains("content") &&
      choice["message"]["content"].is_string())
    out.text = choice["message"]["content"].get<std::string>();
  else
    fail(Errc::format_error, "chat response has no message content");
  if (choice.contains("finish_reason") && choice["finish_reason"].is_string())
    out.finish_reason = choice["finish_reason"].get<std::string>();
  if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
      choice["logprobs"].contains("content") && choice["logprobs"]["content"].is_array()) {
    for (const auto& tok : choice["logprobs"]["content"]) {
      std::vector<TokenLogprob> top;
      if (tok.contains("top_logprobs") && tok["top_logprobs"].is_array()) {
        for (const auto& t : tok["top_logprobs"]) {
          if (!t.contains("token") || !t.contains("logprob") || !t["token"].is_string() ||
              !t["logprob"].is_number())
            fail(Errc::malformed_logprobs, "top_logprobs entry lacks token/logprob");
          top.push_back({t["token"].get<std::string>(), t["logprob"].get<double>()});
        }
      }
      out.top_logprobs.push_back(std::move(top));
    }
  }
  return out;
}

}  // namespace detail

inline ChatClient::ChatClient(RemoteConfig cfg, ClientEnv env)
    : cfg_(std::move(cfg)),
      transport_(std::move(env.transport)),
      sleep_ms_(std::move(env.sleep_ms)),
      now_ms_(std::move(env.now_ms)),
      jitter_(cfg_.seed),
      bucket_tokens_(cfg_.bucket_capacity) {
  if (!cfg_.base_url_env.empty()) {
    if (const char* v = std::getenv(cfg_.base_url_env.c_str()); v && *v) cfg_.base_url = v;
  }
  if (cfg_.base_url.empty()) fail(Errc::config_invalid, "remote base_url is empty");
  if (!transport_) fail(Errc::config_invalid, "chat client needs a transport");
  if (cfg_.max_retries < 0 || cfg_.requests_per_second <= 0 || cfg_.bucket_capacity < 1 ||
      cfg_.max_in_flight < 1)
    fail(Errc::config_invalid, "bad remote client limits");
  if (!sleep_ms_)
    sleep_ms_ = [](double ms) {
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
    };
  if (!now_ms_)
    now_ms_ = [] {
      return std::chrono::duration<double, std::milli>(
                 std::chrono::steady_clock::now().time_since_epoch())
          .count();
    };
  bucket_stamp_ms_ = now_ms_();
}

inline std::string ChatClient::auth_token() const {
  if (cfg_.api_key_env.empty()) return "";
  const char* v = std::getenv(cfg_.api_key_env.c_str());
  if (!v || !*v)
    fail(Errc::config_invalid, "environment variable not set: " + cfg_.api_key_env);
  return v;
}

inline void ChatClient::throttle() {
  while (in_flight_ >= cfg_.max_in_flight) sleep_ms_(1.0);
  const double now = now_ms_();
  bucket_tokens_ = std::min(cfg_.bucket_capacity,
                            bucket_tokens_ + (now - bucket_stamp_ms_) *
                                                 cfg_.requests_per_second / 1000.0);
  bucket_stamp_ms_ = now;
  if (bucket_tokens_ < 1.0) {
    const double wait = (1.0 - bucket_tokens_) * 1000.0 / cfg_.requests_per_second;
    sleep_ms_(wait);
    bucket_tokens_ = 1.0;
    bucket_stamp_ms_ = now_ms_();
  }
  bucket_tokens_ -= 1.0;
}

inline void ChatClient::log_attempt(const nlohmann::ordered_json& entry) {
  if (cfg_.call_log.empty()) return;
  append_text(cfg_.call_log, entry.dump() + "\n");
}

inline ChatResponse ChatClient::complete(const ChatRequest& req) {
  nlohmann::ordered_json body;
  body["model"] = cfg_.model;
  body["messages"] = nlohmann::ordered_json::array();
  for (const auto& m : req.messages) body["messages"].push_back({{"role", m.role},
                                                                 {"content", m.content}});
  body["temperature"] = req.temperature;
  body["max_tokens"] = req.max_tokens;
  body["seed"] = req.seed;
  if (req.logprobs) {
    body["logprobs"] = true;
    body["top_logprobs"] = cfg_.top_logprobs;
  }
  const std::string body_str = body.dump();

  std::vector<std::pair<std::string, std::string>> headers;
  const std::string token = auth_token();
  if (!token.empty()) headers.push_back({"Authorization", "Bearer " + token});

  std::string last_error;
  std::string last_retry_after;
  int last_status = 0;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    throttle();
    ++in_flight_;
    HttpResult res;
    try {
      res = transport_->post_json(cfg_.path, headers, body_str);
    } catch (...) {
      --in_flight_;
      throw;
    }
    --in_flight_;

    nlohmann::ordered_json entry;
    entry["path"] = cfg_.path;
    entry["model"] = cfg_.model;
    entry["attempt"] = attempt;
    entry["request"] = body;
    if (res.transport_error) {
      entry["outcome"] = "transport_error";
      entry["error"] = res.error;
    } else {
      entry["status"] = res.status;
      entry["response"] = res.body;
      if (!res.retry_after.empty()) entry["retry_after"] = res.retry_after;
    }

    const bool retryable = res.transport_error || detail::retryable_status(res.status);
    if (!res.transport_error && res.status == 200) {
      entry["outcome"] = "ok";
      log_attempt(entry);
      return detail::parse_chat_response(res.body);
    }
    last_status = res.transport_error ? 0 : res.status;
    last_error = res.transport_error ? res.error : ("http status " + std::to_string(res.status));
    last_retry_after = res.retry_after;

    if (!retryable) {
      entry["outcome"] = "failed";
      log_attempt(entry);
      fail(Errc::bad_request, "remote call rejected: " + last_error);
    }
    if (attempt == cfg_.max_retries) {
      entry["outcome"] = "gave_up";
      log_attempt(entry);
      break;
    }
    double wait = cfg_.backoff_base_ms * double(1ull << attempt) *
                  (0.5 + jitter_.next_double());
    if (!res.retry_after.empty()) {
      char* end = nullptr;
      const double ra_s = std::strtod(res.retry_after.c_str(), &end);
      if (end != res.retry_after.c_str() && ra_s > 0) wait = std::max(wait, ra_s * 1000.0);
    }
    entry["outcome"] = "retry";
    entry["retry_in_ms"] = wait;
    log_attempt(entry);
    sleep_ms_(wait);
  }

  if (last_status == 429)
    fail(Errc::rate_limited, "rate limited after " + std::to_string(cfg_.max_retries + 1) +
                                 " attempts; retry-after=" +
                                 (last_retry_after.empty() ? "unknown" : last_retry_after));
  fail(Errc::transport, "remote call failed after " + std::to_string(cfg_.max_retries + 1) +
                            " attempts: " + last_error);
}

}  // namespace cotsteer::adapter
