#pragma once

// Remote chat-model handle. Pulls in the HTTP stack, so include this only
// where remote handles are constructed.

#include <memory>
#include <mutex>

#include "httplib.h"

#include "cotsteer/adapter/chat_client.hpp"
#include "cotsteer/adapter/handle.hpp"

namespace cotsteer::adapter {

namespace detail {

class HttplibTransport : public HttpTransport {
 public:
  HttplibTransport(const std::string& base_url, double timeout_s)
      : cli_(base_url) {
    cli_.set_connection_timeout(std::chrono::duration<double>(timeout_s));
    cli_.set_read_timeout(std::chrono::duration<double>(timeout_s));
    cli_.set_write_timeout(std::chrono::duration<double>(timeout_s));
  }

  HttpResult post_json(const std::string& path,
                       const std::vector<std::pair<std::string, std::string>>& headers,
                       const std::string& body) override {
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = cli_.Post(path, h, body, "application/json");
    HttpResult out;
    if (!res) {
      out.transport_error = true;
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    if (res->has_header("Retry-After")) out.retry_after = res->get_header_value("Retry-After");
    return out;
  }

 private:
  httplib::Client cli_;
};

class RemoteHandle : public ModelHandle {
 public:
  RemoteHandle(RemoteConfig cfg, ClientEnv env) {
    if (!cfg.base_url_env.empty()) {
      if (const char* v = std::getenv(cfg.base_url_env.c_str()); v && *v) cfg.base_url = v;
      cfg.base_url_env.clear();
    }
    if (cfg.base_url.empty()) fail(Errc::config_invalid, "remote base_url is empty");
    if (!env.transport)
      env.transport = std::make_shared<HttplibTransport>(cfg.base_url, cfg.timeout_s);
    caps_ = {Capability::generate};
    if (cfg.supports_logprobs) caps_.insert(Capability::answer_probs);
    client_ = std::make_unique<ChatClient>(std::move(cfg), std::move(env));
  }

  std::string kind() const override { return "remote"; }
  const std::set<Capability>& capabilities() const override { return caps_; }

  std::string generate_text(const std::string& prompt, const GenOptions& opt) const override {
    ChatRequest req;
    req.messages = {{"user", prompt}};
    req.temperature = opt.tau;
    req.max_tokens = opt.max_new_tokens;
    req.seed = opt.seed;
    std::lock_guard<std::mutex> lock(mu_);
    return client_->complete(req).text;
  }

  std::vector<double> answer_probs(const std::string& prompt,
                                   const std::vector<std::string>& option_labels) const override {
    if (!has(Capability::answer_probs))
      fail(Errc::capability_missing, "remote model does not expose token logprobs");
    if (option_labels.empty()) fail(Errc::unknown_option, "no option labels given");
    ChatRequest req;
    req.messages = {{"user", prompt}};
    req.temperature = 0.0;
    req.max_tokens = 1;
    req.logprobs = true;
    ChatResponse res;
    {
      std::lock_guard<std::mutex> lock(mu_);
      res = client_->complete(req);
    }
    if (res.top_logprobs.empty() || res.top_logprobs[0].empty())
      fail(Errc::malformed_logprobs, "response carries no token logprobs");

    constexpr double kFloor = 1e-6;
    std::vector<double> p(option_labels.size(), kFloor);
    for (size_t i = 0; i < option_labels.size(); ++i) {
      for (const auto& t : res.top_logprobs[0]) {
        std::string tok = t.token;
        const size_t a = tok.find_first_not_of(" \t");
        if (a != std::string::npos) tok = tok.substr(a, tok.find_last_not_of(" \t") - a + 1);
        if (tok == option_labels[i]) {
          p[i] = std::max(kFloor, std::exp(t.logprob));
          break;
        }
      }
    }
    double sum = 0;
    for (double x : p) sum += x;
    for (double& x : p) x /= sum;
    return p;
  }

  std::vector<lm::HeadActivation> capture_head_activations(
      const std::string&, const std::vector<lm::CaptureSpec>&) const override {
    fail(Errc::capability_missing, "remote models do not expose activations");
  }

 private:
  std::unique_ptr<ChatClient> client_;
  std::set<Capability> caps_;
  mutable std::mutex mu_;
};

}  // namespace detail

inline HandlePtr make_remote_handle(RemoteConfig cfg, ClientEnv env = {}) {
  return std::make_shared<detail::RemoteHandle>(std::move(cfg), std::move(env));
}

}  // namespace cotsteer::adapter
