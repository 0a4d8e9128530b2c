// SPDX-License-Identifier: Apache-2.0
// Eigen must precede httplib.h: <resolv.h> defines a `_res` macro that
// collides with Eigen parameter names.
#include "smtpo/agents.hpp"

#include <cstdlib>
#include <thread>

#include <spdlog/spdlog.h>

#include "http_util.hpp"
#include "httplib.h"
#include "json.hpp"

namespace smtpo {

namespace detail {

std::string post_json(const std::string& base_url, const std::string& path,
                      const std::string& body, std::chrono::milliseconds timeout) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos)
    throw ConfigError("base url '" + base_url + "' lacks a scheme (http:// or https://)");
  const auto path_start = base_url.find('/', scheme_end + 3);
  const std::string origin = base_url.substr(0, path_start);
  std::string prefix = path_start == std::string::npos ? "" : base_url.substr(path_start);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

  httplib::Client client(origin);
  if (!client.is_valid()) throw ConfigError("unsupported base url '" + base_url + "'");
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers;
  if (const char* key = std::getenv("SMTPO_API_KEY"); key && *key)
    headers.emplace("Authorization", std::string("Bearer ") + key);

  auto res = client.Post(prefix + path, headers, body, "application/json");
  if (!res)
    throw BackendError("request to " + origin + prefix + path + " failed: " +
                           httplib::to_string(res.error()),
                       true);
  if (res->status == 429 || res->status >= 500)
    throw BackendError("HTTP " + std::to_string(res->status) + " from " + origin, true);
  if (res->status < 200 || res->status >= 300)
    throw BackendError("HTTP " + std::to_string(res->status) + " from " + origin + ": " +
                           res->body.substr(0, 200),
                       false);
  return res->body;
}

}  // namespace detail

HttpChatBackend::HttpChatBackend(HttpOptions options) : options_(std::move(options)) {
  if (options_.base_url.empty()) {
    if (const char* env = std::getenv("SMTPO_API_BASE")) options_.base_url = env;
  }
  if (options_.base_url.empty())
    throw ConfigError("http backend needs a base url (config or SMTPO_API_BASE)");
  if (options_.max_attempts < 1) throw ConfigError("http max_attempts must be >= 1");
  if (options_.max_in_flight < 1) throw ConfigError("http max_in_flight must be >= 1");
}

std::string HttpChatBackend::complete(const AgentRequest& request) const {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  const nlohmann::json body{{"model", options_.model},
                            {"messages", messages},
                            {"temperature", options_.temperature},
                            {"max_tokens", options_.max_tokens}};
  const std::string payload = body.dump();

  {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return in_flight_ < options_.max_in_flight; });
    ++in_flight_;
  }
  struct Release {
    const HttpChatBackend* self;
    ~Release() {
      {
        std::lock_guard lock(self->mu_);
        --self->in_flight_;
      }
      self->cv_.notify_one();
    }
  } release{this};

  auto backoff = options_.initial_backoff;
  for (int attempt = 1;; ++attempt) {
    try {
      const std::string raw =
          detail::post_json(options_.base_url, "/chat/completions", payload, options_.timeout);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(raw);
        return j.at("choices").at(0).at("message").at("content").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("malformed chat completion: ") + e.what(), false);
      }
    } catch (const BackendError& e) {
      if (!e.retriable() || attempt >= options_.max_attempts) throw;
      spdlog::warn("chat completion attempt {} failed ({}); retrying in {} ms", attempt, e.what(),
                   backoff.count());
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
}

}  // namespace smtpo
