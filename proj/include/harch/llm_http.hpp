#pragma once

// OpenAI-compatible chat-completions client. Define
// CPPHTTPLIB_OPENSSL_SUPPORT and link OpenSSL for https endpoints.

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <string>

#include "harch/error.hpp"
#include "harch/prompting.hpp"

namespace harch {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // prefix without trailing slash
};

inline Endpoint split_base_url(const std::string& base_url) {
  auto scheme = base_url.find("://");
  if (scheme == std::string::npos) fail(ErrorKind::kConfig, "base_url needs a scheme: " + base_url);
  auto slash = base_url.find('/', scheme + 3);
  Endpoint e;
  e.origin = base_url.substr(0, slash);
  e.path = slash == std::string::npos ? "" : base_url.substr(slash);
  while (!e.path.empty() && e.path.back() == '/') e.path.pop_back();
  return e;
}

class OpenAiCompatibleClient final : public LlmClient {
 public:
  // The API key is read from the environment variable named in the config;
  // an unset variable means no Authorization header.
  explicit OpenAiCompatibleClient(const LlmClientConfig& config) : config_(config), endpoint_(split_base_url(config.base_url)) {
    if (const char* key = std::getenv(config.api_key_env.c_str())) api_key_ = key;
  }

  std::string complete(const ChatRequest& request) override {
    httplib::Client client(endpoint_.origin);
    client.set_connection_timeout(config_.timeout_seconds);
    client.set_read_timeout(config_.timeout_seconds);
    client.set_write_timeout(config_.timeout_seconds);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = client.Post(endpoint_.path + "/chat/completions", headers, request.to_json().dump(), "application/json");
    if (!res) fail(ErrorKind::kTransportError, "request failed: " + httplib::to_string(res.error()));
    if (res->status != 200) {
      fail(ErrorKind::kTransportError, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }
    try {
      auto body = nlohmann::json::parse(res->body);
      return body.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kTransportError, std::string("unexpected response body: ") + e.what());
    }
  }

 private:
  LlmClientConfig config_;
  Endpoint endpoint_;
  std::string api_key_;
};

}  // namespace harch
