// Copyright 2026 The t4t Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include <chrono>
#include <regex>

#include "httplib.h"
#include "t4t/provider.hpp"
#include "t4t/text.hpp"

namespace t4t {

namespace {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

Url split_url(const std::string& endpoint) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(endpoint, m, re)) throw ProviderError("bad endpoint URL: " + endpoint);
  return {m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
}

bool looks_like_context_overflow(const std::string& body) {
  const std::string lower = text::to_lower(body);
  return text::contains(lower, "context_length") || text::contains(lower, "maximum context") ||
         text::contains(lower, "too many tokens") || text::contains(lower, "too long");
}

}  // namespace

ChatCompletionsBackend::ChatCompletionsBackend(ProviderConfig config)
    : config_(std::move(config)), api_key_(resolve_credentials(config_)) {
  split_url(config_.endpoint);
}

nlohmann::json ChatCompletionsBackend::request_body(const GenerationRequest& r) {
  nlohmann::json body;
  body["model"] = r.model_id;
  body["messages"] = nlohmann::json::array({
      {{"role", "system"}, {"content", r.system_prompt}},
      {{"role", "user"}, {"content", r.user_prompt}},
  });
  body["temperature"] = r.temperature;
  body["max_tokens"] = r.max_tokens;
  body["top_p"] = r.top_p;
  body["n"] = r.n_samples;
  return body;
}

BackendResponse ChatCompletionsBackend::interpret(int status, const std::string& body,
                                                  const GenerationRequest& r) {
  const std::size_t prompt_chars = r.system_prompt.size() + r.user_prompt.size();
  if (status == 401 || status == 403) {
    throw AuthError("provider rejected credentials (HTTP " + std::to_string(status) + ")");
  }
  if (status == 429 || status >= 500) {
    throw TransientError(status, "HTTP " + std::to_string(status) + ": " + body.substr(0, 200));
  }
  if (status == 400 && looks_like_context_overflow(body)) {
    throw InputError(prompt_chars, "prompt of " + std::to_string(prompt_chars) +
                                       " characters exceeds the model context: " +
                                       body.substr(0, 200));
  }
  if (status < 200 || status >= 300) {
    throw RejectedError(status, "HTTP " + std::to_string(status) + ": " + body.substr(0, 200));
  }

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw TransientError(status, std::string("unparseable provider response: ") + e.what());
  }
  BackendResponse out;
  for (const auto& choice : j.value("choices", nlohmann::json::array())) {
    const auto& msg = choice.value("message", nlohmann::json::object());
    out.completions.push_back(msg.value("content", std::string()));
  }
  if (j.contains("usage")) out.meta["usage"] = j["usage"];
  return out;
}

BackendResponse ChatCompletionsBackend::complete(const GenerationRequest& request) {
  const Url url = split_url(config_.endpoint);
  httplib::Client cli(url.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout).count();
  cli.set_connection_timeout(10, 0);
  cli.set_read_timeout(secs, 0);
  cli.set_write_timeout(secs, 0);
  httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};

  const auto start = std::chrono::steady_clock::now();
  auto res = cli.Post(url.path, headers, request_body(request).dump(), "application/json");
  if (!res) {
    throw TransientError(0, "network error: " + httplib::to_string(res.error()));
  }
  BackendResponse out = interpret(res->status, res->body, request);
  out.meta["latency_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(
                               std::chrono::steady_clock::now() - start)
                               .count();
  out.meta["backend"] = "chat-completions";
  return out;
}

}  // namespace t4t
