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

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace t4t {

struct GenerationRequest {
  std::string system_prompt;
  std::string user_prompt;
  double temperature = 0.0;
  int max_tokens = 1024;
  double top_p = 1.0;
  int n_samples = 1;
  std::string model_id;
  /// Distinguishes otherwise identical stochastic requests (self-consistency
  /// samples) so that each gets its own cache entry.
  std::uint64_t sample_tag = 0;

  bool operator==(const GenerationRequest&) const = default;
};

struct GenerationResult {
  std::vector<std::string> completions;
  nlohmann::json provider_meta = nlohmann::json::object();
  bool cache_hit = false;
  std::string digest;
};

struct ProviderConfig {
  std::string endpoint;         // empty or "mock:" for offline backends
  std::string credentials_env;  // name of the environment variable holding the key
  std::size_t max_concurrent = 4;
  std::size_t requests_per_minute = 60;
  std::size_t max_retries = 5;
  std::chrono::milliseconds backoff_base{500};
  std::chrono::milliseconds timeout{120000};

  bool is_remote() const;
};

// ---------------------------------------------------------------------------
// Errors

class ProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Retryable failure (network error, 429, 5xx). Raised by backends only.
class TransientError : public ProviderError {
 public:
  TransientError(int status, const std::string& what) : ProviderError(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

/// Retries exhausted; carries the last observed status (0 for network errors).
class TransportError : public ProviderError {
 public:
  TransportError(int status, const std::string& what) : ProviderError(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

/// Credentials missing or rejected. Never retried.
class AuthError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

/// Provider reported the prompt as too long.
class InputError : public ProviderError {
 public:
  InputError(std::size_t prompt_chars, const std::string& what)
      : ProviderError(what), prompt_chars_(prompt_chars) {}
  std::size_t prompt_chars() const { return prompt_chars_; }

 private:
  std::size_t prompt_chars_;
};

/// Non-transient client error (4xx other than 401/403/429). Never retried.
class RejectedError : public ProviderError {
 public:
  RejectedError(int status, const std::string& what) : ProviderError(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

/// Request violates interface rules (e.g. several samples at temperature 0).
class RequestError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

/// The mock backend has no script entry for a request.
class ScriptedMissError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

// ---------------------------------------------------------------------------

/// Canonical JSON encoding of every request field, sorted keys, no spaces.
std::string canonical_request(const GenerationRequest& r);
/// SHA-256 of canonical_request, lowercase hex (64 chars).
std::string cache_key(const GenerationRequest& r);

/// Throws RequestError when the request violates the interface rules.
void validate_request(const GenerationRequest& r);

class Clock {
 public:
  using time_point = std::chrono::steady_clock::time_point;
  virtual ~Clock() = default;
  virtual time_point now() = 0;
  virtual void sleep_for(std::chrono::nanoseconds d) = 0;
};

class SteadyClock final : public Clock {
 public:
  time_point now() override { return std::chrono::steady_clock::now(); }
  void sleep_for(std::chrono::nanoseconds d) override;
};

/// Sliding 60-second window limiter; 0 requests per minute means unlimited.
class RateLimiter {
 public:
  RateLimiter(std::size_t per_minute, std::shared_ptr<Clock> clock);
  void acquire();

 private:
  std::size_t per_minute_;
  std::shared_ptr<Clock> clock_;
  std::mutex mu_;
  std::deque<Clock::time_point> issued_;
};

class Semaphore {
 public:
  explicit Semaphore(std::size_t n) : free_(n) {}
  void acquire();
  void release();

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t free_;
};

/// One file per digest under `<root>/<model_id>/<digest>`.
class ResultCache {
 public:
  explicit ResultCache(std::filesystem::path root) : root_(std::move(root)) {}

  std::optional<GenerationResult> get(const std::string& model_id, const std::string& digest) const;
  void put(const std::string& model_id, const std::string& digest, const GenerationResult& r) const;
  std::filesystem::path path_for(const std::string& model_id, const std::string& digest) const;

 private:
  std::filesystem::path root_;
};

struct BackendResponse {
  std::vector<std::string> completions;
  nlohmann::json meta = nlohmann::json::object();
};

/// A text-generation backend. Implementations throw the ProviderError family.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendResponse complete(const GenerationRequest& request) = 0;
};

/// Front door for every generation: validation, caching, rate limiting,
/// concurrency bound and retries around a Backend.
class Provider {
 public:
  Provider(std::shared_ptr<Backend> backend, ProviderConfig config,
           std::optional<std::filesystem::path> cache_dir = std::nullopt,
           std::shared_ptr<Clock> clock = std::make_shared<SteadyClock>());

  GenerationResult generate(const GenerationRequest& request);

  const ProviderConfig& config() const { return config_; }
  /// Number of generate() calls, cached or not.
  std::size_t requests() const { return requests_.load(); }
  /// Number of backend invocations including retries.
  std::size_t backend_calls() const { return backend_calls_.load(); }

 private:
  BackendResponse call_with_retries(const GenerationRequest& request);

  std::shared_ptr<Backend> backend_;
  ProviderConfig config_;
  std::optional<ResultCache> cache_;
  std::shared_ptr<Clock> clock_;
  RateLimiter limiter_;
  Semaphore slots_;
  std::atomic<std::size_t> requests_{0};
  std::atomic<std::size_t> backend_calls_{0};
};

// ---------------------------------------------------------------------------
// Mock backend

struct MockRule {
  std::string description;
  std::function<bool(const GenerationRequest&)> match;
  std::vector<std::string> completions;
};

/// Ordered script: the first matching rule answers.
class MockScript {
 public:
  using Responder = std::function<std::optional<std::vector<std::string>>(const GenerationRequest&)>;

  MockScript& on_contains(std::string needle, std::vector<std::string> completions);
  MockScript& on_all(std::vector<std::string> needles, std::vector<std::string> completions);
  MockScript& on(std::string description, std::function<bool(const GenerationRequest&)> pred,
                 std::vector<std::string> completions);
  /// Computed answers; returning nullopt falls through to the next entry.
  MockScript& respond(std::string description, Responder fn);

  /// Loads `[{"contains": "..."|["...", ...], "completions": [...]}, ...]`.
  static MockScript from_json(const nlohmann::json& j);

  struct Entry {
    std::string description;
    Responder fn;
  };
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
};

class MockBackend final : public Backend {
 public:
  explicit MockBackend(MockScript script) : script_(std::move(script)) {}

  BackendResponse complete(const GenerationRequest& request) override;

  std::vector<GenerationRequest> captured() const;
  std::size_t calls() const;

 private:
  MockScript script_;
  mutable std::mutex mu_;
  std::vector<GenerationRequest> captured_;
};

// ---------------------------------------------------------------------------
// Remote chat-completion backend

/// Reads the key named by `credentials_env`; throws AuthError when unset.
std::string resolve_credentials(const ProviderConfig& config);

/// OpenAI-style /chat/completions over HTTP(S) with JSON bodies.
class ChatCompletionsBackend final : public Backend {
 public:
  explicit ChatCompletionsBackend(ProviderConfig config);
  BackendResponse complete(const GenerationRequest& request) override;

  static nlohmann::json request_body(const GenerationRequest& request);
  /// Maps an HTTP status + body to a response or the matching error.
  static BackendResponse interpret(int status, const std::string& body,
                                   const GenerationRequest& request);

 private:
  ProviderConfig config_;
  std::string api_key_;
};

}  // namespace t4t
