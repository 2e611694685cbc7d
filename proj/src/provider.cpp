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

#include "t4t/provider.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <thread>

#include "t4t/text.hpp"

namespace t4t {

bool ProviderConfig::is_remote() const {
  return endpoint.rfind("http://", 0) == 0 || endpoint.rfind("https://", 0) == 0;
}

std::string canonical_request(const GenerationRequest& r) {
  nlohmann::json j;  // std::map-backed: keys come out sorted
  j["system_prompt"] = r.system_prompt;
  j["user_prompt"] = r.user_prompt;
  j["temperature"] = r.temperature;
  j["max_tokens"] = r.max_tokens;
  j["top_p"] = r.top_p;
  j["n_samples"] = r.n_samples;
  j["model_id"] = r.model_id;
  j["sample_tag"] = r.sample_tag;
  return j.dump();
}

std::string cache_key(const GenerationRequest& r) {
  const std::string canon = canonical_request(r);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(canon.data(), canon.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw ProviderError("sha256 failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  }
  return os.str();
}

void validate_request(const GenerationRequest& r) {
  if (!(r.temperature >= 0.0)) throw RequestError("temperature must be >= 0");
  if (r.max_tokens <= 0) throw RequestError("max_tokens must be positive");
  if (!(r.top_p > 0.0 && r.top_p <= 1.0)) throw RequestError("top_p must be in (0, 1]");
  if (r.n_samples <= 0) throw RequestError("n_samples must be positive");
  if (r.temperature == 0.0 && r.n_samples > 1)
    throw RequestError("n_samples > 1 requires temperature > 0");
  if (r.model_id.empty()) throw RequestError("model_id is empty");
}

void SteadyClock::sleep_for(std::chrono::nanoseconds d) { std::this_thread::sleep_for(d); }

// ---------------------------------------------------------------------------

RateLimiter::RateLimiter(std::size_t per_minute, std::shared_ptr<Clock> clock)
    : per_minute_(per_minute), clock_(std::move(clock)) {}

void RateLimiter::acquire() {
  if (per_minute_ == 0) return;  // unlimited
  constexpr auto window = std::chrono::seconds(60);
  std::unique_lock lock(mu_);
  for (;;) {
    const auto now = clock_->now();
    while (!issued_.empty() && issued_.front() + window <= now) issued_.pop_front();
    if (issued_.size() < per_minute_) {
      issued_.push_back(now);
      return;
    }
    const auto wait = issued_.front() + window - now;
    lock.unlock();
    clock_->sleep_for(wait);
    lock.lock();
  }
}

void Semaphore::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return free_ > 0; });
  --free_;
}

void Semaphore::release() {
  {
    std::lock_guard lock(mu_);
    ++free_;
  }
  cv_.notify_one();
}

// ---------------------------------------------------------------------------

namespace {

std::string safe_component(const std::string& s) {
  std::string out;
  for (char c : s) {
    const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
    out += ok ? c : '_';
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

}  // namespace

std::filesystem::path ResultCache::path_for(const std::string& model_id,
                                            const std::string& digest) const {
  return root_ / safe_component(model_id) / digest;
}

std::optional<GenerationResult> ResultCache::get(const std::string& model_id,
                                                 const std::string& digest) const {
  const auto p = path_for(model_id, digest);
  std::ifstream in(p, std::ios::binary);
  if (!in) return std::nullopt;
  try {
    const auto j = nlohmann::json::parse(in);
    GenerationResult r;
    r.completions = j.at("completions").get<std::vector<std::string>>();
    r.provider_meta = j.value("provider_meta", nlohmann::json::object());
    r.cache_hit = true;
    r.digest = digest;
    return r;
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;  // torn or foreign file; regenerate
  }
}

void ResultCache::put(const std::string& model_id, const std::string& digest,
                      const GenerationResult& r) const {
  const auto p = path_for(model_id, digest);
  std::filesystem::create_directories(p.parent_path());
  nlohmann::json j;
  j["completions"] = r.completions;
  j["provider_meta"] = r.provider_meta;
  std::ostringstream tid;
  tid << std::this_thread::get_id();
  const auto tmp = p.string() + ".tmp." + tid.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << j.dump() << '\n';
    if (!out) throw ProviderError("cannot write cache entry " + tmp);
  }
  std::filesystem::rename(tmp, p);  // last writer wins
}

// ---------------------------------------------------------------------------

Provider::Provider(std::shared_ptr<Backend> backend, ProviderConfig config,
                   std::optional<std::filesystem::path> cache_dir, std::shared_ptr<Clock> clock)
    : backend_(std::move(backend)),
      config_(std::move(config)),
      clock_(std::move(clock)),
      limiter_(config_.requests_per_minute, clock_),
      slots_(config_.max_concurrent == 0 ? 1 : config_.max_concurrent) {
  if (config_.max_concurrent == 0) throw RequestError("max_concurrent must be >= 1");
  if (cache_dir) cache_.emplace(*cache_dir);
}

GenerationResult Provider::generate(const GenerationRequest& request) {
  validate_request(request);
  ++requests_;
  const std::string digest = cache_key(request);
  if (cache_) {
    if (auto hit = cache_->get(request.model_id, digest)) return *hit;
  }

  BackendResponse resp = call_with_retries(request);
  if (resp.completions.size() != static_cast<std::size_t>(request.n_samples)) {
    throw ProviderError("backend returned " + std::to_string(resp.completions.size()) +
                        " completions, expected " + std::to_string(request.n_samples));
  }
  GenerationResult r;
  r.completions = std::move(resp.completions);
  r.provider_meta = std::move(resp.meta);
  r.cache_hit = false;
  r.digest = digest;
  if (cache_) cache_->put(request.model_id, digest, r);
  return r;
}

BackendResponse Provider::call_with_retries(const GenerationRequest& request) {
  int last_status = 0;
  std::string last_message;
  for (std::size_t attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) {
      const auto delay = config_.backoff_base * (1LL << std::min<std::size_t>(attempt - 1, 16));
      clock_->sleep_for(delay);
    }
    limiter_.acquire();
    slots_.acquire();
    ++backend_calls_;
    try {
      BackendResponse r = backend_->complete(request);
      slots_.release();
      return r;
    } catch (const TransientError& e) {
      slots_.release();
      last_status = e.status();
      last_message = e.what();
    } catch (...) {
      slots_.release();
      throw;
    }
  }
  throw TransportError(last_status, "retries exhausted after " +
                                        std::to_string(config_.max_retries + 1) +
                                        " attempts; last error: " + last_message);
}

// ---------------------------------------------------------------------------
// Mock

MockScript& MockScript::on_contains(std::string needle, std::vector<std::string> completions) {
  return on_all({std::move(needle)}, std::move(completions));
}

MockScript& MockScript::on_all(std::vector<std::string> needles,
                               std::vector<std::string> completions) {
  std::string desc = "contains";
  for (const auto& n : needles) desc += " \"" + n.substr(0, 40) + "\"";
  auto pred = [needles = std::move(needles)](const GenerationRequest& r) {
    for (const auto& n : needles) {
      if (!text::contains(r.user_prompt, n) && !text::contains(r.system_prompt, n)) return false;
    }
    return true;
  };
  return on(std::move(desc), std::move(pred), std::move(completions));
}

MockScript& MockScript::on(std::string description,
                           std::function<bool(const GenerationRequest&)> pred,
                           std::vector<std::string> completions) {
  auto fn = [pred = std::move(pred), completions = std::move(completions)](
                const GenerationRequest& r) -> std::optional<std::vector<std::string>> {
    if (!pred(r)) return std::nullopt;
    return completions;
  };
  entries_.push_back({std::move(description), std::move(fn)});
  return *this;
}

MockScript& MockScript::respond(std::string description, Responder fn) {
  entries_.push_back({std::move(description), std::move(fn)});
  return *this;
}

MockScript MockScript::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw std::invalid_argument("mock script must be a JSON array");
  MockScript s;
  for (const auto& e : j) {
    std::vector<std::string> needles;
    const auto& c = e.at("contains");
    if (c.is_string()) {
      needles.push_back(c.get<std::string>());
    } else {
      needles = c.get<std::vector<std::string>>();
    }
    s.on_all(std::move(needles), e.at("completions").get<std::vector<std::string>>());
  }
  return s;
}

BackendResponse MockBackend::complete(const GenerationRequest& request) {
  {
    std::lock_guard lock(mu_);
    captured_.push_back(request);
  }
  const auto& entries = script_.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto out = entries[i].fn(request);
    if (!out) continue;
    const auto n = static_cast<std::size_t>(request.n_samples);
    if (out->size() < n) {
      throw ScriptedMissError("script entry '" + entries[i].description + "' has " +
                              std::to_string(out->size()) + " completions, request wants " +
                              std::to_string(n));
    }
    out->resize(n);
    BackendResponse r;
    r.completions = std::move(*out);
    r.meta = {{"backend", "mock"}, {"rule", i}};
    return r;
  }
  throw ScriptedMissError("no script entry matches request (model " + request.model_id +
                          ", prompt prefix \"" + request.user_prompt.substr(0, 80) + "\")");
}

std::vector<GenerationRequest> MockBackend::captured() const {
  std::lock_guard lock(mu_);
  return captured_;
}

std::size_t MockBackend::calls() const {
  std::lock_guard lock(mu_);
  return captured_.size();
}

std::string resolve_credentials(const ProviderConfig& config) {
  if (config.credentials_env.empty()) {
    throw AuthError("no credentials environment variable configured for " + config.endpoint);
  }
  const char* v = std::getenv(config.credentials_env.c_str());
  if (v == nullptr || *v == '\0') {
    throw AuthError("credentials environment variable " + config.credentials_env + " is not set");
  }
  return v;
}

}  // namespace t4t
