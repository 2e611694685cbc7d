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


#include <gtest/gtest.h>

#include <cstdlib>
#include <set>
#include <thread>

#include "httplib.h"
#include "support.hpp"
#include "t4t/provider.hpp"

namespace t4t {
namespace {

using namespace std::chrono_literals;
using testing::TempDir;

GenerationRequest pinned_request() {
  GenerationRequest r;
  r.system_prompt = "You are an expert detective.";
  r.user_prompt = "Who is real? N\xC3\xBAmero Uno";
  r.model_id = "gpt-4";
  return r;
}

// Digests were computed independently with Python's json.dumps(sort_keys=True,
// separators=(",", ":"), ensure_ascii=False) and hashlib.sha256.
TEST(CacheKey, PinnedDigests) {
  auto r = pinned_request();
  EXPECT_EQ(canonical_request(r),
            "{\"max_tokens\":1024,\"model_id\":\"gpt-4\",\"n_samples\":1,\"sample_tag\":0,"
            "\"system_prompt\":\"You are an expert detective.\",\"temperature\":0.0,"
            "\"top_p\":1.0,\"user_prompt\":\"Who is real? N\xC3\xBAmero Uno\"}");
  EXPECT_EQ(cache_key(r), "f03a0060ed0215b25cfd4c833c33c984a475d3ab1d1a0aa29b779e85116e3ba9");
  r.temperature = 0.7;
  r.n_samples = 5;
  r.sample_tag = 3;
  EXPECT_EQ(cache_key(r), "a1ef0f1b2112932efd706cf00f3007a13df24c018282739a685df11656e7597d");
}

TEST(CacheKey, EveryFieldMatters) {
  const auto base = pinned_request();
  std::vector<GenerationRequest> variants(8, base);
  variants[0].system_prompt += " ";
  variants[1].user_prompt += "?";
  variants[2].temperature = 0.5;
  variants[3].max_tokens = 512;
  variants[4].top_p = 0.9;
  variants[5].n_samples = 2;
  variants[6].model_id = "gpt-4o";
  variants[7].sample_tag = 1;
  std::set<std::string> keys = {cache_key(base)};
  for (const auto& v : variants) keys.insert(cache_key(v));
  EXPECT_EQ(keys.size(), 9u);
  for (const auto& k : keys) EXPECT_EQ(k.size(), 64u);
}

TEST(ValidateRequest, Rules) {
  auto r = pinned_request();
  EXPECT_NO_THROW(validate_request(r));
  auto bad = r;
  bad.n_samples = 3;  // several samples need temperature > 0
  EXPECT_THROW(validate_request(bad), RequestError);
  bad.temperature = 0.8;
  EXPECT_NO_THROW(validate_request(bad));
  bad = r;
  bad.temperature = -0.1;
  EXPECT_THROW(validate_request(bad), RequestError);
  bad = r;
  bad.top_p = 0.0;
  EXPECT_THROW(validate_request(bad), RequestError);
  bad = r;
  bad.max_tokens = 0;
  EXPECT_THROW(validate_request(bad), RequestError);
  bad = r;
  bad.model_id.clear();
  EXPECT_THROW(validate_request(bad), RequestError);
}

/// Records sleeps and advances time instead of blocking.
class FakeClock final : public Clock {
 public:
  time_point now() override { return t_; }
  void sleep_for(std::chrono::nanoseconds d) override {
    sleeps.push_back(std::chrono::duration_cast<std::chrono::milliseconds>(d));
    t_ += d;
  }
  std::vector<std::chrono::milliseconds> sleeps;

 private:
  time_point t_{};
};

class FlakyBackend final : public Backend {
 public:
  FlakyBackend(int failures, int status) : failures_(failures), status_(status) {}
  BackendResponse complete(const GenerationRequest& r) override {
    ++calls;
    if (calls <= failures_) throw TransientError(status_, "flaky");
    BackendResponse out;
    out.completions.assign(static_cast<std::size_t>(r.n_samples), "ok");
    return out;
  }
  int calls = 0;

 private:
  int failures_;
  int status_;
};

ProviderConfig quick_config() {
  ProviderConfig c;
  c.requests_per_minute = 0;
  c.max_retries = 3;
  c.backoff_base = 100ms;
  return c;
}

TEST(ProviderRetry, ExponentialBackoffThenSuccess) {
  auto clock = std::make_shared<FakeClock>();
  auto backend = std::make_shared<FlakyBackend>(2, 503);
  Provider p(backend, quick_config(), std::nullopt, clock);
  auto r = p.generate(pinned_request());
  EXPECT_EQ(r.completions, std::vector<std::string>{"ok"});
  EXPECT_EQ(backend->calls, 3);
  EXPECT_EQ(p.backend_calls(), 3u);
  EXPECT_EQ(clock->sleeps, (std::vector<std::chrono::milliseconds>{100ms, 200ms}));
}

TEST(ProviderRetry, ExhaustedRaisesTransportWithStatus) {
  auto clock = std::make_shared<FakeClock>();
  auto backend = std::make_shared<FlakyBackend>(100, 429);
  Provider p(backend, quick_config(), std::nullopt, clock);
  try {
    p.generate(pinned_request());
    FAIL();
  } catch (const TransportError& e) {
    EXPECT_EQ(e.status(), 429);
  }
  EXPECT_EQ(backend->calls, 4);
}

class ThrowingBackend final : public Backend {
 public:
  explicit ThrowingBackend(std::function<void()> f) : f_(std::move(f)) {}
  BackendResponse complete(const GenerationRequest&) override {
    ++calls;
    f_();
    return {};
  }
  int calls = 0;

 private:
  std::function<void()> f_;
};

TEST(ProviderRetry, AuthRejectedAndInputNotRetried) {
  auto clock = std::make_shared<FakeClock>();
  auto auth = std::make_shared<ThrowingBackend>([] { throw AuthError("no"); });
  Provider pa(auth, quick_config(), std::nullopt, clock);
  EXPECT_THROW(pa.generate(pinned_request()), AuthError);
  EXPECT_EQ(auth->calls, 1);
  auto rej = std::make_shared<ThrowingBackend>([] { throw RejectedError(422, "no"); });
  Provider pr(rej, quick_config(), std::nullopt, clock);
  EXPECT_THROW(pr.generate(pinned_request()), RejectedError);
  EXPECT_EQ(rej->calls, 1);
  auto inp = std::make_shared<ThrowingBackend>([] { throw InputError(10, "long"); });
  Provider pi(inp, quick_config(), std::nullopt, clock);
  EXPECT_THROW(pi.generate(pinned_request()), InputError);
  EXPECT_EQ(inp->calls, 1);
  EXPECT_TRUE(clock->sleeps.empty());
}

TEST(ProviderRetry, WrongCompletionCountIsAnError) {
  auto backend = std::make_shared<ThrowingBackend>([] {});
  Provider p(backend, quick_config());
  EXPECT_THROW(p.generate(pinned_request()), ProviderError);
}

TEST(RateLimiterTest, SlidingWindow) {
  auto clock = std::make_shared<FakeClock>();
  RateLimiter lim(3, clock);
  for (int i = 0; i < 3; ++i) lim.acquire();
  EXPECT_TRUE(clock->sleeps.empty());
  lim.acquire();
  ASSERT_EQ(clock->sleeps.size(), 1u);
  EXPECT_EQ(clock->sleeps[0], 60000ms);
  RateLimiter unlimited(0, clock);
  for (int i = 0; i < 1000; ++i) unlimited.acquire();
  EXPECT_EQ(clock->sleeps.size(), 1u);
}

TEST(ProviderCache, HitSkipsBackendAndSurvivesRestart) {
  TempDir dir;
  auto backend = std::make_shared<MockBackend>(MockScript().on_contains("Who", {"a1"}));
  {
    Provider p(backend, quick_config(), dir.path());
    auto first = p.generate(pinned_request());
    EXPECT_FALSE(first.cache_hit);
    auto second = p.generate(pinned_request());
    EXPECT_TRUE(second.cache_hit);
    EXPECT_EQ(second.completions, first.completions);
    EXPECT_EQ(second.digest, cache_key(pinned_request()));
    EXPECT_EQ(p.requests(), 2u);
  }
  Provider again(backend, quick_config(), dir.path());
  EXPECT_TRUE(again.generate(pinned_request()).cache_hit);
  EXPECT_EQ(backend->calls(), 1u);
  EXPECT_TRUE(std::filesystem::exists(
      ResultCache(dir.path()).path_for("gpt-4", cache_key(pinned_request()))));
}

TEST(ProviderCache, TornEntryIsRegenerated) {
  TempDir dir;
  ResultCache cache(dir.path());
  const auto key = cache_key(pinned_request());
  std::filesystem::create_directories(cache.path_for("gpt-4", key).parent_path());
  std::ofstream(cache.path_for("gpt-4", key)) << "{\"completions\": [\"x";
  EXPECT_FALSE(cache.get("gpt-4", key));
  auto backend = std::make_shared<MockBackend>(MockScript().on_contains("Who", {"fresh"}));
  Provider p(backend, quick_config(), dir.path());
  EXPECT_EQ(p.generate(pinned_request()).completions[0], "fresh");
  EXPECT_EQ(cache.get("gpt-4", key)->completions[0], "fresh");
}

TEST(ProviderCache, ModelIdIsSanitizedIntoOneComponent) {
  ResultCache cache("/tmp/root");
  EXPECT_EQ(cache.path_for("../x/y", "d"), std::filesystem::path("/tmp/root/.._x_y/d"));
  EXPECT_EQ(cache.path_for("..", "d"), std::filesystem::path("/tmp/root/_../d"));
}

TEST(ProviderConcurrency, BoundedSlots) {
  class Slow final : public Backend {
   public:
    BackendResponse complete(const GenerationRequest&) override {
      const int now = ++active;
      int prev = peak.load();
      while (now > prev && !peak.compare_exchange_weak(prev, now)) {
      }
      std::this_thread::sleep_for(5ms);
      --active;
      return {{"x"}, {}};
    }
    std::atomic<int> active{0}, peak{0};
  };
  auto backend = std::make_shared<Slow>();
  auto cfg = quick_config();
  cfg.max_concurrent = 2;
  Provider p(backend, cfg);
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&, i] {
      auto r = pinned_request();
      r.user_prompt += std::to_string(i);
      p.generate(r);
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_LE(backend->peak.load(), 2);
  EXPECT_EQ(p.backend_calls(), 8u);
}

TEST(MockScriptTest, FirstMatchAndMisses) {
  MockScript s;
  s.on_all({"alpha", "beta"}, {"both"})
      .on_contains("alpha", {"alpha only", "second"})
      .respond("computed", [](const GenerationRequest& r) -> std::optional<std::vector<std::string>> {
        if (r.user_prompt == "gamma") return std::vector<std::string>{"g"};
        return std::nullopt;
      });
  MockBackend m(std::move(s));
  GenerationRequest r = pinned_request();
  r.user_prompt = "alpha beta";
  EXPECT_EQ(m.complete(r).completions[0], "both");
  r.user_prompt = "alpha";
  EXPECT_EQ(m.complete(r).completions, std::vector<std::string>{"alpha only"});
  r.user_prompt = "gamma";
  EXPECT_EQ(m.complete(r).completions[0], "g");
  r.user_prompt = "delta";
  EXPECT_THROW(m.complete(r), ScriptedMissError);
  r.user_prompt = "gamma";
  r.n_samples = 2;
  r.temperature = 1.0;
  EXPECT_THROW(m.complete(r), ScriptedMissError);
  EXPECT_EQ(m.calls(), 5u);
  EXPECT_EQ(m.captured()[1].user_prompt, "alpha");
}

TEST(MockScriptTest, FromJson) {
  auto s = MockScript::from_json(nlohmann::json::parse(
      R"([{"contains":["x","y"],"completions":["xy"]},{"contains":"x","completions":["x"]}])"));
  MockBackend m(std::move(s));
  auto r = pinned_request();
  r.user_prompt = "y x";
  EXPECT_EQ(m.complete(r).completions[0], "xy");
  r.user_prompt = "x";
  EXPECT_EQ(m.complete(r).completions[0], "x");
  EXPECT_THROW(MockScript::from_json(nlohmann::json::object()), std::invalid_argument);
}

TEST(ChatBackend, RequestBody) {
  auto r = pinned_request();
  r.n_samples = 2;
  r.temperature = 0.5;
  const auto body = ChatCompletionsBackend::request_body(r);
  EXPECT_EQ(body["model"], "gpt-4");
  EXPECT_EQ(body["messages"][0]["role"], "system");
  EXPECT_EQ(body["messages"][1]["content"], r.user_prompt);
  EXPECT_EQ(body["n"], 2);
  EXPECT_EQ(body["temperature"], 0.5);
  EXPECT_FALSE(body.contains("sample_tag"));
}

TEST(ChatBackend, StatusMapping) {
  const auto r = pinned_request();
  using CB = ChatCompletionsBackend;
  EXPECT_THROW(CB::interpret(401, "", r), AuthError);
  EXPECT_THROW(CB::interpret(403, "", r), AuthError);
  try {
    CB::interpret(429, "slow down", r);
    FAIL();
  } catch (const TransientError& e) {
    EXPECT_EQ(e.status(), 429);
  }
  EXPECT_THROW(CB::interpret(502, "", r), TransientError);
  try {
    CB::interpret(400, R"({"error":{"code":"context_length_exceeded"}})", r);
    FAIL();
  } catch (const InputError& e) {
    EXPECT_EQ(e.prompt_chars(), r.system_prompt.size() + r.user_prompt.size());
  }
  EXPECT_THROW(CB::interpret(400, "bad field", r), RejectedError);
  EXPECT_THROW(CB::interpret(200, "not json", r), TransientError);
  auto ok = CB::interpret(
      200, R"({"choices":[{"message":{"content":"A"}},{"message":{"content":"B"}}],"usage":{"total_tokens":5}})", r);
  EXPECT_EQ(ok.completions, (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(ok.meta["usage"]["total_tokens"], 5);
}

TEST(ChatBackend, CredentialsFromEnvironment) {
  ProviderConfig c;
  c.endpoint = "https://example.invalid/v1/chat/completions";
  c.credentials_env = "T4T_TEST_UNSET_KEY";
  ::unsetenv("T4T_TEST_UNSET_KEY");
  EXPECT_THROW(ChatCompletionsBackend{c}, AuthError);
  ::setenv("T4T_TEST_UNSET_KEY", "sk-test", 1);
  EXPECT_EQ(resolve_credentials(c), "sk-test");
  c.endpoint = "not a url";
  EXPECT_THROW(ChatCompletionsBackend{c}, ProviderError);
  ::unsetenv("T4T_TEST_UNSET_KEY");
  c.credentials_env.clear();
  EXPECT_THROW(resolve_credentials(c), AuthError);
}

// Full HTTP round trip against a local stand-in for the provider.
TEST(ChatBackend, LocalServerRoundTrip) {
  httplib::Server srv;
  std::string seen_auth;
  nlohmann::json seen_body;
  srv.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = nlohmann::json::parse(req.body);
    res.set_content(R"({"choices":[{"message":{"content":"### Number Two"}}]})", "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  ::setenv("T4T_TEST_LOCAL_KEY", "sk-local", 1);
  ProviderConfig c;
  c.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  c.credentials_env = "T4T_TEST_LOCAL_KEY";
  ChatCompletionsBackend b(c);
  auto resp = b.complete(pinned_request());
  srv.stop();
  th.join();
  ::unsetenv("T4T_TEST_LOCAL_KEY");

  EXPECT_EQ(resp.completions, std::vector<std::string>{"### Number Two"});
  EXPECT_EQ(resp.meta["backend"], "chat-completions");
  EXPECT_EQ(seen_auth, "Bearer sk-local");
  EXPECT_EQ(seen_body["model"], "gpt-4");
}

TEST(ProviderConfigTest, RemoteDetection) {
  ProviderConfig c;
  EXPECT_FALSE(c.is_remote());
  c.endpoint = "mock:";
  EXPECT_FALSE(c.is_remote());
  c.endpoint = "https://api.example.com";
  EXPECT_TRUE(c.is_remote());
}

}  // namespace
}  // namespace t4t
