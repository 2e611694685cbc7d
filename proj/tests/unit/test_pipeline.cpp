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

#include <algorithm>
#include <atomic>
#include <random>

#include "support.hpp"
#include "t4t/content_mock.hpp"
#include "t4t/pipeline.hpp"
#include "t4t/text.hpp"

namespace t4t {
namespace {

using testing::fixture_sessions;
using testing::random_session;
using L = ContestantLabel;

ProviderConfig offline() {
  ProviderConfig c;
  c.requests_per_minute = 0;
  c.max_concurrent = 4;
  c.max_retries = 0;
  return c;
}

struct Rig {
  explicit Rig(MockScript script = content_mock_script(), PipelineOptions o = {})
      : backend(std::make_shared<MockBackend>(std::move(script))), provider(backend, offline()) {
    if (o.model_id.empty()) o.model_id = "mock-model";
    pipeline.emplace(provider, std::move(o));
  }
  std::shared_ptr<MockBackend> backend;
  Provider provider;
  std::optional<Pipeline> pipeline;
};

VariantConfig variant(VariantKind k) {
  VariantConfig v;
  v.kind = k;
  return v;
}

TEST(Variant, Ids) {
  EXPECT_EQ(variant(VariantKind::Base).id(), "base");
  EXPECT_EQ(variant(VariantKind::CoT).id(), "cot");
  EXPECT_EQ(variant(VariantKind::Bottleneck).id(), "bottleneck");
  auto ab = variant(VariantKind::BottleneckAblated);
  ab.controls = {ControlKind::Ambiguity, ControlKind::Entailment, ControlKind::Overconfidence};
  EXPECT_EQ(ab.id(), "bottleneck-wo-half_truths");
  ab.mode = DerivationMode::Independent;
  ab.shots = 2;
  EXPECT_EQ(ab.id(), "bottleneck-wo-half_truths-independent-2shot");
  auto sc = variant(VariantKind::SelfConsistency);
  EXPECT_EQ(sc.id(), "sc5-cot");
  sc.sc_k = 3;
  sc.inner = VariantKind::Bottleneck;
  EXPECT_EQ(sc.id(), "sc3-bottleneck");
  EXPECT_EQ(variant(VariantKind::BottleneckAblated).id(), "bottleneck");
}

TEST(Variant, Validation) {
  auto sc = variant(VariantKind::SelfConsistency);
  sc.inner = VariantKind::SelfConsistency;
  EXPECT_THROW(sc.validate(), std::invalid_argument);
  sc.inner = VariantKind::CoT;
  sc.sc_k = 0;
  EXPECT_THROW(sc.validate(), std::invalid_argument);
  sc.sc_k = 3;
  sc.sc_temperature = 0.0;
  EXPECT_THROW(sc.validate(), std::invalid_argument);
  sc.sc_k = 1;
  EXPECT_NO_THROW(sc.validate());
  auto b = variant(VariantKind::BottleneckAblated);
  b.controls = {};
  EXPECT_THROW(b.validate(), std::invalid_argument);
  b.controls = {ControlKind::Ambiguity, ControlKind::Ambiguity};
  EXPECT_THROW(b.validate(), std::invalid_argument);
  EXPECT_EQ(parse_variant_kind("Bottleneck_Ablated"), VariantKind::BottleneckAblated);
  EXPECT_FALSE(parse_variant_kind("ensemble"));
}

TEST(Pipeline, BaseAndCotMakeOneCall) {
  Rig rig;
  const auto s = fixture_sessions()[0];
  auto p = rig.pipeline->run(s, variant(VariantKind::Base));
  EXPECT_TRUE(p.valid());
  EXPECT_EQ(p.provenance.digests.size(), 1u);
  EXPECT_EQ(p.provenance.template_version, "t4t-prompts/v1");
  EXPECT_TRUE(p.provenance.g_model_id.empty());
  auto c = rig.pipeline->run(s, variant(VariantKind::CoT));
  EXPECT_EQ(rig.backend->calls(), 2u);
  EXPECT_TRUE(text::contains(rig.backend->captured()[1].user_prompt,
                             std::string(text::trim(prompt_resource("cot")))));
  EXPECT_EQ(c.variant, "cot");
}

// n snippets and c controls cost n * c extraction calls plus one discriminator call.
TEST(Pipeline, BottleneckCallCount) {
  const std::vector<std::size_t> snippets = {4, 3, 5};
  for (auto mode : {DerivationMode::Sequential, DerivationMode::Independent}) {
    for (std::size_t c = 1; c <= 4; ++c) {
      Rig rig;
      auto v = variant(c == 4 ? VariantKind::Bottleneck : VariantKind::BottleneckAblated);
      v.controls.assign(kAllControls.begin(), kAllControls.begin() + static_cast<long>(c));
      v.mode = mode;
      const auto sessions = fixture_sessions();
      for (std::size_t i = 0; i < sessions.size(); ++i) {
        const auto before = rig.backend->calls();
        auto p = rig.pipeline->run(sessions[i], v);
        EXPECT_EQ(rig.backend->calls() - before, snippets[i] * c + 1);
        EXPECT_EQ(p.annotations.size(), snippets[i] * c);
        EXPECT_EQ(p.provenance.digests.size(), snippets[i] * c + 1);
        EXPECT_TRUE(p.valid());
      }
    }
  }
}

TEST(Pipeline, AnnotationsAreSnippetMajor) {
  Rig rig;
  const auto s = fixture_sessions()[2];
  const auto sn = segment_snippets(s);
  auto p = rig.pipeline->run(s, variant(VariantKind::Bottleneck));
  ASSERT_EQ(p.annotations.size(), sn.size() * 4);
  for (std::size_t i = 0; i < p.annotations.size(); ++i) {
    const auto& a = p.annotations[i];
    EXPECT_EQ(a.snippet_index, i / 4);
    EXPECT_EQ(a.control.kind, kAllControls[i % 4]);
    EXPECT_EQ(a.contestant, sn[i / 4].contestant);
    ASSERT_TRUE(a.control.label);
    EXPECT_TRUE(label_in_domain(a.control.kind, *a.control.label));
    EXPECT_FALSE(a.parse_failed);
  }
  EXPECT_EQ(p.provenance.g_model_id, "mock-model");
}

TEST(Pipeline, SequentialPromptsCarryHistory) {
  Rig rig;
  const auto s = fixture_sessions()[2];
  auto v = variant(VariantKind::BottleneckAblated);
  v.controls = {ControlKind::Entailment};
  rig.pipeline->run(s, v);
  const auto reqs = rig.backend->captured();
  ASSERT_EQ(reqs.size(), 6u);
  const auto sn = segment_snippets(s);
  EXPECT_TRUE(text::contains(reqs[4].user_prompt, render_snippet(sn[0], 0)));
  v.mode = DerivationMode::Independent;
  Rig ind;
  ind.pipeline->run(s, v);
  EXPECT_FALSE(text::contains(ind.backend->captured()[4].user_prompt, render_snippet(sn[0], 0)));
}

MockScript flaky_once(std::shared_ptr<std::atomic<int>> counter) {
  MockScript s;
  s.respond("garbage first", [counter](const GenerationRequest& r) -> std::optional<std::vector<std::string>> {
    if (text::contains(r.user_prompt, std::string(text::trim(prompt_resource("format_reminder")))))
      return std::nullopt;
    ++*counter;
    return std::vector<std::string>{"I cannot decide."};
  });
  s.respond("content", [](const GenerationRequest& r) {
    return std::optional<std::vector<std::string>>({content_mock_completion(r)});
  });
  return s;
}

TEST(Pipeline, SingleRequeryRecovers) {
  auto counter = std::make_shared<std::atomic<int>>(0);
  Rig rig(flaky_once(counter));
  auto p = rig.pipeline->run(fixture_sessions()[0], variant(VariantKind::Base));
  EXPECT_TRUE(p.valid());
  EXPECT_EQ(p.provenance.requeries, 1u);
  EXPECT_EQ(p.provenance.digests.size(), 2u);
  EXPECT_EQ(rig.backend->calls(), 2u);
}

TEST(Pipeline, PersistentGarbageIsInvalidNotFatal) {
  Rig rig(MockScript().on_contains("", {"no idea at all"}));
  auto p = rig.pipeline->run(fixture_sessions()[0], variant(VariantKind::CoT));
  EXPECT_FALSE(p.valid());
  EXPECT_FALSE(p.top1());
  EXPECT_NE(p.error.find("invalid output"), std::string::npos);
  EXPECT_EQ(rig.backend->calls(), 2u);
  const auto j = to_json(p);
  EXPECT_TRUE(j["ranking"].is_null());
  EXPECT_FALSE(j["valid"].get<bool>());
}

TEST(Pipeline, UnreadableControlIsMarkedAndRequeriedOnce) {
  MockScript s;
  s.respond("bad controls", [](const GenerationRequest& r) -> std::optional<std::vector<std::string>> {
    if (text::contains(r.user_prompt, "Target snippet: Snippet 1 ")) return std::vector<std::string>{"hmm"};
    return std::nullopt;
  });
  s.respond("content", [](const GenerationRequest& r) {
    return std::optional<std::vector<std::string>>({content_mock_completion(r)});
  });
  Rig rig(std::move(s));
  auto p = rig.pipeline->run(fixture_sessions()[1], variant(VariantKind::Bottleneck));
  EXPECT_TRUE(p.valid());
  std::size_t failed = 0;
  for (const auto& a : p.annotations) {
    if (a.snippet_index == 0) {
      EXPECT_TRUE(a.parse_failed);
      EXPECT_FALSE(a.control.label);
      EXPECT_EQ(a.control.verdict, Verdict::Inconclusive);
      ++failed;
    } else {
      EXPECT_FALSE(a.parse_failed);
    }
  }
  EXPECT_EQ(failed, 4u);
  EXPECT_EQ(p.provenance.requeries, 4u);
  EXPECT_EQ(rig.backend->calls(), 3u * 4u + 4u + 1u);
}

TEST(Pipeline, DemosNeedEnoughShots) {
  Rig rig;
  auto v = variant(VariantKind::Base);
  v.shots = 1;
  EXPECT_THROW(rig.pipeline->run(fixture_sessions()[0], v), std::invalid_argument);
  auto all = fixture_sessions("sessions_with_demos.jsonl");
  PipelineOptions o;
  o.demos = {{all[0], all[0].ground_truth}};
  Rig with(content_mock_script(), o);
  auto p = with.pipeline->run(all[2], v);
  EXPECT_EQ(p.variant, "base-1shot");
  EXPECT_EQ(p.provenance.shots, 1u);
  EXPECT_TRUE(text::contains(with.backend->captured()[0].user_prompt, all[0].affidavit));
}

TEST(Pipeline, SeparateCueModel) {
  auto gb = std::make_shared<MockBackend>(content_mock_script());
  Provider g(gb, offline());
  auto mb = std::make_shared<MockBackend>(content_mock_script());
  Provider m(mb, offline());
  PipelineOptions o;
  o.model_id = "disc";
  o.g_model_id = "cues";
  Pipeline pl(m, o, &g);
  auto p = pl.run(fixture_sessions()[0], variant(VariantKind::Bottleneck));
  EXPECT_EQ(gb->calls(), 16u);
  EXPECT_EQ(mb->calls(), 1u);
  EXPECT_EQ(gb->captured()[0].model_id, "cues");
  EXPECT_EQ(p.provenance.g_model_id, "cues");
  EXPECT_EQ(p.provenance.model_id, "disc");
}

// A full-control ablation is the bottleneck itself.
TEST(Pipeline, FullAblationEqualsBottleneck) {
  for (const auto& s : fixture_sessions()) {
    Rig a, b;
    auto full = variant(VariantKind::BottleneckAblated);
    full.controls = {ControlKind::HalfTruths, ControlKind::Ambiguity, ControlKind::Overconfidence,
                     ControlKind::Entailment};
    EXPECT_EQ(to_json(a.pipeline->run(s, full)).dump(),
              to_json(b.pipeline->run(s, variant(VariantKind::Bottleneck))).dump());
  }
}

TEST(Pipeline, DeterministicAcrossRunsAndThreads) {
  const auto s = fixture_sessions()[2];
  PipelineOptions serial;
  serial.parallel = false;
  Rig a, b(content_mock_script(), serial);
  EXPECT_EQ(a.pipeline->run(s, variant(VariantKind::Bottleneck)),
            b.pipeline->run(s, variant(VariantKind::Bottleneck)));
}

// Relabelling the contestants of a session relabels the prediction.
TEST(Pipeline, EquivariantUnderRelabelling) {
  std::mt19937_64 rng(2024);
  std::size_t checked = 0;
  for (int n = 0; n < 10; ++n) {
    const auto raw = random_session(rng, "eq-" + std::to_string(n));
    const auto base_session = anonymize(raw, LabelPermutation::identity(), 1);
    for (const auto& perm : LabelPermutation::all()) {
      Rig plain;
      ContentMockOptions opts;
      opts.tie_break = perm;
      Rig permuted(content_mock_script(opts));
      for (auto kind : {VariantKind::Base, VariantKind::Bottleneck}) {
        const auto expected = permute_prediction(plain.pipeline->run(base_session, variant(kind)), perm);
        const auto actual = permuted.pipeline->run(anonymize(raw, perm, 1), variant(kind));
        EXPECT_EQ(actual.ranking, expected.ranking) << base_session.id;
        ASSERT_EQ(actual.annotations.size(), expected.annotations.size());
        for (std::size_t i = 0; i < actual.annotations.size(); ++i) {
          EXPECT_EQ(actual.annotations[i].contestant, expected.annotations[i].contestant);
          EXPECT_EQ(actual.annotations[i].control, expected.annotations[i].control);
        }
        ++checked;
      }
    }
  }
  EXPECT_EQ(checked, 120u);
}

Prediction sample(const std::string& top, const std::string& second, const std::string& third) {
  Prediction p;
  p.session_id = "s";
  p.ranking = Ranking{*parse_label(top), *parse_label(second), *parse_label(third)};
  p.explanation = "top " + top;
  return p;
}

TEST(SelfConsistency, MajorityAndBorda) {
  std::vector<Prediction> s = {sample("Number Two", "Number One", "Number Three"),
                               sample("Number Two", "Number Three", "Number One"),
                               sample("Number One", "Number Three", "Number Two")};
  auto out = aggregate_samples(s, "sc3-cot");
  EXPECT_EQ(*out.ranking, (Ranking{L::NumberTwo, L::NumberOne, L::NumberThree}));
  EXPECT_EQ(out.explanation, "top Number Two");
  EXPECT_EQ(out.variant, "sc3-cot");
}

TEST(SelfConsistency, UnitVectorsAndTies) {
  // Unanimous samples reproduce the sampled ranking.
  for (const auto& perm : LabelPermutation::all()) {
    const auto& img = perm.image();
    Prediction p;
    p.ranking = Ranking{img[0], img[1], img[2]};
    auto out = aggregate_samples({p, p, p}, "x");
    EXPECT_EQ(out.ranking, p.ranking);
  }
  // One vote each: top-1 falls to the lowest label, Borda breaks the rest.
  auto tie = aggregate_samples({sample("Number Three", "Number Two", "Number One"),
                                sample("Number Two", "Number Three", "Number One"),
                                sample("Number One", "Number Three", "Number Two")},
                               "x");
  EXPECT_EQ(*tie.ranking, (Ranking{L::NumberOne, L::NumberThree, L::NumberTwo}));
  Prediction invalid;
  invalid.session_id = "s";
  auto skip = aggregate_samples({invalid, sample("Number Three", "Number One", "Number Two")}, "x");
  EXPECT_EQ((*skip.ranking)[0], L::NumberThree);
  auto none = aggregate_samples({invalid, invalid}, "x");
  EXPECT_FALSE(none.valid());
  EXPECT_NE(none.error.find("all 2 samples"), std::string::npos);
  EXPECT_THROW(aggregate_samples({}, "x"), std::invalid_argument);
}

TEST(SelfConsistency, ShuffleInvariant) {
  std::mt19937_64 rng(7);
  const auto perms = LabelPermutation::all();
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<Prediction> s;
    const std::size_t k = 1 + rng() % 9;
    for (std::size_t i = 0; i < k; ++i) {
      Prediction p;
      p.session_id = "s";
      if (rng() % 10 != 0) {
        const auto& img = perms[rng() % 6].image();
        p.ranking = Ranking{img[0], img[1], img[2]};
      }
      s.push_back(p);
    }
    const auto ref = aggregate_samples(s, "x").ranking;
    std::shuffle(s.begin(), s.end(), rng);
    EXPECT_EQ(aggregate_samples(s, "x").ranking, ref);
  }
}

TEST(SelfConsistency, KOneIsTheInnerRun) {
  Rig a, b;
  const auto s = fixture_sessions()[0];
  auto sc = variant(VariantKind::SelfConsistency);
  sc.sc_k = 1;
  auto single = a.pipeline->run(s, sc);
  auto inner = b.pipeline->run(s, variant(VariantKind::CoT));
  EXPECT_EQ(single, inner);
  EXPECT_EQ(a.backend->calls(), 1u);
}

TEST(SelfConsistency, SamplesAreDistinctRequests) {
  Rig rig;
  auto sc = variant(VariantKind::SelfConsistency);
  sc.sc_k = 4;
  auto p = rig.pipeline->run(fixture_sessions()[0], sc);
  EXPECT_TRUE(p.valid());
  const auto reqs = rig.backend->captured();
  ASSERT_EQ(reqs.size(), 4u);
  std::set<std::string> keys;
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    EXPECT_EQ(reqs[i].sample_tag, i);
    EXPECT_DOUBLE_EQ(reqs[i].temperature, 0.7);
    keys.insert(cache_key(reqs[i]));
  }
  EXPECT_EQ(keys.size(), 4u);
  EXPECT_EQ(p.provenance.digests.size(), 4u);
}

// Bottleneck self-consistency reuses the greedy cue calls and samples only the discriminator.
TEST(SelfConsistency, BottleneckSamplesOnlyFinalCall) {
  Rig rig;
  auto sc = variant(VariantKind::SelfConsistency);
  sc.inner = VariantKind::Bottleneck;
  sc.sc_k = 3;
  auto p = rig.pipeline->run(fixture_sessions()[1], sc);
  std::size_t stochastic = 0;
  for (const auto& r : rig.backend->captured()) stochastic += r.temperature > 0.0;
  EXPECT_EQ(stochastic, 3u);
  EXPECT_EQ(p.variant, "sc3-bottleneck");
  EXPECT_EQ(p.annotations.size(), 12u);
}

TEST(Serialization, PredictionRoundTrip) {
  Rig rig;
  auto p = rig.pipeline->run(fixture_sessions()[2], variant(VariantKind::Bottleneck));
  p.provenance.requeries = 2;
  p.annotations[1].parse_failed = true;
  p.annotations[1].control.label.reset();
  const auto back = prediction_from_json(nlohmann::json::parse(to_json(p).dump()));
  EXPECT_EQ(back, p);
  Prediction bad;
  bad.session_id = "x";
  bad.error = "invalid output: no ranking";
  EXPECT_EQ(prediction_from_json(nlohmann::json::parse(to_json(bad).dump())), bad);
}

TEST(ParallelFor, CoversEveryIndexAndRethrows) {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, 8, [&](std::size_t i) { ++hits[i]; });
  for (auto& h : hits) EXPECT_EQ(h.load(), 1);
  EXPECT_THROW(parallel_for(50, 4, [](std::size_t i) {
                 if (i == 17) throw std::runtime_error("boom");
               }),
               std::runtime_error);
  parallel_for(0, 4, [](std::size_t) { FAIL(); });
}

TEST(ContentMock, HashIgnoresLabelMentions) {
  EXPECT_EQ(content_hash("Number One said yes"), content_hash("number three said YES"));
  EXPECT_NE(content_hash("said yes"), content_hash("said no"));
  GenerationRequest r;
  r.user_prompt = "unrelated";
  EXPECT_THROW(content_mock_completion(r), ScriptedMissError);
}

}  // namespace
}  // namespace t4t
