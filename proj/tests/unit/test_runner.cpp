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

#include "support.hpp"
#include "t4t/evaluation.hpp"
#include "t4t/runner.hpp"
#include "t4t/text.hpp"

namespace t4t {
namespace {

namespace fs = std::filesystem;
using testing::fixture;
using testing::slurp;
using testing::TempDir;

nlohmann::json base_config(const fs::path& out) {
  auto j = nlohmann::json::parse(R"({
    "demo_session_ids": ["demo-001", "demo-002"],
    "models": {"mock": {"kind": "mock", "model_id": "mock-v1", "max_concurrent": 1}},
    "matrix": [
      {"variant": "base", "model": "mock"},
      {"variant": "cot", "model": "mock", "shots": 2},
      {"variant": "bottleneck", "model": "mock"}
    ]})");
  j["corpus"] = fixture("sessions_with_demos.jsonl").string();
  j["output_dir"] = out.string();
  return j;
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::vector<std::string> out;
  for (auto& l : text::split_lines(slurp(p)))
    if (!l.empty()) out.push_back(l);
  return out;
}

TEST(Config, ParsesAndNormalizes) {
  auto j = base_config("/tmp/out");
  j["matrix"].push_back({{"variant", "bottleneck_ablated"}, {"model", "mock"},
                         {"controls", {"ambiguity", "entailment"}}, {"mode", "independent"}});
  j["matrix"].push_back({{"variant", "self_consistency"}, {"model", "mock"}, {"inner", "cot"}, {"k", 3}});
  const auto c = ExperimentConfig::from_json(j);
  ASSERT_EQ(c.matrix.size(), 5u);
  EXPECT_EQ(c.matrix[3].id(), "bottleneck-wo-overconfidence-half_truths-independent__mock");
  EXPECT_EQ(c.matrix[4].id(), "sc3-cot__mock");
  EXPECT_EQ(c.models.at("mock").provider.requests_per_minute, 0u);
  EXPECT_EQ(c.models.at("mock").provider.endpoint, "mock:");
  const auto snap = c.to_json();
  EXPECT_EQ(snap["prompt_template_version"], "t4t-prompts/v1");
  EXPECT_EQ(snap["matrix"][1]["id"], "cot-2shot__mock");
  // The snapshot parses back to the same cells.
  const auto again = ExperimentConfig::from_json(nlohmann::json::parse(snap.dump()));
  for (std::size_t i = 0; i < c.matrix.size(); ++i) EXPECT_EQ(again.matrix[i].id(), c.matrix[i].id());
}

TEST(Config, RelativePathsResolveAgainstConfigFile) {
  TempDir dir;
  auto j = base_config("run");
  j["corpus"] = "corpus.jsonl";
  std::ofstream(dir.path() / "cfg.json") << j.dump();
  const auto c = ExperimentConfig::load(dir.path() / "cfg.json");
  EXPECT_EQ(c.corpus, dir.path() / "corpus.jsonl");
  EXPECT_EQ(c.output_dir, dir.path() / "run");
}

TEST(Config, Rejections) {
  auto expect_config_error = [](nlohmann::json j, const std::string& fragment) {
    try {
      ExperimentConfig::from_json(j);
      FAIL() << "expected ConfigError: " << fragment;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  auto j = base_config("/tmp/o");
  j["matrix"].push_back({{"variant", "base"}, {"model", "mock"}});
  expect_config_error(j, "duplicate matrix cell base__mock");
  j = base_config("/tmp/o");
  j["matrix"][0]["model"] = "ghost";
  expect_config_error(j, "unknown model 'ghost'");
  j = base_config("/tmp/o");
  j["matrix"][0]["shots"] = 3;
  expect_config_error(j, "demo ids");
  j = base_config("/tmp/o");
  j["matrix"][0]["variant"] = "magic";
  expect_config_error(j, "unknown variant");
  j = base_config("/tmp/o");
  j["models"]["remote"] = {{"kind", "openai"}, {"endpoint", "ftp://x"}};
  expect_config_error(j, "http(s)");
  j = base_config("/tmp/o");
  j.erase("corpus");
  expect_config_error(j, "config:");
  j = base_config("/tmp/o");
  j["matrix"] = nlohmann::json::array();
  expect_config_error(j, "matrix is empty");
  EXPECT_THROW(ExperimentConfig::load("/nonexistent/cfg.json"), ConfigError);
}

TEST(Run, LayoutAndTable) {
  TempDir dir;
  const auto cfg = ExperimentConfig::from_json(base_config(dir.path() / "run"));
  const auto summary = run_experiment(cfg);
  const fs::path run = dir.path() / "run";
  ASSERT_EQ(summary.cells.size(), 3u);
  EXPECT_TRUE(fs::exists(run / "config.snapshot"));
  for (const auto& id : {"base__mock", "cot-2shot__mock", "bottleneck__mock"}) {
    const auto preds = lines_of(run / "predictions" / (std::string(id) + ".jsonl"));
    ASSERT_EQ(preds.size(), 3u) << id;
    // Demo sessions are never evaluated; order follows the corpus.
    EXPECT_EQ(nlohmann::json::parse(preds[0])["session_id"], "fx-001");
    EXPECT_EQ(nlohmann::json::parse(preds[2])["session_id"], "fx-003");
    EXPECT_FALSE(fs::exists(run / "predictions" / (std::string(id) + ".partial")));
    EXPECT_TRUE(fs::exists(run / "reports" / (std::string(id) + ".json")));
    EXPECT_EQ(lines_of(run / "reports" / (std::string(id) + ".csv")).size(), 4u);
  }
  const auto table = lines_of(run / "table.md");
  ASSERT_EQ(table.size(), 5u);
  EXPECT_EQ(table[0], "| Variant | Acc | Acc@2 | invalid_rate | n |");
  EXPECT_EQ(table[2].rfind("| base__mock | ", 0), 0u);
  EXPECT_EQ(table[4].rfind("| bottleneck__mock | ", 0), 0u);
  EXPECT_NE(table[4].find("| 3 |"), std::string::npos);
  // 4 + 3 + 5 snippets with four cues each, plus one discriminator call per session.
  EXPECT_EQ(summary.cells[2].provider_requests, 17u + 13u + 21u);
  EXPECT_EQ(summary.cells[0].provider_requests, 3u);
}

TEST(Run, SecondInvocationIsFreeAndIdentical) {
  TempDir dir;
  const auto cfg = ExperimentConfig::from_json(base_config(dir.path() / "run"));
  run_experiment(cfg);
  const auto before = slurp(dir.path() / "run" / "predictions" / "bottleneck__mock.jsonl");
  const auto table = slurp(dir.path() / "run" / "table.md");
  const auto again = run_experiment(cfg);
  for (const auto& c : again.cells) {
    EXPECT_EQ(c.computed, 0u) << c.cell;
    EXPECT_EQ(c.provider_requests, 0u) << c.cell;
    EXPECT_EQ(c.resumed, 3u) << c.cell;
  }
  EXPECT_EQ(slurp(dir.path() / "run" / "predictions" / "bottleneck__mock.jsonl"), before);
  EXPECT_EQ(slurp(dir.path() / "run" / "table.md"), table);
}

TEST(Run, ResumesFromPartialAfterInterruption) {
  TempDir ref_dir, dir;
  const auto ref_cfg = ExperimentConfig::from_json(base_config(ref_dir.path() / "run"));
  run_experiment(ref_cfg);

  auto j = base_config(dir.path() / "run");
  j["cache_dir"] = (dir.path() / "cache").string();
  const auto cfg = ExperimentConfig::from_json(j);
  RunOptions stop;
  stop.on_persisted = [](std::size_t total) {
    if (total == 5) throw std::runtime_error("interrupted");
  };
  EXPECT_THROW(run_experiment(cfg, stop), std::runtime_error);
  const fs::path partial = dir.path() / "run" / "predictions" / "cot-2shot__mock.partial";
  ASSERT_TRUE(fs::exists(partial));
  EXPECT_EQ(lines_of(partial).size(), 2u);
  // A torn trailing record is discarded on resume.
  std::ofstream(partial, std::ios::app) << "{\"session_id\":\"fx-0";
  fs::remove_all(dir.path() / "cache");

  const auto summary = run_experiment(cfg);
  EXPECT_EQ(summary.cells[0].resumed, 3u);
  EXPECT_EQ(summary.cells[1].resumed, 2u);
  EXPECT_EQ(summary.cells[1].computed, 1u);
  EXPECT_EQ(summary.cells[2].computed, 3u);
  for (const auto& name : {"predictions/base__mock.jsonl", "predictions/cot-2shot__mock.jsonl",
                           "predictions/bottleneck__mock.jsonl", "reports/cot-2shot__mock.json", "table.md"}) {
    EXPECT_EQ(slurp(dir.path() / "run" / name), slurp(ref_dir.path() / "run" / name)) << name;
  }
}

TEST(Run, MissingCredentialsFailBeforeAnyWork) {
  TempDir dir;
  auto j = base_config(dir.path() / "run");
  j["models"]["remote"] = {{"kind", "openai"},
                           {"endpoint", "https://api.example.invalid/v1/chat/completions"},
                           {"credentials_env", "T4T_TEST_MISSING_KEY"}};
  j["matrix"].push_back({{"variant", "base"}, {"model", "remote"}});
  ::unsetenv("T4T_TEST_MISSING_KEY");
  const auto cfg = ExperimentConfig::from_json(j);
  try {
    run_experiment(cfg);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("T4T_TEST_MISSING_KEY"), std::string::npos);
  }
  EXPECT_FALSE(fs::exists(dir.path() / "run" / "predictions"));
}

TEST(Run, BackendOverrideStandsInForRemoteModel) {
  TempDir dir;
  auto j = base_config(dir.path() / "run");
  j["models"]["remote"] = {{"kind", "openai"}, {"endpoint", "https://api.example.invalid/v1"},
                           {"credentials_env", "T4T_TEST_MISSING_KEY"}, {"model_id", "remote-1"}};
  j["matrix"] = {{{"variant", "base"}, {"model", "remote"}}};
  RunOptions o;
  auto backend = std::make_shared<MockBackend>(
      MockScript().on_contains("", {"1. Number Two\n2. Number One\n3. Number Three\n### Number Two"}));
  o.backend_overrides["remote"] = backend;
  run_experiment(ExperimentConfig::from_json(j), o);
  EXPECT_EQ(backend->calls(), 3u);
  EXPECT_EQ(backend->captured()[0].model_id, "remote-1");
  const auto r = EvalReport::from_json(nlohmann::json::parse(slurp(dir.path() / "run/reports/base__remote.json")));
  EXPECT_NEAR(r.accuracy, 1.0 / 3.0, 1e-12);  // only fx-003 has Number Two as truth
}

TEST(Run, ProviderInputErrorBecomesInvalidPrediction) {
  class TooLong final : public Backend {
   public:
    BackendResponse complete(const GenerationRequest& r) override {
      throw InputError(r.user_prompt.size(), "context length exceeded");
    }
  };
  TempDir dir;
  auto j = base_config(dir.path() / "run");
  j["matrix"] = {{{"variant", "cot"}, {"model", "mock"}}};
  RunOptions o;
  o.backend_overrides["mock"] = std::make_shared<TooLong>();
  run_experiment(ExperimentConfig::from_json(j), o);
  const auto preds = load_predictions(dir.path() / "run/predictions/cot__mock.jsonl");
  ASSERT_EQ(preds.size(), 3u);
  for (const auto& [id, p] : preds) {
    EXPECT_FALSE(p.valid());
    EXPECT_EQ(p.error.rfind("InputError: ", 0), 0u);
  }
  EXPECT_NE(slurp(dir.path() / "run/table.md").find("| 100.0 | 3 |"), std::string::npos);
}

TEST(Report, MissingCellReportIsAnError) {
  TempDir dir;
  run_experiment(ExperimentConfig::from_json(base_config(dir.path() / "run")));
  fs::remove(dir.path() / "run/reports/cot-2shot__mock.json");
  try {
    emit_report(dir.path() / "run");
    FAIL();
  } catch (const ReportError& e) {
    EXPECT_NE(std::string(e.what()).find("cot-2shot__mock"), std::string::npos);
  }
  EXPECT_THROW(emit_report(dir.path()), ReportError);
}

TEST(Report, AnonymizationKeepsTruths) {
  TempDir dir;
  auto j = base_config(dir.path() / "run");
  j["anonymization_seed"] = 42;
  j["matrix"] = {{{"variant", "base"}, {"model", "mock"}}};
  auto backend = std::make_shared<MockBackend>(MockScript().on_contains("Marta", {"x"}).on_contains(
      "", {"1. Number One\n2. Number Two\n3. Number Three"}));
  RunOptions o;
  o.backend_overrides["mock"] = backend;
  run_experiment(ExperimentConfig::from_json(j), o);
  for (const auto& r : backend->captured()) EXPECT_FALSE(text::contains(r.user_prompt, "Marta"));
  EXPECT_NE(slurp(dir.path() / "run/table.md").find("| base__mock | 33.3 |"), std::string::npos);
}

TEST(Validate, WarningsAndStats) {
  TempDir dir;
  const auto path = dir.path() / "c.jsonl";
  {
    std::ofstream out(path);
    out << slurp(fixture("sessions3.jsonl"));
    const auto original = testing::fixture_sessions()[0];
    auto s = original;
    out << serialize_session(s) << "\n";  // duplicate
    s.id = "novotes";
    s.judge_votes.clear();
    s.judge_ids.clear();
    out << serialize_session(s) << "\n";
    out << "{broken\n";
    s = original;
    s.id = "orphan";
    std::swap(s.utterances[0].speaker, s.utterances[1].speaker);
    out << serialize_session(s) << "\n";
  }
  const auto v = validate_corpus(path);
  EXPECT_EQ(v.stats.n_sessions, 5u);
  ASSERT_EQ(v.warnings.size(), 4u);
  EXPECT_NE(v.warnings[0].find("duplicate id"), std::string::npos);
  EXPECT_NE(v.warnings[1].find("no judge votes"), std::string::npos);
  EXPECT_NE(v.warnings[2].find("line 6"), std::string::npos);
  EXPECT_NE(v.warnings[3].find("orphan answer"), std::string::npos);
  const auto clean = validate_corpus(fixture("sessions3.jsonl"));
  EXPECT_TRUE(clean.warnings.empty());
  EXPECT_EQ(clean.stats.n_utterances, corpus_stats(testing::fixture_sessions()).n_utterances);
}

TEST(LoadPredictions, ErrorsCarryLine) {
  TempDir dir;
  std::ofstream(dir.path() / "p.jsonl") << "\n{\"nope\":1}\n";
  try {
    load_predictions(dir.path() / "p.jsonl");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

}  // namespace
}  // namespace t4t
