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

// t4t: run experiments, validate corpora, rebuild report tables, serve the
// human study and print corpus statistics.

#include <csignal>
#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "t4t/evaluation.hpp"
#include "t4t/runner.hpp"
#include "t4t/study_server.hpp"

namespace {

using namespace t4t;

t4t::StudyServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int cmd_run(const std::string& config_path) {
  ExperimentConfig cfg = ExperimentConfig::load(config_path);
  RunSummary s = run_experiment(cfg);
  for (const auto& c : s.cells) {
    std::cout << c.cell << ": computed " << c.computed << ", resumed " << c.resumed << ", requests "
              << c.provider_requests << ", backend calls " << c.backend_calls << "\n";
  }
  std::cout << "run directory: " << s.run_dir.string() << "\n";
  return kExitOk;
}

int cmd_validate(const std::string& corpus, bool warnings_as_errors) {
  CorpusValidation v = validate_corpus(corpus);
  std::cout << "sessions: " << v.stats.n_sessions << "\nutterances: " << v.stats.n_utterances
            << "\nwords: " << v.stats.n_words << "\njudges: " << v.stats.n_unique_judges << "\n";
  for (const auto& w : v.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << v.warnings.size() << " warning(s)\n";
  return warnings_as_errors && !v.warnings.empty() ? kExitWarnings : kExitOk;
}

int cmd_report(const std::string& run_dir) {
  auto path = emit_report(run_dir);
  std::ifstream in(path);
  std::cout << in.rdbuf();
  return kExitOk;
}

int cmd_stats(const std::string& corpus, const std::string& pred_a, const std::string& pred_b) {
  auto sessions = parse_corpus(corpus, ParseOptions{false});
  CorpusStats st = corpus_stats(sessions);
  std::cout << "sessions: " << st.n_sessions << "\nutterances: " << st.n_utterances
            << "\nwords: " << st.n_words << "\n";

  HumanAccuracy h = human_session_accuracy(sessions);
  std::cout << "human accuracy: " << format_percent(h.accuracy) << "% over " << h.n_sessions
            << " sessions (" << h.n_skipped << " without votes)\n";

  // Agreement and deception skew over sessions with a full judge panel.
  std::size_t panel = 0;
  for (const auto& s : sessions) panel = std::max(panel, s.judge_votes.size());
  std::vector<std::vector<std::size_t>> counts;
  std::vector<double> deceived;
  for (const auto& s : sessions) {
    if (s.judge_votes.size() != panel || panel < 2) continue;
    std::vector<std::size_t> row(3, 0);
    for (auto v : s.judge_votes) ++row[label_index(v)];
    counts.push_back(row);
    deceived.push_back(static_cast<double>(panel - row[label_index(s.ground_truth)]));
  }
  if (!counts.empty()) {
    std::cout << "judge fleiss kappa: " << fleiss_kappa(RatingMatrix(3, counts)) << " (" << counts.size()
              << " sessions, " << panel << " judges)\n";
  }
  if (deceived.size() >= 3) {
    try {
      std::cout << "deceived-judge skewness: " << skewness(deceived)
                << " (bootstrap sign p = " << skewness_sign_pvalue(deceived) << ")\n";
    } catch (const EvaluationError& e) {
      std::cout << "deceived-judge skewness: undefined (" << e.what() << ")\n";
    }
  }

  if (!pred_a.empty() && !pred_b.empty()) {
    auto to_vec = [](const std::map<std::string, Prediction>& m) {
      std::vector<Prediction> v;
      for (const auto& [id, p] : m) v.push_back(p);
      return v;
    };
    const auto a = to_vec(load_predictions(pred_a));
    const auto b = to_vec(load_predictions(pred_b));
    std::cout << "prediction agreement (phi): " << prediction_agreement(a, b, truths_of(sessions))
              << "\n";
  }
  return kExitOk;
}

int cmd_serve(const std::string& corpus, const std::string& cue_preds, const std::string& sys_a,
              const std::string& sys_b, const std::string& log, ServerOptions opts,
              std::uint64_t seed) {
  StudyData data;
  data.sessions = parse_corpus(corpus, ParseOptions{false});
  data.cue_predictions = load_predictions(cue_preds);
  if (!sys_a.empty()) data.system_a = load_predictions(sys_a);
  if (!sys_b.empty()) data.system_b = load_predictions(sys_b);
  StudyOptions so;
  so.log_path = log;
  so.seed = seed;
  StudyService service(std::move(data), so);
  StudyServer server(service, opts);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "serving on " << opts.host << ":" << opts.port << "\n" << std::flush;
  if (!server.listen()) {
    std::cerr << "cannot bind " << opts.host << ":" << opts.port << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deception detection experiments over judged contestant sessions"};
  app.require_subcommand(1);

  std::string config;
  auto* run = app.add_subcommand("run", "Run an experiment matrix from a config file");
  run->add_option("config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);

  std::string corpus;
  bool strict = false;
  auto* validate = app.add_subcommand("validate", "Check a corpus and print statistics");
  validate->add_option("corpus", corpus, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  validate->add_flag("--warnings-as-errors", strict, "Exit with status 3 when warnings are found");

  std::string run_dir;
  auto* report = app.add_subcommand("report", "Rebuild table.md of a run directory");
  report->add_option("run_dir", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);

  std::string stats_corpus, pred_a, pred_b;
  auto* stats = app.add_subcommand("stats", "Corpus and judge statistics");
  stats->add_option("corpus", stats_corpus, "Corpus JSONL")->required()->check(CLI::ExistingFile);
  stats->add_option("--predictions-a", pred_a, "Predictions JSONL for agreement");
  stats->add_option("--predictions-b", pred_b, "Second predictions JSONL for agreement");

  std::string serve_corpus, cue_preds, sys_a, sys_b, log_path, static_dir;
  ServerOptions sopts;
  std::uint64_t seed = 0;
  auto* serve = app.add_subcommand("serve", "Serve the human-study API");
  serve->add_option("--corpus", serve_corpus, "Study sessions (JSONL)")->required()->check(CLI::ExistingFile);
  serve->add_option("--cues", cue_preds, "Predictions shown as cues (JSONL)")->required()->check(CLI::ExistingFile);
  serve->add_option("--system-a", sys_a, "First system for explanation rating (JSONL)");
  serve->add_option("--system-b", sys_b, "Second system for pairwise rating (JSONL)");
  serve->add_option("--log", log_path, "Event log path")->required();
  serve->add_option("--host", sopts.host, "Bind address")->capture_default_str();
  serve->add_option("--port", sopts.port, "Port")->capture_default_str();
  serve->add_option("--static-dir", static_dir, "Directory served at /");
  serve->add_option("--seed", seed, "Seed for pairwise left/right placement")->capture_default_str();
  serve->add_option("--admin-token-env", sopts.admin_token_env, "Variable holding the admin token")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config);
    if (*validate) return cmd_validate(corpus, strict);
    if (*report) return cmd_report(run_dir);
    if (*stats) return cmd_stats(stats_corpus, pred_a, pred_b);
    if (*serve) {
      if (!static_dir.empty()) sopts.static_dir = static_dir;
      return cmd_serve(serve_corpus, cue_preds, sys_a, sys_b, log_path, sopts, seed);
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const CorpusError& e) {
    std::cerr << "corpus error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
