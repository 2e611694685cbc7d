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

// Experiment orchestration. A run directory holds:
//   config.snapshot               normalized configuration
//   predictions/<cell>.jsonl      one prediction per session, corpus order
//   predictions/<cell>.partial    in-progress appends (removed on completion)
//   reports/<cell>.json, .csv     EvalReport and per-session rows
//   table.md                      comparison table
// where <cell> is "<variant id>__<model name>".

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "t4t/corpus.hpp"
#include "t4t/pipeline.hpp"
#include "t4t/provider.hpp"

namespace t4t {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ReportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum ExitCode : int { kExitOk = 0, kExitConfig = 1, kExitRuntime = 2, kExitWarnings = 3 };

struct ModelSpec {
  std::string name;
  std::string kind;      // "mock" or "openai"
  std::string model_id;  // sent to the backend and recorded in provenance
  ProviderConfig provider;
  /// Optional MockScript rules tried before the content responder.
  nlohmann::json mock_rules = nlohmann::json::array();
};

struct CellSpec {
  VariantConfig variant;
  std::string model;    // ModelSpec name
  std::string g_model;  // cue extractor; empty means `model`

  std::string id() const;
};

struct ExperimentConfig {
  std::filesystem::path corpus;
  std::filesystem::path output_dir;
  std::optional<std::filesystem::path> cache_dir;  // default <output_dir>/cache
  std::optional<std::uint64_t> anonymization_seed;  // anonymize names when set
  std::vector<std::string> demo_session_ids;
  std::size_t token_budget = 0;
  std::map<std::string, ModelSpec> models;
  std::vector<CellSpec> matrix;

  /// Relative paths resolve against `base_dir`.
  static ExperimentConfig from_json(const nlohmann::json& j,
                                    const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::ordered_json to_json() const;
  /// Structural checks that need no corpus; throws ConfigError.
  void validate() const;
};

struct RunOptions {
  /// Called after every persisted prediction with the running total; tests
  /// use it to interrupt a run.
  std::function<void(std::size_t)> on_persisted;
  /// Replaces the backend of a model by name (tests, offline smoke runs).
  std::map<std::string, std::shared_ptr<Backend>> backend_overrides;
};

struct CellSummary {
  std::string cell;
  std::size_t resumed = 0;   // predictions recovered from a partial file
  std::size_t computed = 0;  // predictions produced in this invocation
  std::size_t provider_requests = 0;
  std::size_t backend_calls = 0;
};

struct RunSummary {
  std::filesystem::path run_dir;
  std::vector<CellSummary> cells;
};

/// Throws ConfigError before any session runs (including unresolved
/// credentials of remote models) and ProviderError on provider failure.
RunSummary run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

/// Rewrites table.md from reports/ in the matrix order of config.snapshot;
/// throws ReportError listing cells without a report.
std::filesystem::path emit_report(const std::filesystem::path& run_dir);

/// Reads a predictions JSONL file into a map keyed by session id.
std::map<std::string, Prediction> load_predictions(const std::filesystem::path& path);

struct CorpusValidation {
  CorpusStats stats;
  std::vector<std::string> warnings;
};

/// Parses leniently and reports structural problems as warnings.
CorpusValidation validate_corpus(const std::filesystem::path& path);

}  // namespace t4t
