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

// Detection variants: base and chain-of-thought prompting, the cue bottleneck
// (per-snippet cue extraction followed by a discriminator) and
// self-consistency voting over any of them.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "t4t/corpus.hpp"
#include "t4t/prompting.hpp"
#include "t4t/provider.hpp"

namespace t4t {

enum class VariantKind : std::uint8_t { Base, CoT, Bottleneck, BottleneckAblated, SelfConsistency };

std::string_view variant_kind_name(VariantKind k);
std::optional<VariantKind> parse_variant_kind(std::string_view s);

struct VariantConfig {
  VariantKind kind = VariantKind::Base;
  /// Variant sampled by self-consistency.
  VariantKind inner = VariantKind::CoT;
  std::vector<ControlKind> controls{kAllControls.begin(), kAllControls.end()};
  DerivationMode mode = DerivationMode::Sequential;
  std::size_t shots = 0;
  std::optional<std::size_t> sc_k;
  double sc_temperature = 0.7;

  static constexpr std::size_t kDefaultScK = 5;

  /// Throws std::invalid_argument on an inconsistent configuration.
  void validate() const;
  /// Stable identifier, e.g. "bottleneck", "bottleneck-wo-half_truths",
  /// "bottleneck-independent", "sc5-cot", with "-2shot" appended for demos.
  std::string id() const;
};

struct ControlAnnotation {
  std::size_t snippet_index = 0;
  ContestantLabel contestant = ContestantLabel::NumberOne;
  ControlValue control;
  std::string rationale;
  DerivationMode mode = DerivationMode::Sequential;
  bool parse_failed = false;

  bool operator==(const ControlAnnotation&) const = default;
};

struct Provenance {
  std::string model_id;
  std::string g_model_id;
  std::string template_version;
  std::size_t shots = 0;
  std::vector<std::string> digests;  // every provider request, in issue order
  std::size_t requeries = 0;

  bool operator==(const Provenance&) const = default;
};

struct Prediction {
  std::string session_id;
  std::string variant;
  std::optional<Ranking> ranking;  // empty for invalid output
  std::string explanation;
  std::vector<ControlAnnotation> annotations;
  Provenance provenance;
  std::string error;  // reason when the output was unreadable

  bool valid() const { return ranking.has_value(); }
  std::optional<ContestantLabel> top1() const {
    return ranking ? std::optional((*ranking)[0]) : std::nullopt;
  }
  bool operator==(const Prediction&) const = default;
};

nlohmann::ordered_json to_json(const Prediction& p);
Prediction prediction_from_json(const nlohmann::json& j);
/// Applies `perm` to ranking and annotation contestants.
Prediction permute_prediction(const Prediction& p, const LabelPermutation& perm);

/// Per-call sampling overrides; index feeds GenerationRequest::sample_tag.
struct SampleSpec {
  std::uint64_t index = 0;
  std::optional<double> temperature;
};

struct PipelineOptions {
  std::string model_id;    // base/CoT model and discriminator
  std::string g_model_id;  // cue extractor; empty means model_id
  std::vector<Demo> demos;
  std::size_t token_budget = 0;
  double temperature = 0.0;
  int max_tokens = 1024;
  double top_p = 1.0;
  bool parallel = true;
};

class Pipeline {
 public:
  /// `g_provider` serves cue extraction; defaults to `provider`.
  Pipeline(Provider& provider, PipelineOptions options, Provider* g_provider = nullptr);

  Prediction run_base(const Session& session, const VariantConfig& cfg, const SampleSpec& sample = {});
  Prediction run_cot(const Session& session, const VariantConfig& cfg, const SampleSpec& sample = {});

  /// Snippet-major, control-minor (ControlKind order) annotations.
  std::vector<ControlAnnotation> extract_controls(const Session& session,
                                                  const std::vector<ControlKind>& controls,
                                                  DerivationMode mode,
                                                  std::vector<std::string>* digests = nullptr,
                                                  std::size_t* requeries = nullptr);

  Prediction discriminate(const Session& session, const std::vector<ControlAnnotation>& annotations,
                          const VariantConfig& cfg, const SampleSpec& sample = {});

  Prediction run_bottleneck(const Session& session, const VariantConfig& cfg,
                            const SampleSpec& sample = {});

  /// Dispatches on cfg.kind, including self-consistency.
  Prediction run(const Session& session, const VariantConfig& cfg);

  const PipelineOptions& options() const { return options_; }

 private:
  struct Answer {
    std::optional<ParsedAnswer> parsed;
    std::string error;
  };
  Answer ask(Provider& p, const PromptBundle& bundle, const std::string& model,
             const SampleSpec& sample, Provenance& prov);
  Prediction finish(const Session& session, const VariantConfig& cfg, Answer answer,
                    Provenance prov) const;
  Provenance provenance(const VariantConfig& cfg) const;
  GenerationRequest request_for(const PromptBundle& b, const std::string& model,
                                const SampleSpec& sample) const;

  Provider& provider_;
  Provider& g_provider_;
  PipelineOptions options_;
};

/// Majority vote over samples: top-1 by count (ties to the lowest label),
/// the rest ordered by Borda count (ties to the lowest label); explanation and
/// annotations from the first sample whose top-1 is the winner.
Prediction aggregate_samples(const std::vector<Prediction>& samples, const std::string& variant);

/// Runs `run` k times and aggregates. k = 1 returns the unmodified single run.
Prediction self_consistency(const std::function<Prediction(const SampleSpec&)>& run, std::size_t k,
                            double temperature, const std::string& variant);

/// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first
/// exception after all workers stop.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace t4t
