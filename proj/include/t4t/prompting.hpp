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

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "t4t/corpus.hpp"

namespace t4t {

/// The four deception cues, in canonical order.
enum class ControlKind : std::uint8_t { Entailment = 0, Ambiguity = 1, Overconfidence = 2, HalfTruths = 3 };

inline constexpr std::array<ControlKind, 4> kAllControls = {
    ControlKind::Entailment, ControlKind::Ambiguity, ControlKind::Overconfidence,
    ControlKind::HalfTruths};

/// "entailment", "ambiguity", "overconfidence", "half_truths".
std::string_view control_id(ControlKind k);
std::optional<ControlKind> parse_control_id(std::string_view s);

/// Union of every kind's label domain; `Neutral` is shared by Entailment and
/// Overconfidence.
enum class ControlLabel : std::uint8_t {
  Entail,
  Contradiction,
  Neutral,
  Ambiguous,
  Unambiguous,
  Overconfident,
  HalfTruth,
  NoHalfTruth,
};

enum class Verdict : std::uint8_t { LikelyImposter, LikelyTruePerson, Inconclusive };

std::vector<ControlLabel> label_domain(ControlKind k);
bool label_in_domain(ControlKind k, ControlLabel l);
/// Canonical keyword used in prompts and responses ("contradiction", "half-truth", ...).
std::string_view control_label_name(ControlLabel l);
std::optional<ControlLabel> parse_control_label(std::string_view s);
std::string_view verdict_name(Verdict v);  // "likely imposter", "likely the true person", "inconclusive"
std::optional<Verdict> parse_verdict_name(std::string_view s);

struct ControlValue {
  ControlKind kind = ControlKind::Entailment;
  std::optional<ControlLabel> label;  // empty only for unreadable completions
  Verdict verdict = Verdict::Inconclusive;

  bool operator==(const ControlValue&) const = default;
};

enum class TemplateId : std::uint8_t { Base, CoT, BottleneckControl, Discriminator };
enum class DerivationMode : std::uint8_t { Independent, Sequential };

std::string_view template_id_name(TemplateId t);
std::string_view mode_name(DerivationMode m);
std::optional<DerivationMode> parse_mode(std::string_view s);

struct PromptBundle {
  std::string system;
  std::string user;
  TemplateId template_id = TemplateId::Base;
  std::optional<ControlKind> control;
  std::size_t shots = 0;

  bool operator==(const PromptBundle&) const = default;
};

/// Version tag recorded in every prediction's provenance.
std::string_view prompt_template_version();
/// Raw template text by resource name (e.g. "task", "control_entailment").
std::string_view prompt_resource(std::string_view name);

class PromptError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Completion could not be read.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Completion names zero or several labels where exactly one is required.
class AmbiguityError : public FormatError {
 public:
  using FormatError::FormatError;
};

using Demo = std::pair<Session, ContestantLabel>;

std::string render_conversation(const Session& s);
/// "Snippet <n> (addressed to Number X):" followed by the judge/contestant lines.
std::string render_snippet(const Snippet& sn, std::size_t index);

PromptBundle build_task_prompt(const Session& session, std::size_t shots,
                               const std::vector<Demo>& demos);
PromptBundle append_cot(const PromptBundle& bundle);

struct BottleneckPromptOptions {
  /// Approximate token budget for the rendered user prompt; 0 disables
  /// elision. Oldest history snippets are dropped first.
  std::size_t token_budget = 0;
};

PromptBundle build_bottleneck_prompt(ControlKind control, const Session& session,
                                     const std::vector<Snippet>& snippets,
                                     std::size_t target_index, DerivationMode mode,
                                     const BottleneckPromptOptions& opts = {});

/// One rendered cue line for the discriminator input.
struct RenderedCue {
  ControlKind kind;
  ControlValue value;
  std::string rationale;
};

PromptBundle build_discriminator_prompt(const Session& session, const std::vector<Snippet>& snippets,
                                        const std::vector<std::vector<RenderedCue>>& cues,
                                        std::size_t shots, const std::vector<Demo>& demos);

/// Appended to the user prompt on the single re-query after a parse failure.
PromptBundle with_format_reminder(const PromptBundle& bundle);

/// Rough token estimate (characters / 4, rounded up).
std::size_t estimate_tokens(std::string_view s);

// ---------------------------------------------------------------------------
// Parsing

struct ParsedPrediction {
  std::string rationale;
  ContestantLabel label;
};

using Ranking = std::array<ContestantLabel, 3>;

ParsedPrediction parse_prediction(std::string_view completion);
/// The last complete "1. Number X 2. Number Y 3. Number Z" list in the text.
Ranking parse_ranking(std::string_view completion);
ControlValue parse_control_verdict(std::string_view completion, ControlKind kind);
/// Text after "Rationale:" when present, otherwise the trimmed completion.
std::string parse_control_rationale(std::string_view completion);

struct ParsedAnswer {
  std::string explanation;
  Ranking ranking;
};

/// Full answer of a task or discriminator call: the numbered ranking is
/// required; a trailing "### label" is optional but must agree with it.
ParsedAnswer parse_answer(std::string_view completion);

/// Canonical three-line response for a control; parse_control_verdict inverts it.
std::string format_control_response(const ControlValue& v, std::string_view rationale);

}  // namespace t4t
