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

#include "t4t/prompting.hpp"

#include <algorithm>
#include <map>
#include <regex>
#include <set>

#include "t4t/text.hpp"

namespace t4t {

namespace detail {
extern const std::string_view kPromptVersion;
extern const std::map<std::string_view, std::string_view> kPromptResources;
}  // namespace detail

std::string_view prompt_template_version() { return detail::kPromptVersion; }

std::string_view prompt_resource(std::string_view name) {
  auto it = detail::kPromptResources.find(name);
  if (it == detail::kPromptResources.end()) {
    throw PromptError("unknown prompt resource: " + std::string(name));
  }
  return it->second;
}

// ---------------------------------------------------------------------------
// Names

std::string_view control_id(ControlKind k) {
  switch (k) {
    case ControlKind::Entailment: return "entailment";
    case ControlKind::Ambiguity: return "ambiguity";
    case ControlKind::Overconfidence: return "overconfidence";
    case ControlKind::HalfTruths: return "half_truths";
  }
  return "entailment";
}

std::optional<ControlKind> parse_control_id(std::string_view s) {
  std::string norm = text::to_lower(text::trim(s));
  std::replace(norm.begin(), norm.end(), '-', '_');
  if (norm == "half_truth") norm = "half_truths";
  for (ControlKind k : kAllControls) {
    if (control_id(k) == norm) return k;
  }
  return std::nullopt;
}

namespace {

std::string_view control_display_name(ControlKind k) {
  switch (k) {
    case ControlKind::Entailment: return "Entailment";
    case ControlKind::Ambiguity: return "Ambiguity";
    case ControlKind::Overconfidence: return "Overconfidence";
    case ControlKind::HalfTruths: return "Half-truths";
  }
  return "Entailment";
}

std::string_view control_resource(ControlKind k) {
  switch (k) {
    case ControlKind::Entailment: return "control_entailment";
    case ControlKind::Ambiguity: return "control_ambiguity";
    case ControlKind::Overconfidence: return "control_overconfidence";
    case ControlKind::HalfTruths: return "control_half_truths";
  }
  return "control_entailment";
}

std::string rstrip_newlines(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
  return s;
}

}  // namespace

std::vector<ControlLabel> label_domain(ControlKind k) {
  switch (k) {
    case ControlKind::Entailment:
      return {ControlLabel::Entail, ControlLabel::Contradiction, ControlLabel::Neutral};
    case ControlKind::Ambiguity: return {ControlLabel::Ambiguous, ControlLabel::Unambiguous};
    case ControlKind::Overconfidence: return {ControlLabel::Overconfident, ControlLabel::Neutral};
    case ControlKind::HalfTruths: return {ControlLabel::HalfTruth, ControlLabel::NoHalfTruth};
  }
  return {};
}

bool label_in_domain(ControlKind k, ControlLabel l) {
  const auto d = label_domain(k);
  return std::find(d.begin(), d.end(), l) != d.end();
}

std::string_view control_label_name(ControlLabel l) {
  switch (l) {
    case ControlLabel::Entail: return "entail";
    case ControlLabel::Contradiction: return "contradiction";
    case ControlLabel::Neutral: return "neutral";
    case ControlLabel::Ambiguous: return "ambiguous";
    case ControlLabel::Unambiguous: return "unambiguous";
    case ControlLabel::Overconfident: return "overconfident";
    case ControlLabel::HalfTruth: return "half-truth";
    case ControlLabel::NoHalfTruth: return "no half-truth";
  }
  return "neutral";
}

std::optional<ControlLabel> parse_control_label(std::string_view s) {
  const std::string norm = text::to_lower(text::trim(s));
  for (auto l : {ControlLabel::Entail, ControlLabel::Contradiction, ControlLabel::Neutral,
                 ControlLabel::Ambiguous, ControlLabel::Unambiguous, ControlLabel::Overconfident,
                 ControlLabel::HalfTruth, ControlLabel::NoHalfTruth}) {
    if (control_label_name(l) == norm) return l;
  }
  return std::nullopt;
}

std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::LikelyImposter: return "likely imposter";
    case Verdict::LikelyTruePerson: return "likely the true person";
    case Verdict::Inconclusive: return "inconclusive";
  }
  return "inconclusive";
}

std::optional<Verdict> parse_verdict_name(std::string_view s) {
  const std::string norm = text::to_lower(text::trim(s));
  for (auto v : {Verdict::LikelyImposter, Verdict::LikelyTruePerson, Verdict::Inconclusive}) {
    if (verdict_name(v) == norm) return v;
  }
  return std::nullopt;
}

std::string_view template_id_name(TemplateId t) {
  switch (t) {
    case TemplateId::Base: return "base";
    case TemplateId::CoT: return "cot";
    case TemplateId::BottleneckControl: return "bottleneck_control";
    case TemplateId::Discriminator: return "discriminator";
  }
  return "base";
}

std::string_view mode_name(DerivationMode m) {
  return m == DerivationMode::Independent ? "independent" : "sequential";
}

std::optional<DerivationMode> parse_mode(std::string_view s) {
  const std::string norm = text::to_lower(text::trim(s));
  if (norm == "independent") return DerivationMode::Independent;
  if (norm == "sequential") return DerivationMode::Sequential;
  return std::nullopt;
}

std::size_t estimate_tokens(std::string_view s) { return (s.size() + 3) / 4; }

// ---------------------------------------------------------------------------
// Rendering

std::string render_conversation(const Session& s) {
  std::string out;
  for (const auto& u : s.utterances) {
    if (!out.empty()) out += '\n';
    out += u.speaker == Speaker::Judge ? "Judge: " : "Contestant: ";
    out += u.text;
  }
  return out;
}

std::string render_snippet(const Snippet& sn, std::size_t index) {
  std::string out = "Snippet " + std::to_string(index + 1) + " (addressed to " +
                    std::string(label_name(sn.contestant)) + "):";
  for (const auto& qa : sn.qa_pairs) {
    out += "\nJudge: " + qa.question.text;
    for (const auto& a : qa.answers) out += "\nContestant: " + a.text;
  }
  return out;
}

namespace {

std::string render_input(const Session& s) {
  return text::render(prompt_resource("input"), {{"name", s.cc_name},
                                                 {"affidavit", s.affidavit},
                                                 {"conversation", render_conversation(s)}});
}

std::string render_demos(const Session& session, std::size_t shots, const std::vector<Demo>& demos) {
  if (shots != demos.size()) {
    throw PromptError("shots = " + std::to_string(shots) + " but " + std::to_string(demos.size()) +
                      " demonstrations supplied");
  }
  std::string out;
  for (const auto& [demo, gold] : demos) {
    if (demo.id == session.id) {
      throw PromptError("demonstration session \"" + demo.id + "\" is the evaluated session");
    }
    out += text::render(prompt_resource("demo"),
                        {{"input", render_input(demo)}, {"label", std::string(label_name(gold))}});
  }
  return out;
}

}  // namespace

PromptBundle build_task_prompt(const Session& session, std::size_t shots,
                               const std::vector<Demo>& demos) {
  PromptBundle b;
  b.system = std::string(prompt_resource("system"));
  b.user = rstrip_newlines(text::render(
      prompt_resource("task"), {{"rules", std::string(prompt_resource("rules"))},
                                {"ranking_instruction", std::string(prompt_resource("ranking"))},
                                {"demos", render_demos(session, shots, demos)},
                                {"input", render_input(session)}}));
  b.template_id = TemplateId::Base;
  b.shots = shots;
  return b;
}

PromptBundle append_cot(const PromptBundle& bundle) {
  if (bundle.template_id != TemplateId::Base) {
    throw PromptError("chain-of-thought applies only to base prompts, got " +
                      std::string(template_id_name(bundle.template_id)));
  }
  PromptBundle out = bundle;
  out.user += prompt_resource("cot");
  out.template_id = TemplateId::CoT;
  return out;
}

PromptBundle build_bottleneck_prompt(ControlKind control, const Session& session,
                                     const std::vector<Snippet>& snippets,
                                     std::size_t target_index, DerivationMode mode,
                                     const BottleneckPromptOptions& opts) {
  if (target_index >= snippets.size()) {
    throw PromptError("target snippet " + std::to_string(target_index) + " out of range (" +
                      std::to_string(snippets.size()) + " snippets)");
  }
  std::string label_options;
  for (ControlLabel l : label_domain(control)) {
    if (!label_options.empty()) label_options += ", ";
    label_options += control_label_name(l);
  }
  const bool with_history = mode == DerivationMode::Sequential && target_index > 0;

  auto render_with = [&](std::size_t first, bool elided) {
    std::string block;
    if (elided) block += "[earlier snippets elided]\n\n";
    for (std::size_t i = first; i <= target_index; ++i) {
      block += render_snippet(snippets[i], i);
      block += "\n\n";
    }
    return rstrip_newlines(text::render(
        prompt_resource("bottleneck"),
        {{"rules", std::string(prompt_resource("rules"))},
         {"name", session.cc_name},
         {"affidavit", session.affidavit},
         {"instruction", rstrip_newlines(std::string(prompt_resource(control_resource(control))))},
         {"snippets", block},
         {"target", std::to_string(target_index + 1)},
         {"contestant", std::string(label_name(snippets[target_index].contestant))},
         {"history_note", with_history ? std::string(prompt_resource("history_note")) : ""},
         {"label_options", label_options}}));
  };

  const std::size_t first = mode == DerivationMode::Sequential ? 0 : target_index;
  std::string user = render_with(first, false);
  if (opts.token_budget > 0) {
    for (std::size_t drop = first + 1; drop <= target_index &&
                                       estimate_tokens(user) > opts.token_budget;
         ++drop) {
      user = render_with(drop, true);
    }
  }

  PromptBundle b;
  b.system = std::string(prompt_resource("system"));
  b.user = std::move(user);
  b.template_id = TemplateId::BottleneckControl;
  b.control = control;
  return b;
}

PromptBundle build_discriminator_prompt(const Session& session, const std::vector<Snippet>& snippets,
                                        const std::vector<std::vector<RenderedCue>>& cues,
                                        std::size_t shots, const std::vector<Demo>& demos) {
  if (cues.size() != snippets.size()) {
    throw PromptError("cue list covers " + std::to_string(cues.size()) + " snippets, expected " +
                      std::to_string(snippets.size()));
  }
  std::string annotated;
  for (std::size_t i = 0; i < snippets.size(); ++i) {
    annotated += render_snippet(snippets[i], i);
    annotated += "\nCues:";
    for (const auto& c : cues[i]) {
      annotated += "\n- ";
      annotated += control_display_name(c.kind);
      annotated += ": ";
      annotated += c.value.label ? control_label_name(*c.value.label) : "unreadable";
      annotated += "; ";
      annotated += verdict_name(c.value.verdict);
      if (!c.rationale.empty()) {
        annotated += "; ";
        annotated += c.rationale;
      }
    }
    annotated += "\n\n";
  }
  PromptBundle b;
  b.system = std::string(prompt_resource("system"));
  b.user = rstrip_newlines(text::render(
      prompt_resource("discriminator"),
      {{"rules", std::string(prompt_resource("rules"))},
       {"demos", render_demos(session, shots, demos)},
       {"name", session.cc_name},
       {"affidavit", session.affidavit},
       {"annotated", annotated},
       {"ranking_instruction", std::string(prompt_resource("ranking"))}}));
  b.template_id = TemplateId::Discriminator;
  b.shots = shots;
  return b;
}

PromptBundle with_format_reminder(const PromptBundle& bundle) {
  PromptBundle out = bundle;
  out.user += "\n\n";
  out.user += bundle.template_id == TemplateId::BottleneckControl
                  ? prompt_resource("control_reminder")
                  : prompt_resource("format_reminder");
  return out;
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

const std::regex& label_phrase_re() {
  static const std::regex re(R"(\bnumber\s+(one|two|three|1|2|3)\b)", std::regex::icase);
  return re;
}

ContestantLabel label_from_word(const std::string& w) {
  const std::string l = text::to_lower(w);
  if (l == "one" || l == "1") return ContestantLabel::NumberOne;
  if (l == "two" || l == "2") return ContestantLabel::NumberTwo;
  return ContestantLabel::NumberThree;
}

}  // namespace

ParsedPrediction parse_prediction(std::string_view completion) {
  const auto marker = completion.rfind("###");
  if (marker == std::string_view::npos) throw FormatError("no ### answer marker");
  const std::string tail(completion.substr(marker + 3));
  std::set<ContestantLabel> found;
  for (auto it = std::sregex_iterator(tail.begin(), tail.end(), label_phrase_re());
       it != std::sregex_iterator(); ++it) {
    found.insert(label_from_word((*it)[1].str()));
  }
  if (found.empty()) throw AmbiguityError("no contestant label after ###");
  if (found.size() > 1) throw AmbiguityError("several contestant labels after ###");
  return {std::string(text::trim(completion.substr(0, marker))), *found.begin()};
}

Ranking parse_ranking(std::string_view completion) {
  static const std::regex item_re(R"((^|[^0-9A-Za-z])([123])\s*[.):]\s*number\s+(one|two|three)\b)",
                                  std::regex::icase);
  struct Item {
    int position;
    ContestantLabel label;
  };
  std::vector<Item> items;
  const std::string s(completion);
  for (auto it = std::sregex_iterator(s.begin(), s.end(), item_re); it != std::sregex_iterator();
       ++it) {
    items.push_back({std::stoi((*it)[2].str()), label_from_word((*it)[3].str())});
  }
  if (items.size() >= 3) {
    for (std::size_t a = items.size() - 2; a-- > 0;) {
      if (items[a].position != 1 || items[a + 1].position != 2 || items[a + 2].position != 3) {
        continue;
      }
      Ranking r = {items[a].label, items[a + 1].label, items[a + 2].label};
      if (r[0] == r[1] || r[0] == r[2] || r[1] == r[2]) {
        throw FormatError("ranking repeats a contestant");
      }
      return r;
    }
  }
  throw FormatError("no complete numbered ranking of the three contestants");
}

namespace {

struct Keyword {
  std::regex re;
  ControlLabel label;
};

const std::vector<Keyword>& keywords(ControlKind k) {
  constexpr auto icase = std::regex::icase;
  static const std::vector<Keyword> entail = {
      {std::regex(R"(\bentail(s|ed)?\b)", icase), ControlLabel::Entail},
      {std::regex(R"(\bcontradict(s|ion|ory|ed)?\b)", icase), ControlLabel::Contradiction},
      {std::regex(R"(\bneutral\b)", icase), ControlLabel::Neutral},
  };
  static const std::vector<Keyword> ambiguity = {
      {std::regex(R"(\b(unambiguous|not\s+ambiguous)\b)", icase), ControlLabel::Unambiguous},
      {std::regex(R"(\bambiguous\b)", icase), ControlLabel::Ambiguous},
  };
  static const std::vector<Keyword> overconfidence = {
      {std::regex(R"(\b(neutral|not\s+over-?confident)\b)", icase), ControlLabel::Neutral},
      {std::regex(R"(\bover-?confiden(t|ce)\b)", icase), ControlLabel::Overconfident},
  };
  static const std::vector<Keyword> half = {
      {std::regex(R"(\b(no|not\s+(a\s+)?|without\s+(any\s+)?)\s*half[- ]?truths?\b)", icase),
       ControlLabel::NoHalfTruth},
      {std::regex(R"(\bnohalftruth\b)", icase), ControlLabel::NoHalfTruth},
      {std::regex(R"(\bhalf[- ]?truths?\b)", icase), ControlLabel::HalfTruth},
  };
  switch (k) {
    case ControlKind::Entailment: return entail;
    case ControlKind::Ambiguity: return ambiguity;
    case ControlKind::Overconfidence: return overconfidence;
    case ControlKind::HalfTruths: return half;
  }
  return entail;
}

/// Earliest keyword match; on equal start the longer match wins.
std::optional<ControlLabel> find_label(const std::string& s, ControlKind kind) {
  std::optional<ControlLabel> best;
  std::ptrdiff_t best_pos = -1;
  std::ptrdiff_t best_len = 0;
  for (const auto& kw : keywords(kind)) {
    std::smatch m;
    if (!std::regex_search(s, m, kw.re)) continue;
    const auto pos = m.position(0);
    const auto len = m.length(0);
    if (!best || pos < best_pos || (pos == best_pos && len > best_len)) {
      best = kw.label;
      best_pos = pos;
      best_len = len;
    }
  }
  return best;
}

std::optional<Verdict> find_verdict(const std::string& s) {
  static const std::regex imposter(R"(\blikely\s+(an?\s+)?imposter\b)", std::regex::icase);
  static const std::regex truthful(R"(\blikely\s+(the\s+)?(true|real)\s+person\b)",
                                   std::regex::icase);
  std::smatch a;
  std::smatch b;
  const bool ha = std::regex_search(s, a, imposter);
  const bool hb = std::regex_search(s, b, truthful);
  if (ha && (!hb || a.position(0) <= b.position(0))) return Verdict::LikelyImposter;
  if (hb) return Verdict::LikelyTruePerson;
  return std::nullopt;
}

std::optional<std::string> field_line(std::string_view completion, std::string_view field) {
  const std::regex re("^\\s*[*_#\\s]*" + std::string(field) + "[*_\\s]*:\\s*(.*)$",
                      std::regex::icase);
  for (const auto& line : text::split_lines(completion)) {
    std::smatch m;
    if (std::regex_match(line, m, re)) return m[1].str();
  }
  return std::nullopt;
}

}  // namespace

ControlValue parse_control_verdict(std::string_view completion, ControlKind kind) {
  const std::string whole(completion);
  std::optional<ControlLabel> label;
  if (auto line = field_line(completion, "label")) label = find_label(*line, kind);
  if (!label) label = find_label(whole, kind);
  if (!label) {
    throw FormatError("no " + std::string(control_id(kind)) + " label keyword in completion");
  }
  std::optional<Verdict> verdict;
  if (auto line = field_line(completion, "verdict")) verdict = find_verdict(*line);
  if (!verdict) verdict = find_verdict(whole);
  return ControlValue{kind, label, verdict.value_or(Verdict::Inconclusive)};
}

std::string parse_control_rationale(std::string_view completion) {
  if (auto line = field_line(completion, "rationale")) return std::string(text::trim(*line));
  return std::string(text::trim(completion));
}

std::string format_control_response(const ControlValue& v, std::string_view rationale) {
  std::string out = "Label: ";
  out += v.label ? control_label_name(*v.label) : "unreadable";
  out += "\nVerdict: ";
  out += verdict_name(v.verdict);
  out += "\nRationale: ";
  out += rationale;
  return out;
}

ParsedAnswer parse_answer(std::string_view completion) {
  const Ranking ranking = parse_ranking(completion);
  std::string explanation(text::trim(completion));
  if (completion.rfind("###") != std::string_view::npos) {
    try {
      const auto p = parse_prediction(completion);
      if (p.label != ranking[0]) {
        throw FormatError("### answer " + std::string(label_name(p.label)) +
                          " disagrees with ranking head " + std::string(label_name(ranking[0])));
      }
      explanation = p.rationale;
    } catch (const AmbiguityError&) {
      // "### 1. Number One 2. ..." style: the ranking already carries the answer.
      explanation = std::string(text::trim(completion.substr(0, completion.rfind("###"))));
    }
  }
  return {std::move(explanation), ranking};
}

}  // namespace t4t
