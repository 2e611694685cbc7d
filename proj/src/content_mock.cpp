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

#include "t4t/content_mock.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <regex>

#include "t4t/prompting.hpp"
#include "t4t/text.hpp"

namespace t4t {

namespace {

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;
constexpr std::uint64_t kFnvPrime = 1099511628211ULL;

std::uint64_t fnv(std::string_view s, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : s) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= kFnvPrime;
  }
  return h;
}

bool starts_with(std::string_view s, std::string_view p) { return s.substr(0, p.size()) == p; }

std::string hex_short(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(h & 0xffffffffULL));
  return buf;
}

struct Scored {
  ContestantLabel label;
  long score;
  std::uint64_t hash;
};

std::string answer_with(std::array<Scored, 3> s, const ContentMockOptions& opts, std::string why) {
  auto tie = opts.tie_break.inverse();
  std::sort(s.begin(), s.end(), [&](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.hash != b.hash) return a.hash > b.hash;
    return label_index(tie(a.label)) < label_index(tie(b.label));
  });
  std::string out = std::move(why);
  out += "\n1. " + std::string(label_name(s[0].label));
  out += "\n2. " + std::string(label_name(s[1].label));
  out += "\n3. " + std::string(label_name(s[2].label));
  out += "\n### " + std::string(label_name(s[0].label));
  return out;
}

std::uint64_t sample_salt(const GenerationRequest& r, const ContentMockOptions& opts) {
  return opts.vary_with_sample_tag && r.temperature > 0.0 ? r.sample_tag + 1 : 0;
}

// Judge/Contestant lines attributed to whichever contestant the judge last named.
std::string task_answer(std::string_view body, const GenerationRequest& r,
                        const ContentMockOptions& opts) {
  std::array<std::string, 3> text;
  std::optional<ContestantLabel> current;
  for (const auto& line : text::split_lines(body)) {
    std::string_view l = line;
    if (starts_with(l, "Judge: ")) {
      if (auto a = detect_addressee(l.substr(7))) current = a;
      if (current) text[label_index(*current)] += line + "\n";
    } else if (starts_with(l, "Contestant: ") && current) {
      text[label_index(*current)] += line + "\n";
    }
  }
  std::array<Scored, 3> s;
  for (auto l : kAllLabels)
    s[label_index(l)] = {l, 0, mix(content_hash(text[label_index(l)]), sample_salt(r, opts))};
  return answer_with(s, opts, "Rationale: compared the answers of each contestant against the affidavit.");
}

std::string discriminator_answer(std::string_view body, const GenerationRequest& r,
                                 const ContentMockOptions& opts) {
  std::array<std::string, 3> text;
  std::array<long, 3> score{};
  std::optional<ContestantLabel> current;
  static const std::regex header(R"(^Snippet \d+ \(addressed to (Number (One|Two|Three))\):)");
  for (const auto& line : text::split_lines(body)) {
    std::smatch m;
    if (std::regex_search(line, m, header)) {
      current = parse_label(m[1].str());
      continue;
    }
    if (!current) continue;
    const std::size_t i = label_index(*current);
    if (starts_with(line, "- ")) {
      if (text::contains(line, "likely imposter")) --score[i];
      else if (text::contains(line, "likely the true person")) ++score[i];
    } else if (starts_with(line, "Judge: ") || starts_with(line, "Contestant: ")) {
      text[i] += line + "\n";
    }
  }
  std::array<Scored, 3> s;
  for (auto l : kAllLabels) {
    const std::size_t i = label_index(l);
    s[i] = {l, score[i], mix(content_hash(text[i]), sample_salt(r, opts))};
  }
  return answer_with(s, opts, "Rationale: weighed the cue verdicts of every snippet.");
}

std::string control_answer(std::string_view prompt, const GenerationRequest& r,
                           const ContentMockOptions& opts) {
  static const std::regex target(R"(Target snippet: Snippet (\d+) \()");
  const std::string whole(prompt);
  std::smatch m;
  std::regex_search(whole, m, target);
  const std::string head = "Snippet " + m[1].str() + " (addressed to ";

  std::optional<ControlKind> kind;
  std::string snippet;
  bool inside = false;
  for (const auto& line : text::split_lines(prompt)) {
    for (auto k : kAllControls) {
      std::string heading(control_id(k));
      if (k == ControlKind::HalfTruths) heading = "half-truths";
      heading += ":";
      if (starts_with(text::to_lower(line), heading)) kind = k;
    }
    if (starts_with(line, head)) {
      inside = true;
      continue;
    }
    if (inside) {
      if (!starts_with(line, "Judge: ") && !starts_with(line, "Contestant: ")) {
        inside = false;
        continue;
      }
      snippet += line + "\n";
    }
  }
  if (!kind) throw ScriptedMissError("content mock: control prompt without a cue heading");

  std::uint64_t h = mix(fnv(control_id(*kind), content_hash(snippet)), sample_salt(r, opts));
  auto domain = label_domain(*kind);
  ControlValue v;
  v.kind = *kind;
  v.label = domain[h % domain.size()];
  v.verdict = (h >> 16) % 2 == 0 ? Verdict::LikelyImposter : Verdict::LikelyTruePerson;
  return format_control_response(v, "Answer signature " + hex_short(h) + ".");
}

}  // namespace

std::uint64_t content_hash(std::string_view text) {
  static const std::regex mention(R"(number\s+(one|two|three)\b)");
  const std::string norm = std::regex_replace(text::to_lower(text), mention, "number #");
  return fnv(norm);
}

std::string content_mock_completion(const GenerationRequest& request,
                                    const ContentMockOptions& options) {
  std::string_view p = request.user_prompt;
  if (text::contains(p, "Target snippet: Snippet ")) return control_answer(p, request, options);
  if (auto pos = p.rfind("Annotated conversation:"); pos != std::string_view::npos)
    return discriminator_answer(p.substr(pos), request, options);
  if (auto pos = p.rfind("Conversations:\n"); pos != std::string_view::npos) {
    auto body = p.substr(pos);
    if (auto end = body.rfind("\nAnswer:"); end != std::string_view::npos) body = body.substr(0, end);
    return task_answer(body, request, options);
  }
  throw ScriptedMissError("content mock: unrecognised prompt");
}

MockScript content_mock_script(const ContentMockOptions& options) {
  MockScript script;
  script.respond("content", [options](const GenerationRequest& r) {
    std::vector<std::string> out;
    for (int i = 0; i < std::max(1, r.n_samples); ++i) out.push_back(content_mock_completion(r, options));
    return std::optional<std::vector<std::string>>(std::move(out));
  });
  return script;
}

}  // namespace t4t
