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

#include "t4t/pipeline.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <exception>
#include <mutex>
#include <set>
#include <thread>

#include "t4t/text.hpp"

namespace t4t {

std::string_view variant_kind_name(VariantKind k) {
  switch (k) {
    case VariantKind::Base: return "base";
    case VariantKind::CoT: return "cot";
    case VariantKind::Bottleneck: return "bottleneck";
    case VariantKind::BottleneckAblated: return "bottleneck_ablated";
    case VariantKind::SelfConsistency: return "self_consistency";
  }
  return "base";
}

std::optional<VariantKind> parse_variant_kind(std::string_view s) {
  const std::string norm = text::to_lower(text::trim(s));
  for (auto k : {VariantKind::Base, VariantKind::CoT, VariantKind::Bottleneck,
                 VariantKind::BottleneckAblated, VariantKind::SelfConsistency}) {
    if (variant_kind_name(k) == norm) return k;
  }
  return std::nullopt;
}

namespace {

bool is_bottleneck(VariantKind k) {
  return k == VariantKind::Bottleneck || k == VariantKind::BottleneckAblated;
}

std::vector<ControlKind> canonical_controls(const std::vector<ControlKind>& in) {
  std::vector<ControlKind> out;
  for (ControlKind k : kAllControls) {
    if (std::find(in.begin(), in.end(), k) != in.end()) out.push_back(k);
  }
  return out;
}

std::string base_id(VariantKind kind, const VariantConfig& cfg) {
  switch (kind) {
    case VariantKind::Base: return "base";
    case VariantKind::CoT: return "cot";
    case VariantKind::Bottleneck:
    case VariantKind::BottleneckAblated: {
      std::string id = "bottleneck";
      const auto present = canonical_controls(cfg.controls);
      if (present.size() != kAllControls.size()) {
        id += "-wo";
        for (ControlKind k : kAllControls) {
          if (std::find(present.begin(), present.end(), k) == present.end()) {
            id += "-";
            id += control_id(k);
          }
        }
      }
      if (cfg.mode == DerivationMode::Independent) id += "-independent";
      return id;
    }
    case VariantKind::SelfConsistency: break;
  }
  return "invalid";
}

}  // namespace

void VariantConfig::validate() const {
  if (kind == VariantKind::SelfConsistency) {
    if (inner == VariantKind::SelfConsistency) throw std::invalid_argument("nested self-consistency");
    const std::size_t k = sc_k.value_or(kDefaultScK);
    if (k == 0) throw std::invalid_argument("self-consistency k must be >= 1");
    if (k > 1 && !(sc_temperature > 0.0))
      throw std::invalid_argument("self-consistency with k > 1 needs temperature > 0");
  }
  const VariantKind effective = kind == VariantKind::SelfConsistency ? inner : kind;
  if (is_bottleneck(effective)) {
    const auto present = canonical_controls(controls);
    if (present.size() != controls.size())
      throw std::invalid_argument("duplicate control in variant");
    if (present.empty()) throw std::invalid_argument("bottleneck variant needs at least one control");
  }
}

std::string VariantConfig::id() const {
  std::string id;
  if (kind == VariantKind::SelfConsistency) {
    id = "sc" + std::to_string(sc_k.value_or(kDefaultScK)) + "-" + base_id(inner, *this);
  } else {
    id = base_id(kind, *this);
  }
  if (shots > 0) id += "-" + std::to_string(shots) + "shot";
  return id;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::ordered_json to_json(const Prediction& p) {
  nlohmann::ordered_json j;
  j["session_id"] = p.session_id;
  j["variant"] = p.variant;
  j["valid"] = p.valid();
  if (p.ranking) {
    nlohmann::ordered_json r = nlohmann::ordered_json::array();
    for (auto l : *p.ranking) r.push_back(label_name(l));
    j["ranking"] = std::move(r);
    j["top1"] = label_name((*p.ranking)[0]);
  } else {
    j["ranking"] = nullptr;
    j["top1"] = nullptr;
  }
  j["explanation"] = p.explanation;
  nlohmann::ordered_json anns = nlohmann::ordered_json::array();
  for (const auto& a : p.annotations) {
    nlohmann::ordered_json ja;
    ja["snippet_index"] = a.snippet_index;
    ja["contestant"] = label_name(a.contestant);
    ja["control"] = control_id(a.control.kind);
    ja["label"] = a.control.label ? nlohmann::ordered_json(control_label_name(*a.control.label))
                                  : nlohmann::ordered_json(nullptr);
    ja["verdict"] = verdict_name(a.control.verdict);
    ja["rationale"] = a.rationale;
    ja["mode"] = mode_name(a.mode);
    ja["parse_failed"] = a.parse_failed;
    anns.push_back(std::move(ja));
  }
  j["annotations"] = std::move(anns);
  nlohmann::ordered_json prov;
  prov["model_id"] = p.provenance.model_id;
  prov["g_model_id"] = p.provenance.g_model_id;
  prov["template_version"] = p.provenance.template_version;
  prov["shots"] = p.provenance.shots;
  prov["digests"] = p.provenance.digests;
  prov["requeries"] = p.provenance.requeries;
  j["provenance"] = std::move(prov);
  j["error"] = p.error;
  return j;
}

Prediction prediction_from_json(const nlohmann::json& j) {
  auto label = [](const nlohmann::json& v) {
    auto l = parse_label(v.get<std::string>());
    if (!l) throw std::invalid_argument("bad label in prediction record");
    return *l;
  };
  Prediction p;
  p.session_id = j.at("session_id").get<std::string>();
  p.variant = j.at("variant").get<std::string>();
  if (!j.at("ranking").is_null()) {
    const auto& r = j.at("ranking");
    if (r.size() != 3) throw std::invalid_argument("ranking must list three contestants");
    p.ranking = Ranking{label(r[0]), label(r[1]), label(r[2])};
  }
  p.explanation = j.value("explanation", "");
  for (const auto& ja : j.value("annotations", nlohmann::json::array())) {
    ControlAnnotation a;
    a.snippet_index = ja.at("snippet_index").get<std::size_t>();
    a.contestant = label(ja.at("contestant"));
    auto kind = parse_control_id(ja.at("control").get<std::string>());
    if (!kind) throw std::invalid_argument("bad control in prediction record");
    a.control.kind = *kind;
    if (!ja.at("label").is_null()) a.control.label = parse_control_label(ja.at("label").get<std::string>());
    a.control.verdict =
        parse_verdict_name(ja.at("verdict").get<std::string>()).value_or(Verdict::Inconclusive);
    a.rationale = ja.value("rationale", "");
    a.mode = parse_mode(ja.value("mode", "sequential")).value_or(DerivationMode::Sequential);
    a.parse_failed = ja.value("parse_failed", false);
    p.annotations.push_back(std::move(a));
  }
  const auto& prov = j.at("provenance");
  p.provenance.model_id = prov.value("model_id", "");
  p.provenance.g_model_id = prov.value("g_model_id", "");
  p.provenance.template_version = prov.value("template_version", "");
  p.provenance.shots = prov.value("shots", std::size_t{0});
  p.provenance.digests = prov.value("digests", std::vector<std::string>{});
  p.provenance.requeries = prov.value("requeries", std::size_t{0});
  p.error = j.value("error", "");
  return p;
}

Prediction permute_prediction(const Prediction& p, const LabelPermutation& perm) {
  Prediction out = p;
  if (out.ranking) {
    for (auto& l : *out.ranking) l = perm(l);
  }
  for (auto& a : out.annotations) a.contestant = perm(a.contestant);
  return out;
}

// ---------------------------------------------------------------------------

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first;
  std::mutex mu;
  {
    std::vector<std::jthread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&] {
        for (std::size_t i = next++; i < n && !failed.load(); i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(mu);
            if (!first) first = std::current_exception();
            failed = true;
          }
        }
      });
    }
  }
  if (first) std::rethrow_exception(first);
}

// ---------------------------------------------------------------------------

Pipeline::Pipeline(Provider& provider, PipelineOptions options, Provider* g_provider)
    : provider_(provider), g_provider_(g_provider ? *g_provider : provider), options_(std::move(options)) {
  if (options_.model_id.empty()) throw std::invalid_argument("pipeline needs a model id");
  if (options_.g_model_id.empty()) options_.g_model_id = options_.model_id;
}

GenerationRequest Pipeline::request_for(const PromptBundle& b, const std::string& model,
                                        const SampleSpec& sample) const {
  GenerationRequest r;
  r.system_prompt = b.system;
  r.user_prompt = b.user;
  r.temperature = sample.temperature.value_or(options_.temperature);
  r.max_tokens = options_.max_tokens;
  r.top_p = options_.top_p;
  r.n_samples = 1;
  r.model_id = model;
  r.sample_tag = sample.index;
  return r;
}

Provenance Pipeline::provenance(const VariantConfig& cfg) const {
  Provenance p;
  p.model_id = options_.model_id;
  if (is_bottleneck(cfg.kind) ||
      (cfg.kind == VariantKind::SelfConsistency && is_bottleneck(cfg.inner))) {
    p.g_model_id = options_.g_model_id;
  }
  p.template_version = std::string(prompt_template_version());
  p.shots = cfg.shots;
  return p;
}

Pipeline::Answer Pipeline::ask(Provider& p, const PromptBundle& bundle, const std::string& model,
                               const SampleSpec& sample, Provenance& prov) {
  Answer out;
  auto res = p.generate(request_for(bundle, model, sample));
  prov.digests.push_back(res.digest);
  try {
    out.parsed = parse_answer(res.completions.at(0));
    return out;
  } catch (const FormatError& first) {
    ++prov.requeries;
    auto retry = p.generate(request_for(with_format_reminder(bundle), model, sample));
    prov.digests.push_back(retry.digest);
    try {
      out.parsed = parse_answer(retry.completions.at(0));
      return out;
    } catch (const FormatError& second) {
      out.error = std::string("invalid output: ") + first.what() + "; after re-query: " + second.what();
      return out;
    }
  }
}

Prediction Pipeline::finish(const Session& session, const VariantConfig& cfg, Answer answer,
                            Provenance prov) const {
  Prediction p;
  p.session_id = session.id;
  p.variant = cfg.id();
  if (answer.parsed) {
    p.ranking = answer.parsed->ranking;
    p.explanation = std::move(answer.parsed->explanation);
  } else {
    p.error = std::move(answer.error);
  }
  p.provenance = std::move(prov);
  return p;
}

static std::vector<Demo> select_demos(const std::vector<Demo>& demos, std::size_t shots) {
  if (shots > demos.size()) {
    throw std::invalid_argument(std::to_string(shots) + "-shot prompt requested but only " +
                                std::to_string(demos.size()) + " demonstrations configured");
  }
  return {demos.begin(), demos.begin() + static_cast<std::ptrdiff_t>(shots)};
}

Prediction Pipeline::run_base(const Session& session, const VariantConfig& cfg,
                              const SampleSpec& sample) {
  Provenance prov = provenance(cfg);
  const auto bundle = build_task_prompt(session, cfg.shots, select_demos(options_.demos, cfg.shots));
  Answer answer = ask(provider_, bundle, options_.model_id, sample, prov);
  return finish(session, cfg, std::move(answer), std::move(prov));
}

Prediction Pipeline::run_cot(const Session& session, const VariantConfig& cfg,
                             const SampleSpec& sample) {
  Provenance prov = provenance(cfg);
  const auto bundle =
      append_cot(build_task_prompt(session, cfg.shots, select_demos(options_.demos, cfg.shots)));
  Answer answer = ask(provider_, bundle, options_.model_id, sample, prov);
  return finish(session, cfg, std::move(answer), std::move(prov));
}

std::vector<ControlAnnotation> Pipeline::extract_controls(const Session& session,
                                                          const std::vector<ControlKind>& controls,
                                                          DerivationMode mode,
                                                          std::vector<std::string>* digests,
                                                          std::size_t* requeries) {
  const auto kinds = canonical_controls(controls);
  if (kinds.empty()) throw std::invalid_argument("extract_controls needs at least one control");
  const auto snippets = segment_snippets(session);
  const std::size_t n = snippets.size();
  const std::size_t c = kinds.size();

  // Slot (i, k) holds snippet i, control k; up to two digests each.
  std::vector<ControlAnnotation> out(n * c);
  std::vector<std::vector<std::string>> slot_digests(n * c);
  std::vector<std::size_t> slot_requeries(n * c, 0);
  BottleneckPromptOptions popts;
  popts.token_budget = options_.token_budget;

  auto one = [&](std::size_t i, std::size_t k) {
    const std::size_t slot = i * c + k;
    const auto bundle = build_bottleneck_prompt(kinds[k], session, snippets, i, mode, popts);
    ControlAnnotation a;
    a.snippet_index = i;
    a.contestant = snippets[i].contestant;
    a.mode = mode;
    a.control.kind = kinds[k];
    auto res = g_provider_.generate(request_for(bundle, options_.g_model_id, {}));
    slot_digests[slot].push_back(res.digest);
    try {
      a.control = parse_control_verdict(res.completions.at(0), kinds[k]);
      a.rationale = parse_control_rationale(res.completions.at(0));
    } catch (const FormatError&) {
      ++slot_requeries[slot];
      auto retry = g_provider_.generate(request_for(with_format_reminder(bundle), options_.g_model_id, {}));
      slot_digests[slot].push_back(retry.digest);
      try {
        a.control = parse_control_verdict(retry.completions.at(0), kinds[k]);
        a.rationale = parse_control_rationale(retry.completions.at(0));
      } catch (const FormatError&) {
        a.control = ControlValue{kinds[k], std::nullopt, Verdict::Inconclusive};
        a.rationale.clear();
        a.parse_failed = true;
      }
    }
    out[slot] = std::move(a);
  };

  const std::size_t workers = options_.parallel ? g_provider_.config().max_concurrent : 1;
  if (mode == DerivationMode::Sequential) {
    // Each control walks the snippets in conversation order.
    parallel_for(c, workers, [&](std::size_t k) {
      for (std::size_t i = 0; i < n; ++i) one(i, k);
    });
  } else {
    parallel_for(n * c, workers, [&](std::size_t slot) { one(slot / c, slot % c); });
  }

  if (digests) {
    for (const auto& d : slot_digests) digests->insert(digests->end(), d.begin(), d.end());
  }
  if (requeries) {
    for (auto r : slot_requeries) *requeries += r;
  }
  return out;
}

Prediction Pipeline::discriminate(const Session& session,
                                  const std::vector<ControlAnnotation>& annotations,
                                  const VariantConfig& cfg, const SampleSpec& sample) {
  if (annotations.empty()) throw std::invalid_argument("discriminate needs annotations");
  const auto snippets = segment_snippets(session);
  std::vector<std::vector<RenderedCue>> cues(snippets.size());
  for (const auto& a : annotations) {
    if (a.snippet_index >= snippets.size()) {
      throw std::invalid_argument("annotation refers to snippet " + std::to_string(a.snippet_index) +
                                  " of " + std::to_string(snippets.size()));
    }
    cues[a.snippet_index].push_back({a.control.kind, a.control, a.rationale});
  }
  for (std::size_t i = 0; i < cues.size(); ++i) {
    if (cues[i].empty()) {
      throw std::invalid_argument("snippet " + std::to_string(i) + " has no annotation");
    }
  }
  Provenance prov = provenance(cfg);
  const auto bundle = build_discriminator_prompt(session, snippets, cues, cfg.shots,
                                                 select_demos(options_.demos, cfg.shots));
  Answer answer = ask(provider_, bundle, options_.model_id, sample, prov);
  Prediction p = finish(session, cfg, std::move(answer), std::move(prov));
  p.annotations = annotations;
  return p;
}

Prediction Pipeline::run_bottleneck(const Session& session, const VariantConfig& cfg,
                                    const SampleSpec& sample) {
  std::vector<std::string> digests;
  std::size_t requeries = 0;
  auto annotations = extract_controls(session, cfg.controls, cfg.mode, &digests, &requeries);
  Prediction p = discriminate(session, annotations, cfg, sample);
  digests.insert(digests.end(), p.provenance.digests.begin(), p.provenance.digests.end());
  p.provenance.digests = std::move(digests);
  p.provenance.requeries += requeries;
  return p;
}

Prediction Pipeline::run(const Session& session, const VariantConfig& cfg) {
  cfg.validate();
  switch (cfg.kind) {
    case VariantKind::Base: return run_base(session, cfg);
    case VariantKind::CoT: return run_cot(session, cfg);
    case VariantKind::Bottleneck:
    case VariantKind::BottleneckAblated: return run_bottleneck(session, cfg);
    case VariantKind::SelfConsistency: break;
  }
  VariantConfig inner = cfg;
  inner.kind = cfg.inner;
  const std::size_t k = cfg.sc_k.value_or(VariantConfig::kDefaultScK);
  auto once = [&](const SampleSpec& s) {
    switch (inner.kind) {
      case VariantKind::Base: return run_base(session, inner, s);
      case VariantKind::CoT: return run_cot(session, inner, s);
      default: return run_bottleneck(session, inner, s);
    }
  };
  return self_consistency(once, k, cfg.sc_temperature, cfg.id());
}

// ---------------------------------------------------------------------------
// Self-consistency

Prediction aggregate_samples(const std::vector<Prediction>& samples, const std::string& variant) {
  if (samples.empty()) throw std::invalid_argument("no samples to aggregate");
  std::array<std::size_t, 3> votes{};
  std::array<std::size_t, 3> borda{};
  std::size_t valid = 0;
  for (const auto& s : samples) {
    if (!s.ranking) continue;
    ++valid;
    ++votes[label_index((*s.ranking)[0])];
    for (std::size_t r = 0; r < 3; ++r) borda[label_index((*s.ranking)[r])] += 2 - r;
  }

  Prediction out;
  out.session_id = samples.front().session_id;
  out.variant = variant;
  out.provenance = samples.front().provenance;
  out.provenance.digests.clear();
  out.provenance.requeries = 0;
  for (const auto& s : samples) {
    out.provenance.digests.insert(out.provenance.digests.end(), s.provenance.digests.begin(),
                                  s.provenance.digests.end());
    out.provenance.requeries += s.provenance.requeries;
  }
  if (valid == 0) {
    out.error = "invalid output: all " + std::to_string(samples.size()) + " samples unreadable";
    out.annotations = samples.front().annotations;
    return out;
  }

  ContestantLabel winner = ContestantLabel::NumberOne;
  for (ContestantLabel l : kAllLabels) {
    if (votes[label_index(l)] > votes[label_index(winner)]) winner = l;
  }
  std::vector<ContestantLabel> rest;
  for (ContestantLabel l : kAllLabels) {
    if (l != winner) rest.push_back(l);
  }
  std::stable_sort(rest.begin(), rest.end(), [&](ContestantLabel a, ContestantLabel b) {
    return borda[label_index(a)] > borda[label_index(b)];
  });
  out.ranking = Ranking{winner, rest[0], rest[1]};
  for (const auto& s : samples) {
    if (s.ranking && (*s.ranking)[0] == winner) {
      out.explanation = s.explanation;
      out.annotations = s.annotations;
      break;
    }
  }
  return out;
}

Prediction self_consistency(const std::function<Prediction(const SampleSpec&)>& run, std::size_t k,
                            double temperature, const std::string& variant) {
  if (k == 0) throw std::invalid_argument("self-consistency k must be >= 1");
  if (k == 1) return run(SampleSpec{});
  if (!(temperature > 0.0)) throw std::invalid_argument("self-consistency needs temperature > 0");
  std::vector<Prediction> samples;
  samples.reserve(k);
  for (std::size_t i = 0; i < k; ++i) samples.push_back(run(SampleSpec{i, temperature}));
  return aggregate_samples(samples, variant);
}

}  // namespace t4t
