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

#include "t4t/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <random>
#include <regex>
#include <set>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "t4t/text.hpp"

namespace t4t {

using ojson = nlohmann::ordered_json;

std::string_view label_name(ContestantLabel l) {
  switch (l) {
    case ContestantLabel::NumberOne: return "Number One";
    case ContestantLabel::NumberTwo: return "Number Two";
    case ContestantLabel::NumberThree: return "Number Three";
  }
  return "Number One";
}

std::optional<ContestantLabel> parse_label(std::string_view s) {
  const std::string norm = text::to_lower(text::trim(s));
  for (ContestantLabel l : kAllLabels) {
    if (norm == text::to_lower(label_name(l))) return l;
  }
  return std::nullopt;
}

LabelPermutation::LabelPermutation(std::array<ContestantLabel, 3> image) : image_(image) {
  std::array<bool, 3> seen{};
  for (ContestantLabel l : image) {
    if (seen[label_index(l)]) throw std::invalid_argument("label permutation is not a bijection");
    seen[label_index(l)] = true;
  }
}

std::array<LabelPermutation, 6> LabelPermutation::all() {
  std::array<ContestantLabel, 3> img = kAllLabels;
  std::array<LabelPermutation, 6> out;
  std::size_t i = 0;
  do {
    out[i++] = LabelPermutation(img);
  } while (std::next_permutation(img.begin(), img.end()));
  return out;
}

LabelPermutation LabelPermutation::inverse() const {
  std::array<ContestantLabel, 3> inv{};
  for (ContestantLabel l : kAllLabels) inv[label_index(image_[label_index(l)])] = l;
  return LabelPermutation(inv);
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

std::string_view speaker_name(Speaker s) { return s == Speaker::Judge ? "Judge" : "Contestant"; }

[[noreturn]] void fail_field(std::size_t line_no, std::string_view field, std::string_view what) {
  std::ostringstream os;
  os << "line " << line_no << ": field '" << field << "': " << what;
  throw CorpusError(os.str());
}

ContestantLabel label_field(const nlohmann::json& j, std::size_t line_no, std::string_view field) {
  if (!j.is_string()) fail_field(line_no, field, "expected a label string");
  auto l = parse_label(j.get<std::string>());
  if (!l) fail_field(line_no, field, "unknown contestant label \"" + j.get<std::string>() + "\"");
  return *l;
}

// `field` names the value in errors; its last dotted component is the key.
std::string string_field(const nlohmann::json& obj, std::size_t line_no, std::string_view field) {
  const auto dot = field.rfind('.');
  auto it = obj.find(std::string(dot == std::string_view::npos ? field : field.substr(dot + 1)));
  if (it == obj.end()) fail_field(line_no, field, "missing");
  if (!it->is_string()) fail_field(line_no, field, "expected a string");
  return it->get<std::string>();
}

}  // namespace

Session parse_session(std::string_view line, std::size_t line_no, const ParseOptions& opts) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    std::ostringstream os;
    os << "line " << line_no << ": malformed record: " << e.what();
    throw CorpusError(os.str());
  }
  if (!j.is_object()) fail_field(line_no, "<record>", "expected an object");

  Session s;
  s.id = string_field(j, line_no, "id");
  s.cc_name = string_field(j, line_no, "cc_name");
  s.affidavit = string_field(j, line_no, "affidavit");

  auto utt = j.find("utterances");
  if (utt == j.end() || !utt->is_array()) fail_field(line_no, "utterances", "expected an array");
  for (std::size_t i = 0; i < utt->size(); ++i) {
    const auto& u = (*utt)[i];
    const std::string field = "utterances[" + std::to_string(i) + "]";
    if (!u.is_object()) fail_field(line_no, field, "expected an object");
    Utterance out;
    out.index = i;
    const std::string spk = string_field(u, line_no, field + ".speaker");
    if (text::iequals(spk, "judge")) {
      out.speaker = Speaker::Judge;
    } else if (text::iequals(spk, "contestant")) {
      out.speaker = Speaker::Contestant;
    } else {
      fail_field(line_no, field + ".speaker", "unknown speaker \"" + spk + "\"");
    }
    if (auto a = u.find("addressed"); a != u.end() && !a->is_null()) {
      out.addressed = label_field(*a, line_no, field + ".addressed");
    }
    out.text = string_field(u, line_no, field + ".text");
    s.utterances.push_back(std::move(out));
  }

  auto gt = j.find("ground_truth");
  if (gt == j.end()) fail_field(line_no, "ground_truth", "missing");
  s.ground_truth = label_field(*gt, line_no, "ground_truth");

  if (auto v = j.find("judge_votes"); v != j.end() && !v->is_null()) {
    if (!v->is_array()) fail_field(line_no, "judge_votes", "expected an array");
    for (const auto& e : *v) s.judge_votes.push_back(label_field(e, line_no, "judge_votes"));
  }
  if (auto v = j.find("judge_ids"); v != j.end() && !v->is_null()) {
    if (!v->is_array()) fail_field(line_no, "judge_ids", "expected an array");
    for (const auto& e : *v) {
      if (!e.is_string()) fail_field(line_no, "judge_ids", "expected strings");
      s.judge_ids.push_back(e.get<std::string>());
    }
  }

  try {
    validate_session(s, opts);
  } catch (const OrphanAnswerError& e) {
    throw OrphanAnswerError("line " + std::to_string(line_no) + ": " + e.what());
  } catch (const CorpusError& e) {
    std::ostringstream os;
    os << "line " << line_no << ": " << e.what();
    throw CorpusError(os.str());
  }
  return s;
}

std::string serialize_session(const Session& s) {
  ojson j;
  j["id"] = s.id;
  j["cc_name"] = s.cc_name;
  j["affidavit"] = s.affidavit;
  ojson utts = ojson::array();
  for (const auto& u : s.utterances) {
    ojson ju;
    ju["speaker"] = speaker_name(u.speaker);
    if (u.addressed) ju["addressed"] = label_name(*u.addressed);
    ju["text"] = u.text;
    utts.push_back(std::move(ju));
  }
  j["utterances"] = std::move(utts);
  j["ground_truth"] = label_name(s.ground_truth);
  ojson votes = ojson::array();
  for (auto v : s.judge_votes) votes.push_back(label_name(v));
  j["judge_votes"] = std::move(votes);
  j["judge_ids"] = s.judge_ids;
  return j.dump();
}

std::vector<Session> parse_corpus(const std::filesystem::path& path, const ParseOptions& opts) {
  std::ifstream in(path);
  if (!in) throw CorpusError("cannot open corpus file " + path.string());
  std::vector<Session> out;
  std::unordered_set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    Session s = parse_session(line, line_no, opts);
    if (!ids.insert(s.id).second) {
      throw CorpusError("line " + std::to_string(line_no) + ": duplicate session id \"" + s.id +
                        "\"");
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_corpus(const std::filesystem::path& path, const std::vector<Session>& sessions) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CorpusError("cannot write corpus file " + path.string());
  for (const auto& s : sessions) out << serialize_session(s) << '\n';
}

// ---------------------------------------------------------------------------
// Addressing and segmentation

std::optional<ContestantLabel> detect_addressee(std::string_view text) {
  // First clause ends at sentence punctuation; vocative commas stay inside it.
  const auto end = text.find_first_of(".?!;");
  const std::string clause(text.substr(0, end));
  static const std::regex re(R"(\bnumber\s+(one|two|three)\b)", std::regex::icase);
  std::smatch m;
  if (!std::regex_search(clause, m, re)) return std::nullopt;
  const std::string word = text::to_lower(m[1].str());
  if (word == "one") return ContestantLabel::NumberOne;
  if (word == "two") return ContestantLabel::NumberTwo;
  return ContestantLabel::NumberThree;
}

std::optional<ContestantLabel> effective_addressee(const Utterance& u) {
  if (u.speaker != Speaker::Judge) return std::nullopt;
  if (u.addressed) return u.addressed;
  return detect_addressee(u.text);
}

void validate_session(const Session& s, const ParseOptions& opts) {
  if (s.id.empty()) throw CorpusError("field 'id': empty");
  if (s.affidavit.empty() || text::trim(s.affidavit).empty())
    throw CorpusError("field 'affidavit': empty");
  if (s.utterances.empty()) throw CorpusError("field 'utterances': empty");
  if (s.judge_votes.size() > 4) throw CorpusError("field 'judge_votes': more than 4 votes");
  if (!s.judge_ids.empty() && s.judge_ids.size() != s.judge_votes.size())
    throw CorpusError("field 'judge_ids': length differs from judge_votes");

  bool addressed_seen = false;
  for (std::size_t i = 0; i < s.utterances.size(); ++i) {
    const Utterance& u = s.utterances[i];
    const std::string field = "utterances[" + std::to_string(i) + "]";
    if (u.index != i) throw CorpusError("field '" + field + ".index': not contiguous");
    if (text::trim(u.text).empty()) throw CorpusError("field '" + field + ".text': empty");
    if (u.speaker == Speaker::Contestant && u.addressed)
      throw CorpusError("field '" + field + ".addressed': contestant utterances cannot address");
    if (effective_addressee(u)) addressed_seen = true;
    if (opts.strict && u.speaker == Speaker::Contestant && !addressed_seen)
      throw OrphanAnswerError("orphan answer at " + field);
  }
}

std::vector<Snippet> segment_snippets(const Session& session) {
  std::vector<Snippet> out;
  for (const Utterance& u : session.utterances) {
    if (u.speaker == Speaker::Judge) {
      const auto who = effective_addressee(u);
      if (who && (out.empty() || out.back().contestant != *who)) {
        Snippet sn;
        sn.session_id = session.id;
        sn.contestant = *who;
        sn.span = {u.index, u.index};
        out.push_back(std::move(sn));
      } else if (out.empty()) {
        continue;  // preamble before the first addressed question
      }
      out.back().qa_pairs.push_back(QaPair{u, {}});
    } else {
      if (out.empty()) {
        throw OrphanAnswerError("orphan answer: utterance " + std::to_string(u.index) +
                                " precedes every addressed question");
      }
      out.back().qa_pairs.back().answers.push_back(u);
    }
    out.back().span.second = u.index;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Anonymization

std::string permute_label_mentions(std::string_view text, const LabelPermutation& perm) {
  static const std::regex re(R"(\b(number)(\s+)(one|two|three)\b)", std::regex::icase);
  static constexpr std::array<std::string_view, 3> words = {"one", "two", "three"};
  std::string out;
  const std::string src(text);
  auto begin = std::sregex_iterator(src.begin(), src.end(), re);
  std::size_t last = 0;
  for (auto it = begin; it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    out.append(src, last, static_cast<std::size_t>(m.position(0)) - last);
    const std::string word = m[3].str();
    const std::string lower = text::to_lower(word);
    std::size_t idx = 0;
    while (words[idx] != lower) ++idx;
    std::string mapped(words[label_index(perm(static_cast<ContestantLabel>(idx)))]);
    if (std::all_of(word.begin(), word.end(), [](unsigned char c) { return std::isupper(c); })) {
      std::transform(mapped.begin(), mapped.end(), mapped.begin(),
                     [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    } else if (std::isupper(static_cast<unsigned char>(word[0]))) {
      mapped[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(mapped[0])));
    }
    out += m[1].str();
    out += m[2].str();
    out += mapped;
    last = static_cast<std::size_t>(m.position(0) + m.length(0));
  }
  out.append(src, last, std::string::npos);
  return out;
}

Session anonymize(const Session& session, const LabelPermutation& perm, std::uint64_t seed,
                  const std::vector<std::string>& names) {
  // Distinct placeholder numbers per name, deterministic in the seed.
  std::vector<std::string> targets;
  targets.push_back(session.cc_name);
  for (const auto& n : names) {
    if (!n.empty() && std::find(targets.begin(), targets.end(), n) == targets.end())
      targets.push_back(n);
  }
  std::mt19937_64 rng(seed);
  std::set<std::uint64_t> used;
  std::vector<std::pair<std::string, std::string>> replacements;
  for (const auto& name : targets) {
    std::uint64_t x = 0;
    do {
      x = 1 + rng() % 9999;
    } while (!used.insert(x).second);
    replacements.emplace_back(name, "Participant_" + std::to_string(x));
  }
  // Longest names first so that "Jane Doe" wins over "Jane".
  std::vector<std::pair<std::string, std::string>> by_length;
  for (const auto& r : replacements) {
    if (!r.first.empty()) by_length.push_back(r);
  }
  std::stable_sort(by_length.begin(), by_length.end(),
                   [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });

  auto rewrite = [&](const std::string& s) {
    return permute_label_mentions(text::replace_all_many(s, by_length), perm);
  };

  Session out = session;
  out.cc_name = replacements.front().second;
  out.affidavit = rewrite(session.affidavit);
  for (auto& u : out.utterances) {
    u.text = rewrite(u.text);
    if (u.addressed) u.addressed = perm(*u.addressed);
  }
  out.ground_truth = perm(session.ground_truth);
  for (auto& v : out.judge_votes) v = perm(v);
  return out;
}

// ---------------------------------------------------------------------------
// Statistics

std::size_t count_words(std::string_view s) {
  std::size_t count = 0;
  bool in_word = false;
  std::size_t i = 0;
  while (i < s.size()) {
    std::size_t len = 1;
    const bool ws = text::is_unicode_space_at(s, i, len);
    if (ws) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++count;
    }
    i += len;
  }
  return count;
}

CorpusStats corpus_stats(const std::vector<Session>& corpus) {
  CorpusStats st;
  std::unordered_set<std::string> judges;
  for (const auto& s : corpus) {
    ++st.n_sessions;
    st.n_words += count_words(s.affidavit);
    for (const auto& u : s.utterances) st.n_words += count_words(u.text);
    st.n_utterances += s.utterances.size();
    st.n_unique_contestant_slots += kAllLabels.size();
    for (const auto& j : s.judge_ids) judges.insert(j);
  }
  st.n_unique_judges = judges.size();
  return st;
}

}  // namespace t4t
