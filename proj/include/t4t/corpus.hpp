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
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace t4t {

/// One of the three contestant slots. Declaration order is the tie-break order.
enum class ContestantLabel : std::uint8_t { NumberOne = 0, NumberTwo = 1, NumberThree = 2 };

inline constexpr std::array<ContestantLabel, 3> kAllLabels = {
    ContestantLabel::NumberOne, ContestantLabel::NumberTwo, ContestantLabel::NumberThree};

inline constexpr std::size_t label_index(ContestantLabel l) { return static_cast<std::size_t>(l); }

/// "Number One", "Number Two", "Number Three".
std::string_view label_name(ContestantLabel l);
/// Case-insensitive inverse of label_name; surrounding whitespace ignored.
std::optional<ContestantLabel> parse_label(std::string_view s);

enum class Speaker : std::uint8_t { Judge, Contestant };

struct Utterance {
  std::size_t index = 0;
  Speaker speaker = Speaker::Judge;
  std::optional<ContestantLabel> addressed;  // explicit addressing, judge questions only
  std::string text;

  bool operator==(const Utterance&) const = default;
};

struct Session {
  std::string id;
  std::string cc_name;
  std::string affidavit;
  std::vector<Utterance> utterances;
  ContestantLabel ground_truth = ContestantLabel::NumberOne;
  std::vector<ContestantLabel> judge_votes;
  std::vector<std::string> judge_ids;

  bool operator==(const Session&) const = default;
};

struct QaPair {
  Utterance question;
  std::vector<Utterance> answers;

  bool operator==(const QaPair&) const = default;
};

/// Maximal run of Q/A pairs addressed to one contestant.
struct Snippet {
  std::string session_id;
  ContestantLabel contestant = ContestantLabel::NumberOne;
  std::vector<QaPair> qa_pairs;
  std::pair<std::size_t, std::size_t> span{0, 0};  // inclusive utterance indices

  bool operator==(const Snippet&) const = default;
};

struct CorpusStats {
  std::size_t n_sessions = 0;
  std::size_t n_words = 0;
  std::size_t n_utterances = 0;
  std::size_t n_unique_contestant_slots = 0;
  std::size_t n_unique_judges = 0;

  bool operator==(const CorpusStats&) const = default;
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for a contestant utterance that precedes every addressed question.
class OrphanAnswerError : public CorpusError {
 public:
  using CorpusError::CorpusError;
};

/// Bijection on the three labels; `map[i]` is the image of label i.
class LabelPermutation {
 public:
  LabelPermutation() = default;
  /// Throws std::invalid_argument unless `image` is a bijection.
  explicit LabelPermutation(std::array<ContestantLabel, 3> image);

  static LabelPermutation identity() { return {}; }
  /// All six permutations in lexicographic order of their images.
  static std::array<LabelPermutation, 6> all();

  ContestantLabel operator()(ContestantLabel l) const { return image_[label_index(l)]; }
  LabelPermutation inverse() const;
  const std::array<ContestantLabel, 3>& image() const { return image_; }

  bool operator==(const LabelPermutation&) const = default;

 private:
  std::array<ContestantLabel, 3> image_ = kAllLabels;
};

struct ParseOptions {
  /// Reject sessions whose answers precede the first addressed question.
  bool strict = true;
};

/// Parses one line-delimited JSON record. `line_no` is used in error messages.
Session parse_session(std::string_view line, std::size_t line_no = 1,
                      const ParseOptions& opts = {});
/// Serializes with fields in schema order; parse_session inverts it exactly.
std::string serialize_session(const Session& s);

std::vector<Session> parse_corpus(const std::filesystem::path& path,
                                  const ParseOptions& opts = {});
void write_corpus(const std::filesystem::path& path, const std::vector<Session>& sessions);

/// Addressee of a judge utterance: the explicit field if present, otherwise a
/// case-insensitive "number one|two|three" in the first clause of the text.
std::optional<ContestantLabel> effective_addressee(const Utterance& u);
std::optional<ContestantLabel> detect_addressee(std::string_view text);

/// Checks the structural Session invariants; throws CorpusError.
void validate_session(const Session& s, const ParseOptions& opts = {});

std::vector<Snippet> segment_snippets(const Session& session);

/// Rewrites every label occurrence (fields and "Number one/two/three" text
/// mentions) through `perm`, and replaces cc_name plus any `names` with
/// "Participant_X" placeholders whose X is drawn from `seed`.
Session anonymize(const Session& session, const LabelPermutation& perm, std::uint64_t seed,
                  const std::vector<std::string>& names = {});

/// Rewrites only the label mentions inside free text.
std::string permute_label_mentions(std::string_view text, const LabelPermutation& perm);

/// Unicode-whitespace token count.
std::size_t count_words(std::string_view text);

CorpusStats corpus_stats(const std::vector<Session>& corpus);

}  // namespace t4t
