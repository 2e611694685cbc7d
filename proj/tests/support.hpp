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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "t4t/corpus.hpp"

namespace t4t::testing {

inline std::filesystem::path fixture(const std::string& name) {
  return std::filesystem::path(T4T_FIXTURE_DIR) / name;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class TempDir {
 public:
  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "t4t-test-XXXXXX").string();
    if (!::mkdtemp(tmpl.data())) throw std::runtime_error("mkdtemp failed");
    path_ = tmpl;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Builds a session from (speaker, text) turns; "J" marks the judge.
inline Session make_session(const std::string& id,
                            const std::vector<std::pair<std::string, std::string>>& turns,
                            ContestantLabel truth = ContestantLabel::NumberOne,
                            std::vector<ContestantLabel> votes = {}) {
  Session s;
  s.id = id;
  s.cc_name = "Ada Park";
  s.affidavit = "I, Ada Park, restore antique clocks in Maine.";
  for (std::size_t i = 0; i < turns.size(); ++i) {
    Utterance u;
    u.index = i;
    u.speaker = turns[i].first == "J" ? Speaker::Judge : Speaker::Contestant;
    u.text = turns[i].second;
    s.utterances.push_back(std::move(u));
  }
  s.ground_truth = truth;
  s.judge_votes = std::move(votes);
  for (std::size_t i = 0; i < s.judge_votes.size(); ++i) s.judge_ids.push_back("j" + std::to_string(i));
  return s;
}

inline std::vector<Session> fixture_sessions(const std::string& name = "sessions3.jsonl") {
  return parse_corpus(fixture(name));
}

/// Random well-formed session: every contestant is questioned at least once,
/// follow-ups without a label stay with the last addressee.
inline Session random_session(std::mt19937_64& rng, const std::string& id) {
  static const char* kWords[] = {"harbor", "ledger", "violin", "orchard", "quarry", "lantern",
                                 "copper", "meadow", "engine", "saddle", "glacier", "pepper"};
  static const char* kNames[] = {"Number One", "Number Two", "Number Three"};
  auto phrase = [&](std::size_t n) {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) {
      if (i) out += ' ';
      out += kWords[rng() % 12];
    }
    return out;
  };
  std::vector<std::pair<std::string, std::string>> turns;
  const std::size_t rounds = 3 + rng() % 5;
  for (std::size_t r = 0; r < rounds; ++r) {
    const std::size_t who = r < 3 ? r : rng() % 3;
    turns.push_back({"J", std::string(kNames[who]) + ", " + phrase(3 + rng() % 4) + "?"});
    turns.push_back({"C", phrase(4 + rng() % 8) + "."});
    if (rng() % 3 == 0) {
      turns.push_back({"J", "And the " + phrase(2) + "?"});
      turns.push_back({"C", phrase(3 + rng() % 5) + "."});
    }
  }
  const auto truth = static_cast<ContestantLabel>(rng() % 3);
  std::vector<ContestantLabel> votes;
  for (int i = 0; i < 4; ++i) votes.push_back(static_cast<ContestantLabel>(rng() % 3));
  return make_session(id, turns, truth, votes);
}

}  // namespace t4t::testing
