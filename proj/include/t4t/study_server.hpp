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

// Human-study service: progressive snippet reveal, per-condition model cues,
// votes, and explanation ratings. State is a fold over an append-only JSONL
// event log, so a restart replays to the same state.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "t4t/corpus.hpp"
#include "t4t/evaluation.hpp"
#include "t4t/pipeline.hpp"

namespace t4t {

enum class Condition : std::uint8_t { Unassisted, BlackBox, GlassBox };

std::string_view condition_name(Condition c);  // "unassisted", "black_box", "glass_box"
std::optional<Condition> parse_condition(std::string_view s);

struct StudyAssignment {
  std::string participant_id;
  std::vector<std::string> session_ids;
  std::vector<Condition> conditions;  // parallel to session_ids
};

/// Round-robin: participant k sees session j under condition (k + j) mod 3.
StudyAssignment make_assignment(const std::string& participant, std::size_t participant_index,
                                const std::vector<std::string>& session_ids);

struct StudyRecord {
  std::string kind;  // "vote", "pair" or "evil"
  std::string participant_id;
  std::string session_id;
  std::optional<Condition> condition;
  std::optional<ContestantLabel> vote;
  std::string item;
  std::optional<Preference> pair_choice;  // A is the first compared system
  std::optional<EvilRating> evil;
  std::int64_t timestamp_ms = 0;

  nlohmann::ordered_json to_json() const;
};

struct StudyData {
  std::vector<Session> sessions;
  /// Predictions shown under BlackBox/GlassBox, by session id.
  std::map<std::string, Prediction> cue_predictions;
  /// The two systems compared in pairwise and e-ViL rating (A is rated for e-ViL).
  std::map<std::string, Prediction> system_a;
  std::map<std::string, Prediction> system_b;
};

struct StudyOptions {
  std::filesystem::path log_path;
  std::uint64_t seed = 0;  // left/right placement of pairwise items
  std::function<std::int64_t()> now_ms;  // defaults to the system clock
};

struct ServiceResponse {
  int status = 200;
  nlohmann::ordered_json body;
};

class StudyService {
 public:
  /// Replays `options.log_path` if it exists. Throws std::invalid_argument on
  /// inconsistent data (e.g. a session without a cue prediction).
  StudyService(StudyData data, StudyOptions options);
  ~StudyService();
  StudyService(const StudyService&) = delete;
  StudyService& operator=(const StudyService&) = delete;

  ServiceResponse register_participant(const std::string& participant);
  ServiceResponse next(const std::string& participant);
  ServiceResponse reveal(const nlohmann::json& body);
  ServiceResponse cues(const std::string& participant, const std::string& session);
  ServiceResponse vote(const nlohmann::json& body);
  ServiceResponse next_pair(const std::string& rater);
  ServiceResponse rate_pair(const nlohmann::json& body);
  ServiceResponse next_evil(const std::string& rater);
  ServiceResponse rate_evil(const nlohmann::json& body);

  std::vector<StudyRecord> records() const;
  /// One StudyRecord per line.
  std::string export_records() const;

  std::size_t pair_item_count() const { return pair_items_.size(); }
  std::size_t evil_item_count() const { return evil_items_.size(); }
  /// True when pairwise item `item` shows system A on the right.
  bool pair_swapped(const std::string& item) const;

 private:
  struct SessionView {
    const Session* session;
    std::vector<Snippet> snippets;
  };
  struct Progress {
    std::size_t index = 0;  // participant registration order
    StudyAssignment assignment;
    std::map<std::string, std::size_t> revealed;  // session -> highest served snippet
    std::set<std::string> voted;
    std::set<std::string> pairs_rated;
    std::set<std::string> evil_rated;
  };

  void append(nlohmann::ordered_json event);
  void apply(const nlohmann::json& event);
  std::int64_t now() const;
  const Progress* find(const std::string& participant) const;
  std::optional<Condition> condition_for(const Progress& p, const std::string& session) const;
  nlohmann::ordered_json snippet_json(const Snippet& s, std::size_t index) const;

  StudyData data_;
  StudyOptions options_;
  std::vector<std::string> order_;
  std::map<std::string, SessionView> views_;
  std::vector<std::string> pair_items_;  // session ids where A and B are both correct
  std::vector<std::string> evil_items_;  // session ids where A is correct

  mutable std::shared_mutex mu_;
  std::map<std::string, Progress> participants_;
  std::vector<StudyRecord> records_;
  std::uint64_t seq_ = 0;
  int log_fd_ = -1;
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<std::filesystem::path> static_dir;
  /// Environment variable holding the admin bearer token.
  std::string admin_token_env = "T4T_ADMIN_TOKEN";
};

/// HTTP binding of a StudyService.
class StudyServer {
 public:
  StudyServer(StudyService& service, ServerOptions options);
  ~StudyServer();

  /// Binds and serves until stop(); returns false when binding fails.
  bool listen();
  /// Binds to an ephemeral port; returns it, or -1 on failure.
  int bind_any();
  void listen_after_bind();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace t4t
