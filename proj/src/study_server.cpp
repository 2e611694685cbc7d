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

#include "t4t/study_server.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <random>
#include <sstream>
#include <stdexcept>

#include "httplib.h"
#include "t4t/text.hpp"

namespace t4t {

namespace {

ServiceResponse error(int status, const std::string& reason) {
  ServiceResponse r;
  r.status = status;
  r.body["error"] = reason;
  return r;
}

std::uint64_t item_hash(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::optional<std::string> string_field(const nlohmann::json& body, const char* key) {
  if (!body.is_object() || !body.contains(key) || !body.at(key).is_string()) return std::nullopt;
  return body.at(key).get<std::string>();
}

constexpr std::string_view kPairPrefix = "pair:";
constexpr std::string_view kEvilPrefix = "evil:";

}  // namespace

std::string_view condition_name(Condition c) {
  switch (c) {
    case Condition::Unassisted: return "unassisted";
    case Condition::BlackBox: return "black_box";
    case Condition::GlassBox: return "glass_box";
  }
  return "unassisted";
}

std::optional<Condition> parse_condition(std::string_view s) {
  for (auto c : {Condition::Unassisted, Condition::BlackBox, Condition::GlassBox})
    if (condition_name(c) == s) return c;
  return std::nullopt;
}

StudyAssignment make_assignment(const std::string& participant, std::size_t participant_index,
                                const std::vector<std::string>& session_ids) {
  StudyAssignment a;
  a.participant_id = participant;
  a.session_ids = session_ids;
  for (std::size_t j = 0; j < session_ids.size(); ++j)
    a.conditions.push_back(static_cast<Condition>((participant_index + j) % 3));
  return a;
}

nlohmann::ordered_json StudyRecord::to_json() const {
  nlohmann::ordered_json j;
  j["kind"] = kind;
  j["participant_id"] = participant_id;
  j["session_id"] = session_id;
  if (condition) j["condition"] = condition_name(*condition);
  if (vote) j["vote"] = label_name(*vote);
  if (!item.empty()) j["item"] = item;
  if (pair_choice) j["choice"] = *pair_choice == Preference::A ? "A" : "B";
  if (evil) j["rating"] = evil_rating_name(*evil);
  j["timestamp_ms"] = timestamp_ms;
  return j;
}

// ---------------------------------------------------------------------------

StudyService::StudyService(StudyData data, StudyOptions options)
    : data_(std::move(data)), options_(std::move(options)) {
  for (const auto& s : data_.sessions) {
    if (views_.count(s.id)) throw std::invalid_argument("duplicate study session '" + s.id + "'");
    if (!data_.cue_predictions.count(s.id))
      throw std::invalid_argument("study session '" + s.id + "' has no cue prediction");
    views_[s.id] = SessionView{&s, segment_snippets(s)};
    if (views_[s.id].snippets.empty())
      throw std::invalid_argument("study session '" + s.id + "' has no snippets");
    order_.push_back(s.id);

    auto a = data_.system_a.find(s.id);
    auto b = data_.system_b.find(s.id);
    const bool a_ok = a != data_.system_a.end() && a->second.top1() == s.ground_truth;
    const bool b_ok = b != data_.system_b.end() && b->second.top1() == s.ground_truth;
    if (a_ok && b_ok) pair_items_.push_back(s.id);
    if (a_ok) evil_items_.push_back(s.id);
  }

  if (options_.log_path.empty()) throw std::invalid_argument("study log path is empty");
  if (options_.log_path.has_parent_path()) std::filesystem::create_directories(options_.log_path.parent_path());
  if (std::filesystem::exists(options_.log_path)) {
    std::string content;
    {
      std::ifstream in(options_.log_path, std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      content = ss.str();
    }
    // A torn final line means the append was never acknowledged.
    const auto keep = content.rfind('\n');
    content.resize(keep == std::string::npos ? 0 : keep + 1);
    std::filesystem::resize_file(options_.log_path, content.size());
    for (const auto& line : text::split_lines(content)) {
      if (text::trim(line).empty()) continue;
      apply(nlohmann::json::parse(line));
    }
  }
  log_fd_ = ::open(options_.log_path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
  if (log_fd_ < 0) throw std::runtime_error("cannot open study log " + options_.log_path.string());
  if (seq_ == 0) {
    nlohmann::ordered_json init;
    init["type"] = "init";
    init["seed"] = options_.seed;
    append(std::move(init));
  }
}

StudyService::~StudyService() {
  if (log_fd_ >= 0) ::close(log_fd_);
}

std::int64_t StudyService::now() const {
  if (options_.now_ms) return options_.now_ms();
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

void StudyService::append(nlohmann::ordered_json event) {
  nlohmann::ordered_json e;
  e["seq"] = seq_ + 1;
  e["ts"] = now();
  for (auto& [k, v] : event.items()) e[k] = v;
  const std::string line = e.dump() + "\n";
  const char* p = line.data();
  std::size_t left = line.size();
  while (left > 0) {
    ssize_t n = ::write(log_fd_, p, left);
    if (n < 0) throw std::runtime_error("study log append failed");
    p += n;
    left -= static_cast<std::size_t>(n);
  }
  if (::fsync(log_fd_) != 0) throw std::runtime_error("study log fsync failed");
  apply(nlohmann::json::parse(line));
}

void StudyService::apply(const nlohmann::json& e) {
  seq_ = e.at("seq").get<std::uint64_t>();
  const std::string type = e.at("type").get<std::string>();
  const std::int64_t ts = e.at("ts").get<std::int64_t>();
  if (type == "init") {
    if (e.at("seed").get<std::uint64_t>() != options_.seed)
      throw std::invalid_argument("study log was written with seed " +
                                  std::to_string(e.at("seed").get<std::uint64_t>()));
    return;
  }
  const std::string who = e.at("participant").get<std::string>();
  if (type == "register") {
    Progress p;
    p.index = participants_.size();
    p.assignment = make_assignment(who, p.index, order_);
    participants_.emplace(who, std::move(p));
    return;
  }
  Progress& p = participants_.at(who);
  if (type == "serve") {
    p.revealed[e.at("session").get<std::string>()] = e.at("upto").get<std::size_t>();
  } else if (type == "vote") {
    const std::string session = e.at("session").get<std::string>();
    p.voted.insert(session);
    StudyRecord r;
    r.kind = "vote";
    r.participant_id = who;
    r.session_id = session;
    r.condition = condition_for(p, session);
    r.vote = parse_label(e.at("vote").get<std::string>());
    r.timestamp_ms = ts;
    records_.push_back(std::move(r));
  } else if (type == "pair") {
    const std::string item = e.at("item").get<std::string>();
    p.pairs_rated.insert(item);
    StudyRecord r;
    r.kind = "pair";
    r.participant_id = who;
    r.item = item;
    r.session_id = item.substr(kPairPrefix.size());
    r.pair_choice = e.at("choice").get<std::string>() == "A" ? Preference::A : Preference::B;
    r.timestamp_ms = ts;
    records_.push_back(std::move(r));
  } else if (type == "evil") {
    const std::string item = e.at("item").get<std::string>();
    p.evil_rated.insert(item);
    StudyRecord r;
    r.kind = "evil";
    r.participant_id = who;
    r.item = item;
    r.session_id = item.substr(kEvilPrefix.size());
    r.evil = parse_evil_rating(e.at("rating").get<std::string>());
    r.timestamp_ms = ts;
    records_.push_back(std::move(r));
  } else {
    throw std::invalid_argument("unknown study event '" + type + "'");
  }
}

const StudyService::Progress* StudyService::find(const std::string& participant) const {
  auto it = participants_.find(participant);
  return it == participants_.end() ? nullptr : &it->second;
}

std::optional<Condition> StudyService::condition_for(const Progress& p,
                                                     const std::string& session) const {
  const auto& ids = p.assignment.session_ids;
  for (std::size_t j = 0; j < ids.size(); ++j)
    if (ids[j] == session) return p.assignment.conditions[j];
  return std::nullopt;
}

nlohmann::ordered_json StudyService::snippet_json(const Snippet& s, std::size_t index) const {
  nlohmann::ordered_json j;
  j["index"] = index;
  j["addressed_to"] = label_name(s.contestant);
  auto lines = nlohmann::ordered_json::array();
  for (const auto& qa : s.qa_pairs) {
    lines.push_back({{"speaker", "Judge"}, {"text", qa.question.text}});
    for (const auto& a : qa.answers) lines.push_back({{"speaker", "Contestant"}, {"text", a.text}});
  }
  j["lines"] = std::move(lines);
  return j;
}

ServiceResponse StudyService::register_participant(const std::string& participant) {
  if (text::trim(participant).empty()) return error(400, "participant id is empty");
  std::unique_lock lock(mu_);
  if (!find(participant)) {
    nlohmann::ordered_json e;
    e["type"] = "register";
    e["participant"] = participant;
    append(std::move(e));
  }
  const Progress& p = *find(participant);
  ServiceResponse r;
  r.body["participant"] = participant;
  r.body["index"] = p.index;
  auto sessions = nlohmann::ordered_json::array();
  for (std::size_t j = 0; j < p.assignment.session_ids.size(); ++j)
    sessions.push_back({{"session", p.assignment.session_ids[j]},
                        {"condition", condition_name(p.assignment.conditions[j])}});
  r.body["sessions"] = std::move(sessions);
  return r;
}

ServiceResponse StudyService::next(const std::string& participant) {
  std::unique_lock lock(mu_);
  const Progress* p = find(participant);
  if (!p) return error(401, "unknown participant");
  const auto& ids = p->assignment.session_ids;
  std::size_t j = 0;
  while (j < ids.size() && p->voted.count(ids[j])) ++j;
  ServiceResponse r;
  if (j == ids.size()) {
    r.body["done"] = true;
    return r;
  }
  const std::string& session = ids[j];
  if (!p->revealed.count(session)) {
    nlohmann::ordered_json e;
    e["type"] = "serve";
    e["participant"] = participant;
    e["session"] = session;
    e["upto"] = 0;
    append(std::move(e));
  }
  const SessionView& v = views_.at(session);
  const std::size_t upto = p->revealed.at(session);
  r.body["done"] = false;
  r.body["session"] = session;
  r.body["position"] = j;
  r.body["total"] = ids.size();
  r.body["condition"] = condition_name(p->assignment.conditions[j]);
  r.body["name"] = v.session->cc_name;
  r.body["affidavit"] = v.session->affidavit;
  r.body["snippet_count"] = v.snippets.size();
  r.body["revealed"] = upto;
  auto snippets = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i <= upto; ++i) snippets.push_back(snippet_json(v.snippets[i], i));
  r.body["snippets"] = std::move(snippets);
  return r;
}

ServiceResponse StudyService::reveal(const nlohmann::json& body) {
  auto participant = string_field(body, "participant");
  auto session = string_field(body, "session");
  if (!participant || !session || !body.contains("upto") || !body.at("upto").is_number_integer() ||
      body.at("upto").get<std::int64_t>() < 0)
    return error(400, "expected {participant, session, upto}");
  const std::size_t upto = body.at("upto").get<std::size_t>();
  std::unique_lock lock(mu_);
  const Progress* p = find(*participant);
  if (!p) return error(401, "unknown participant");
  auto served = p->revealed.find(*session);
  if (served == p->revealed.end()) return error(409, "session not served");
  if (p->voted.count(*session)) return error(409, "already voted");
  const SessionView& v = views_.at(*session);
  if (upto >= v.snippets.size()) return error(400, "upto beyond last snippet");
  if (upto < served->second) return error(409, "reveal may only increase");
  if (upto > served->second + 1) return error(409, "reveal skips a snippet");
  if (upto > served->second) {
    nlohmann::ordered_json e;
    e["type"] = "serve";
    e["participant"] = *participant;
    e["session"] = *session;
    e["upto"] = upto;
    append(std::move(e));
  }
  ServiceResponse r;
  r.body["session"] = *session;
  r.body["revealed"] = upto;
  r.body["snippet_count"] = v.snippets.size();
  auto snippets = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i <= upto; ++i) snippets.push_back(snippet_json(v.snippets[i], i));
  r.body["snippets"] = std::move(snippets);
  return r;
}

ServiceResponse StudyService::cues(const std::string& participant, const std::string& session) {
  std::shared_lock lock(mu_);
  const Progress* p = find(participant);
  if (!p) return error(401, "unknown participant");
  auto served = p->revealed.find(session);
  if (served == p->revealed.end()) return error(404, "session not served");
  const Condition c = *condition_for(*p, session);
  if (c == Condition::Unassisted) return error(404, "no cues under this condition");
  const Prediction& pred = data_.cue_predictions.at(session);
  ServiceResponse r;
  r.body["session"] = session;
  r.body["condition"] = condition_name(c);
  r.body["prediction"] = pred.top1() ? nlohmann::ordered_json(label_name(*pred.top1())) : nullptr;
  if (c == Condition::GlassBox) {
    r.body["explanation"] = pred.explanation;
    auto anns = nlohmann::ordered_json::array();
    for (const auto& a : pred.annotations) {
      // Cues of snippets the participant has not seen stay hidden.
      if (a.snippet_index > served->second) continue;
      nlohmann::ordered_json j;
      j["snippet_index"] = a.snippet_index;
      j["contestant"] = label_name(a.contestant);
      j["control"] = control_id(a.control.kind);
      j["label"] = a.control.label ? nlohmann::ordered_json(control_label_name(*a.control.label)) : nullptr;
      j["verdict"] = verdict_name(a.control.verdict);
      j["rationale"] = a.rationale;
      anns.push_back(std::move(j));
    }
    r.body["annotations"] = std::move(anns);
  }
  return r;
}

ServiceResponse StudyService::vote(const nlohmann::json& body) {
  auto participant = string_field(body, "participant");
  auto session = string_field(body, "session");
  auto vote = string_field(body, "vote");
  if (!participant || !session || !vote) return error(400, "expected {participant, session, vote}");
  auto label = parse_label(*vote);
  if (!label) return error(400, "vote must be Number One, Number Two or Number Three");
  std::unique_lock lock(mu_);
  const Progress* p = find(*participant);
  if (!p) return error(401, "unknown participant");
  if (p->voted.count(*session)) return error(409, "already voted");
  auto served = p->revealed.find(*session);
  if (served == p->revealed.end()) return error(409, "session not served");
  if (served->second + 1 < views_.at(*session).snippets.size()) return error(409, "reveal incomplete");
  nlohmann::ordered_json e;
  e["type"] = "vote";
  e["participant"] = *participant;
  e["session"] = *session;
  e["vote"] = label_name(*label);
  append(std::move(e));
  ServiceResponse r;
  r.body["recorded"] = true;
  r.body["session"] = *session;
  return r;
}

bool StudyService::pair_swapped(const std::string& item) const {
  std::mt19937_64 rng(options_.seed ^ item_hash(item));
  return (rng() & 1U) != 0;
}

ServiceResponse StudyService::next_pair(const std::string& rater) {
  std::shared_lock lock(mu_);
  const Progress* p = find(rater);
  if (!p) return error(401, "unknown participant");
  ServiceResponse r;
  for (const auto& id : pair_items_) {
    const std::string item = std::string(kPairPrefix) + id;
    if (p->pairs_rated.count(item)) continue;
    const bool swap = pair_swapped(item);
    const auto& a = data_.system_a.at(id);
    const auto& b = data_.system_b.at(id);
    const Session& s = *views_.at(id).session;
    r.body["done"] = false;
    r.body["item"] = item;
    r.body["name"] = s.cc_name;
    r.body["affidavit"] = s.affidavit;
    r.body["left"] = {{"explanation", swap ? b.explanation : a.explanation}};
    r.body["right"] = {{"explanation", swap ? a.explanation : b.explanation}};
    return r;
  }
  r.body["done"] = true;
  return r;
}

ServiceResponse StudyService::rate_pair(const nlohmann::json& body) {
  auto rater = string_field(body, "rater");
  auto item = string_field(body, "item");
  auto choice = string_field(body, "choice");
  if (!rater || !item || !choice || (*choice != "left" && *choice != "right"))
    return error(400, "expected {rater, item, choice: left|right}");
  if (item->rfind(kPairPrefix, 0) != 0 ||
      std::find(pair_items_.begin(), pair_items_.end(), item->substr(kPairPrefix.size())) ==
          pair_items_.end())
    return error(404, "unknown pairwise item");
  std::unique_lock lock(mu_);
  const Progress* p = find(*rater);
  if (!p) return error(401, "unknown participant");
  if (p->pairs_rated.count(*item)) return error(409, "already rated");
  const bool picked_right = *choice == "right";
  const bool a_on_right = pair_swapped(*item);
  nlohmann::ordered_json e;
  e["type"] = "pair";
  e["participant"] = *rater;
  e["item"] = *item;
  e["shown"] = *choice;
  e["choice"] = picked_right == a_on_right ? "A" : "B";
  append(std::move(e));
  ServiceResponse r;
  r.body["recorded"] = true;
  return r;
}

ServiceResponse StudyService::next_evil(const std::string& rater) {
  std::shared_lock lock(mu_);
  const Progress* p = find(rater);
  if (!p) return error(401, "unknown participant");
  ServiceResponse r;
  for (const auto& id : evil_items_) {
    const std::string item = std::string(kEvilPrefix) + id;
    if (p->evil_rated.count(item)) continue;
    const Session& s = *views_.at(id).session;
    r.body["done"] = false;
    r.body["item"] = item;
    r.body["name"] = s.cc_name;
    r.body["affidavit"] = s.affidavit;
    r.body["explanation"] = data_.system_a.at(id).explanation;
    r.body["options"] = {"Yes", "WeakYes", "WeakNo", "No"};
    return r;
  }
  r.body["done"] = true;
  return r;
}

ServiceResponse StudyService::rate_evil(const nlohmann::json& body) {
  auto rater = string_field(body, "rater");
  auto item = string_field(body, "item");
  auto rating = string_field(body, "rating");
  if (!rater || !item || !rating) return error(400, "expected {rater, item, rating}");
  auto parsed = parse_evil_rating(*rating);
  if (!parsed) return error(400, "rating must be Yes, WeakYes, WeakNo or No");
  if (item->rfind(kEvilPrefix, 0) != 0 ||
      std::find(evil_items_.begin(), evil_items_.end(), item->substr(kEvilPrefix.size())) ==
          evil_items_.end())
    return error(404, "unknown e-ViL item");
  std::unique_lock lock(mu_);
  const Progress* p = find(*rater);
  if (!p) return error(401, "unknown participant");
  if (p->evil_rated.count(*item)) return error(409, "already rated");
  nlohmann::ordered_json e;
  e["type"] = "evil";
  e["participant"] = *rater;
  e["item"] = *item;
  e["rating"] = evil_rating_name(*parsed);
  append(std::move(e));
  ServiceResponse r;
  r.body["recorded"] = true;
  return r;
}

std::vector<StudyRecord> StudyService::records() const {
  std::shared_lock lock(mu_);
  return records_;
}

std::string StudyService::export_records() const {
  std::string out;
  for (const auto& r : records()) out += r.to_json().dump() + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// HTTP binding

struct StudyServer::Impl {
  StudyService& service;
  ServerOptions options;
  httplib::Server server;

  Impl(StudyService& s, ServerOptions o) : service(s), options(std::move(o)) {}

  static void send(httplib::Response& res, const ServiceResponse& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  }

  static std::optional<nlohmann::json> body_of(const httplib::Request& req, httplib::Response& res) {
    try {
      auto j = nlohmann::json::parse(req.body);
      if (j.is_object()) return j;
    } catch (const nlohmann::json::exception&) {
    }
    send(res, error(400, "malformed JSON body"));
    return std::nullopt;
  }

  bool admin_ok(const httplib::Request& req, httplib::Response& res) const {
    const char* token = std::getenv(options.admin_token_env.c_str());
    const std::string expected = token ? std::string("Bearer ") + token : std::string();
    if (!token || *token == '\0' || req.get_header_value("Authorization") != expected) {
      send(res, error(401, "admin token required"));
      return false;
    }
    return true;
  }

  void routes() {
    auto guarded = [](auto fn) {
      return [fn](const httplib::Request& req, httplib::Response& res) {
        try {
          fn(req, res);
        } catch (const std::exception& e) {
          send(res, error(500, e.what()));
        }
      };
    };
    server.Get("/study/next", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_param("participant")) return send(res, error(400, "participant required"));
      send(res, service.next(req.get_param_value("participant")));
    }));
    server.Post("/study/reveal", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (auto b = body_of(req, res)) send(res, service.reveal(*b));
    }));
    server.Get("/study/cues", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_param("participant") || !req.has_param("session"))
        return send(res, error(400, "participant and session required"));
      send(res, service.cues(req.get_param_value("participant"), req.get_param_value("session")));
    }));
    server.Post("/study/vote", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (auto b = body_of(req, res)) send(res, service.vote(*b));
    }));
    server.Get("/eval/pair", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_param("rater")) return send(res, error(400, "rater required"));
      send(res, service.next_pair(req.get_param_value("rater")));
    }));
    server.Post("/eval/pair", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (auto b = body_of(req, res)) send(res, service.rate_pair(*b));
    }));
    server.Get("/eval/evil", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (!req.has_param("rater")) return send(res, error(400, "rater required"));
      send(res, service.next_evil(req.get_param_value("rater")));
    }));
    server.Post("/eval/evil", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (auto b = body_of(req, res)) send(res, service.rate_evil(*b));
    }));
    server.Get("/admin/export", guarded([this](const httplib::Request& req, httplib::Response& res) {
      if (!admin_ok(req, res)) return;
      res.status = 200;
      res.set_content(service.export_records(), "application/x-ndjson");
    }));
    server.Post("/admin/participants",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  if (!admin_ok(req, res)) return;
                  auto b = body_of(req, res);
                  if (!b) return;
                  auto id = string_field(*b, "participant");
                  if (!id) return send(res, error(400, "expected {participant}"));
                  send(res, service.register_participant(*id));
                }));
    if (options.static_dir) server.set_mount_point("/", options.static_dir->string());
  }
};

StudyServer::StudyServer(StudyService& service, ServerOptions options)
    : impl_(std::make_unique<Impl>(service, std::move(options))) {
  impl_->routes();
}

StudyServer::~StudyServer() { stop(); }

bool StudyServer::listen() { return impl_->server.listen(impl_->options.host, impl_->options.port); }

int StudyServer::bind_any() { return impl_->server.bind_to_any_port(impl_->options.host); }

void StudyServer::listen_after_bind() { impl_->server.listen_after_bind(); }

void StudyServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace t4t
