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

#include "t4t/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <sstream>

#include "t4t/text.hpp"

namespace t4t {

Truths truths_of(const std::vector<Session>& sessions) {
  Truths t;
  for (const auto& s : sessions) t[s.id] = s.ground_truth;
  return t;
}

std::optional<std::size_t> rank_of_truth(const Prediction& p, ContestantLabel truth) {
  if (!p.ranking) return std::nullopt;
  for (std::size_t i = 0; i < 3; ++i)
    if ((*p.ranking)[i] == truth) return i + 1;
  return std::nullopt;
}

namespace {

ContestantLabel truth_for(const Truths& truths, const std::string& id) {
  auto it = truths.find(id);
  if (it == truths.end()) throw EvaluationError("no ground truth for session '" + id + "'");
  return it->second;
}

double fraction_within(const std::vector<Prediction>& preds, const Truths& truths, std::size_t k) {
  if (preds.empty()) throw EvaluationError("no predictions");
  std::size_t hits = 0;
  for (const auto& p : preds) {
    auto r = rank_of_truth(p, truth_for(truths, p.session_id));
    if (r && *r <= k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

}  // namespace

double accuracy(const std::vector<Prediction>& preds, const Truths& truths) {
  return fraction_within(preds, truths, 1);
}

double accuracy_at_2(const std::vector<Prediction>& preds, const Truths& truths) {
  return fraction_within(preds, truths, 2);
}

std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", fraction * 100.0);
  return buf;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["variant"] = variant;
  j["model"] = model;
  j["n"] = n;
  j["accuracy"] = accuracy;
  j["accuracy_at_2"] = accuracy_at_2;
  j["invalid_rate"] = invalid_rate;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& r : per_session) {
    nlohmann::ordered_json row;
    row["session_id"] = r.session_id;
    row["correct"] = r.correct;
    row["rank_of_truth"] = r.rank_of_truth ? nlohmann::ordered_json(*r.rank_of_truth) : nullptr;
    rows.push_back(std::move(row));
  }
  j["per_session"] = std::move(rows);
  return j;
}

EvalReport EvalReport::from_json(const nlohmann::json& j) {
  EvalReport r;
  r.variant = j.at("variant").get<std::string>();
  r.model = j.value("model", std::string{});
  r.n = j.at("n").get<std::size_t>();
  r.accuracy = j.at("accuracy").get<double>();
  r.accuracy_at_2 = j.at("accuracy_at_2").get<double>();
  r.invalid_rate = j.at("invalid_rate").get<double>();
  for (const auto& row : j.at("per_session")) {
    SessionOutcome o;
    o.session_id = row.at("session_id").get<std::string>();
    o.correct = row.at("correct").get<bool>();
    if (!row.at("rank_of_truth").is_null()) o.rank_of_truth = row.at("rank_of_truth").get<std::size_t>();
    r.per_session.push_back(std::move(o));
  }
  return r;
}

std::string EvalReport::per_session_csv() const {
  std::ostringstream out;
  out << "session_id,correct,rank_of_truth\n";
  for (const auto& r : per_session) {
    out << r.session_id << ',' << (r.correct ? 1 : 0) << ',';
    if (r.rank_of_truth) out << *r.rank_of_truth;
    out << '\n';
  }
  return out.str();
}

EvalReport evaluate(const std::vector<Prediction>& preds, const Truths& truths,
                    const std::string& variant, const std::string& model) {
  EvalReport r;
  r.variant = variant;
  r.model = model;
  r.n = preds.size();
  if (preds.empty()) return r;
  std::size_t invalid = 0;
  for (const auto& p : preds) {
    SessionOutcome o;
    o.session_id = p.session_id;
    o.rank_of_truth = rank_of_truth(p, truth_for(truths, p.session_id));
    o.correct = o.rank_of_truth && *o.rank_of_truth == 1;
    if (!p.valid()) ++invalid;
    r.per_session.push_back(std::move(o));
  }
  r.accuracy = accuracy(preds, truths);
  r.accuracy_at_2 = accuracy_at_2(preds, truths);
  r.invalid_rate = static_cast<double>(invalid) / static_cast<double>(preds.size());
  return r;
}

HumanAccuracy human_session_accuracy(const std::vector<Session>& sessions) {
  HumanAccuracy h;
  double sum = 0.0;
  for (const auto& s : sessions) {
    if (s.judge_votes.empty()) {
      ++h.n_skipped;
      continue;
    }
    auto correct = std::count(s.judge_votes.begin(), s.judge_votes.end(), s.ground_truth);
    sum += static_cast<double>(correct) / static_cast<double>(s.judge_votes.size());
    ++h.n_sessions;
  }
  if (h.n_sessions == 0) throw EvaluationError("no session carries judge votes");
  h.accuracy = sum / static_cast<double>(h.n_sessions);
  return h;
}

RatingMatrix::RatingMatrix(std::size_t n_categories, std::vector<std::vector<std::size_t>> counts)
    : n_categories_(n_categories), counts_(std::move(counts)) {
  if (counts_.empty()) throw EvaluationError("rating matrix has no items");
  if (n_categories_ == 0) throw EvaluationError("rating matrix has no categories");
  for (std::size_t i = 0; i < counts_.size(); ++i) {
    const auto& row = counts_[i];
    if (row.size() != n_categories_)
      throw EvaluationError("item " + std::to_string(i) + " has " + std::to_string(row.size()) +
                            " categories, expected " + std::to_string(n_categories_));
    std::size_t total = 0;
    for (auto c : row) total += c;
    if (i == 0) raters_ = total;
    else if (total != raters_)
      throw EvaluationError("item " + std::to_string(i) + " has " + std::to_string(total) +
                            " ratings, expected " + std::to_string(raters_));
  }
  if (raters_ < 2) throw EvaluationError("need at least two raters per item");
}

RatingMatrix RatingMatrix::from_ratings(const std::vector<std::vector<std::string>>& ratings) {
  std::set<std::string> cats;
  for (const auto& item : ratings) cats.insert(item.begin(), item.end());
  std::vector<std::string> order(cats.begin(), cats.end());
  std::vector<std::vector<std::size_t>> counts;
  for (const auto& item : ratings) {
    std::vector<std::size_t> row(order.size(), 0);
    for (const auto& r : item) {
      auto pos = std::lower_bound(order.begin(), order.end(), r) - order.begin();
      ++row[static_cast<std::size_t>(pos)];
    }
    counts.push_back(std::move(row));
  }
  return RatingMatrix(order.size(), std::move(counts));
}

double fleiss_kappa(const RatingMatrix& m) {
  const double n = static_cast<double>(m.raters());
  const double items = static_cast<double>(m.items());
  std::vector<double> col(m.categories(), 0.0);
  double p_bar = 0.0;
  for (const auto& row : m.counts()) {
    double sq = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      sq += static_cast<double>(row[j]) * static_cast<double>(row[j]);
      col[j] += static_cast<double>(row[j]);
    }
    p_bar += (sq - n) / (n * (n - 1.0));
  }
  p_bar /= items;
  double p_e = 0.0;
  for (double c : col) {
    double p = c / (items * n);
    p_e += p * p;
  }
  // Every rating fell in one category: agreement is perfect.
  if (std::abs(1.0 - p_e) < 1e-15) return 1.0;
  return (p_bar - p_e) / (1.0 - p_e);
}

double skewness(const std::vector<double>& values) {
  if (values.size() < 3) throw EvaluationError("skewness needs at least three values");
  const double n = static_cast<double>(values.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= n;
  double m2 = 0.0, m3 = 0.0;
  for (double v : values) {
    double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  if (m2 <= 0.0) throw EvaluationError("skewness undefined for zero variance");
  double g1 = m3 / std::pow(m2, 1.5);
  return g1 * std::sqrt(n * (n - 1.0)) / (n - 2.0);
}

double skewness_sign_pvalue(const std::vector<double>& values, std::size_t resamples,
                            std::uint64_t seed) {
  const double observed = skewness(values);
  if (resamples == 0) throw EvaluationError("resamples must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, values.size() - 1);
  std::vector<double> sample(values.size());
  std::size_t against = 0;
  for (std::size_t b = 0; b < resamples; ++b) {
    for (auto& v : sample) v = values[pick(rng)];
    double s = 0.0;
    try {
      s = skewness(sample);
    } catch (const EvaluationError&) {
      ++against;
      continue;
    }
    if (s == 0.0 || (s > 0.0) != (observed > 0.0)) ++against;
  }
  return static_cast<double>(against) / static_cast<double>(resamples);
}

double pairwise_wins(const std::vector<std::array<Preference, 3>>& choices) {
  if (choices.empty()) throw EvaluationError("no pairwise items");
  std::size_t wins = 0;
  for (const auto& item : choices)
    if (std::count(item.begin(), item.end(), Preference::A) >= 2) ++wins;
  return static_cast<double>(wins) / static_cast<double>(choices.size());
}

std::optional<EvilRating> parse_evil_rating(std::string_view s) {
  std::string k = text::to_lower(text::trim(s));
  k.erase(std::remove_if(k.begin(), k.end(), [](char c) { return c == '-' || c == '_' || c == ' '; }),
          k.end());
  if (k == "yes") return EvilRating::Yes;
  if (k == "weakyes" || k == "partialyes") return EvilRating::WeakYes;
  if (k == "weakno" || k == "partialno") return EvilRating::WeakNo;
  if (k == "no") return EvilRating::No;
  return std::nullopt;
}

std::string_view evil_rating_name(EvilRating r) {
  switch (r) {
    case EvilRating::Yes: return "Yes";
    case EvilRating::WeakYes: return "WeakYes";
    case EvilRating::WeakNo: return "WeakNo";
    case EvilRating::No: return "No";
  }
  return "No";
}

double evil_score(const std::vector<EvilRating>& ratings, const EvilMapping& mapping) {
  if (ratings.empty()) throw EvaluationError("no e-ViL ratings");
  double sum = 0.0;
  for (auto r : ratings) {
    switch (r) {
      case EvilRating::Yes: sum += mapping.yes; break;
      case EvilRating::WeakYes: sum += mapping.weak_yes; break;
      case EvilRating::WeakNo: sum += mapping.weak_no; break;
      case EvilRating::No: sum += mapping.no; break;
    }
  }
  return sum / static_cast<double>(ratings.size());
}

double prediction_agreement(const std::vector<Prediction>& a, const std::vector<Prediction>& b,
                            const Truths& truths) {
  std::map<std::string, bool> ca, cb;
  for (const auto& p : a) ca[p.session_id] = p.top1() == truth_for(truths, p.session_id);
  for (const auto& p : b) cb[p.session_id] = p.top1() == truth_for(truths, p.session_id);
  if (ca.size() != a.size() || cb.size() != b.size())
    throw EvaluationError("duplicate session in prediction set");
  if (ca.empty()) throw EvaluationError("no predictions");
  double n11 = 0, n10 = 0, n01 = 0, n00 = 0;
  for (const auto& [id, x] : ca) {
    auto it = cb.find(id);
    if (it == cb.end()) throw EvaluationError("session '" + id + "' missing from second set");
    bool y = it->second;
    (x ? (y ? n11 : n10) : (y ? n01 : n00)) += 1;
  }
  if (cb.size() != ca.size()) throw EvaluationError("prediction sets cover different sessions");
  double r1 = n11 + n10, r0 = n01 + n00, c1 = n11 + n01, c0 = n10 + n00;
  double denom = r1 * r0 * c1 * c0;
  if (denom == 0.0) {
    if (n10 == 0 && n01 == 0) return 1.0;
    if (n11 == 0 && n00 == 0) return -1.0;
    return 0.0;
  }
  return (n11 * n00 - n10 * n01) / std::sqrt(denom);
}

}  // namespace t4t
