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
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "t4t/corpus.hpp"
#include "t4t/pipeline.hpp"

namespace t4t {

class EvaluationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Truths = std::map<std::string, ContestantLabel>;

Truths truths_of(const std::vector<Session>& sessions);

/// 1-based position of the true contestant in the ranking; empty for invalid output.
std::optional<std::size_t> rank_of_truth(const Prediction& p, ContestantLabel truth);

/// Fraction of predictions whose top-1 is the truth. Invalid output counts as wrong.
double accuracy(const std::vector<Prediction>& preds, const Truths& truths);
/// Fraction of predictions with the truth in the top two.
double accuracy_at_2(const std::vector<Prediction>& preds, const Truths& truths);

/// Percent with one decimal, e.g. 0.39333 -> "39.3".
std::string format_percent(double fraction);

struct SessionOutcome {
  std::string session_id;
  bool correct = false;
  std::optional<std::size_t> rank_of_truth;

  bool operator==(const SessionOutcome&) const = default;
};

struct EvalReport {
  std::string variant;
  std::string model;
  std::size_t n = 0;
  double accuracy = 0.0;
  double accuracy_at_2 = 0.0;
  double invalid_rate = 0.0;
  std::vector<SessionOutcome> per_session;

  nlohmann::ordered_json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  /// session_id,correct,rank_of_truth
  std::string per_session_csv() const;
};

EvalReport evaluate(const std::vector<Prediction>& preds, const Truths& truths,
                    const std::string& variant, const std::string& model);

struct HumanAccuracy {
  double accuracy = 0.0;     // macro average over sessions with votes
  std::size_t n_sessions = 0;
  std::size_t n_skipped = 0;  // sessions without votes
};

HumanAccuracy human_session_accuracy(const std::vector<Session>& sessions);

/// items x categories count table; each row sums to the same number of raters.
class RatingMatrix {
 public:
  RatingMatrix(std::size_t n_categories, std::vector<std::vector<std::size_t>> counts);
  /// Builds counts from per-item rater labels over `categories` distinct values.
  static RatingMatrix from_ratings(const std::vector<std::vector<std::string>>& ratings);

  std::size_t items() const { return counts_.size(); }
  std::size_t categories() const { return n_categories_; }
  std::size_t raters() const { return raters_; }
  const std::vector<std::vector<std::size_t>>& counts() const { return counts_; }

 private:
  std::size_t n_categories_;
  std::size_t raters_ = 0;
  std::vector<std::vector<std::size_t>> counts_;
};

double fleiss_kappa(const RatingMatrix& m);

/// Adjusted Fisher-Pearson standardized third moment (sample skewness G1).
double skewness(const std::vector<double>& values);

/// One-sided bootstrap sign test for the observed skew: fraction of resamples
/// whose skewness has the opposite sign (or is zero). Resamples with zero
/// variance count against the observed sign.
double skewness_sign_pvalue(const std::vector<double>& values, std::size_t resamples = 10000,
                            std::uint64_t seed = 0);

enum class Preference : std::uint8_t { A, B };

/// Fraction of items where at least two of the three raters prefer A.
double pairwise_wins(const std::vector<std::array<Preference, 3>>& choices);

enum class EvilRating : std::uint8_t { Yes, WeakYes, WeakNo, No };

std::optional<EvilRating> parse_evil_rating(std::string_view s);
std::string_view evil_rating_name(EvilRating r);

struct EvilMapping {
  double yes = 1.0;
  double weak_yes = 2.0 / 3.0;
  double weak_no = 1.0 / 3.0;
  double no = 0.0;
};

double evil_score(const std::vector<EvilRating>& ratings, const EvilMapping& mapping = {});

/// Phi coefficient between the two correctness vectors over a shared session
/// set. Degenerate (constant) vectors give 1 if identical, -1 if complementary,
/// 0 otherwise.
double prediction_agreement(const std::vector<Prediction>& a, const std::vector<Prediction>& b,
                            const Truths& truths);

// ---------------------------------------------------------------------------
// Regression

struct OlsFit {
  std::vector<std::string> names;  // "intercept" first
  std::vector<double> coefficients;
  std::vector<double> std_errors;
  std::vector<double> t_stats;
  std::vector<double> p_values;  // two-sided
  double r_squared = 0.0;
  std::size_t df_residual = 0;
  std::vector<double> residuals;
};

class RankDeficientError : public EvaluationError {
 public:
  using EvaluationError::EvaluationError;
};

/// OLS via the normal equations. `x` holds the regressors by row without an
/// intercept column; one is prepended.
OlsFit fit_ols(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
               const std::vector<std::string>& names);

/// Two-sided p-value of a t statistic with `df` degrees of freedom.
double t_two_sided_p(double t, double df);

double pearson(const std::vector<double>& a, const std::vector<double>& b);

struct CueRow {
  std::array<int, 4> cue_present{};  // indexed by ControlKind
  double human_correct_fraction = 0.0;
};

struct CueRegression {
  OlsFit fit;
  std::array<double, 4> point_biserial{};  // per ControlKind
};

CueRegression cue_human_regression(const std::vector<CueRow>& rows);

}  // namespace t4t
