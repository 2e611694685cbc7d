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

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "t4t/evaluation.hpp"

namespace t4t {

namespace {

using Matrix = std::vector<std::vector<double>>;

double dot_col(const Matrix& x, std::size_t a, std::size_t b) {
  double s = 0.0;
  for (const auto& row : x) s += row[a] * row[b];
  return s;
}

// Solves a*z = b by Gauss-Jordan with partial pivoting; returns a^-1 too.
// Assumes `a` is nonsingular (collinearity is screened before).
Matrix invert(Matrix a) {
  const std::size_t n = a.size();
  Matrix inv(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r][c]) > std::abs(a[piv][c])) piv = r;
    std::swap(a[c], a[piv]);
    std::swap(inv[c], inv[piv]);
    double d = a[c][c];
    for (std::size_t k = 0; k < n; ++k) {
      a[c][k] /= d;
      inv[c][k] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c || a[r][c] == 0.0) continue;
      double f = a[r][c];
      for (std::size_t k = 0; k < n; ++k) {
        a[r][k] -= f * a[c][k];
        inv[r][k] -= f * inv[c][k];
      }
    }
  }
  return inv;
}

// Gram-Schmidt over design columns; throws naming the first dependent column
// together with the earlier columns that span it.
void check_rank(const Matrix& x, const std::vector<std::string>& names) {
  const std::size_t p = names.size();
  const std::size_t n = x.size();
  std::vector<std::vector<double>> basis;  // orthonormal vectors
  std::vector<std::size_t> basis_col;
  for (std::size_t j = 0; j < p; ++j) {
    std::vector<double> v(n);
    double norm0 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = x[i][j];
      norm0 += v[i] * v[i];
    }
    for (const auto& q : basis) {
      double d = 0.0;
      for (std::size_t i = 0; i < n; ++i) d += q[i] * v[i];
      for (std::size_t i = 0; i < n; ++i) v[i] -= d * q[i];
    }
    double norm = 0.0;
    for (double e : v) norm += e * e;
    if (norm0 == 0.0 || norm <= 1e-20 * norm0) {
      // Express column j through the independent columns seen so far.
      std::string msg = "design matrix is rank deficient: column '" + names[j] + "'";
      if (norm0 == 0.0) {
        msg += " is identically zero";
      } else {
        Matrix sub(basis_col.size(), std::vector<double>(basis_col.size()));
        std::vector<double> rhs(basis_col.size());
        for (std::size_t a = 0; a < basis_col.size(); ++a) {
          rhs[a] = dot_col(x, basis_col[a], j);
          for (std::size_t b = 0; b < basis_col.size(); ++b)
            sub[a][b] = dot_col(x, basis_col[a], basis_col[b]);
        }
        Matrix inv = invert(sub);
        msg += " is collinear with";
        bool first = true;
        for (std::size_t a = 0; a < basis_col.size(); ++a) {
          double c = 0.0;
          for (std::size_t b = 0; b < basis_col.size(); ++b) c += inv[a][b] * rhs[b];
          if (std::abs(c) < 1e-8) continue;
          msg += (first ? " '" : ", '") + names[basis_col[a]] + "'";
          first = false;
        }
      }
      throw RankDeficientError(msg);
    }
    norm = std::sqrt(norm);
    for (double& e : v) e /= norm;
    basis.push_back(std::move(v));
    basis_col.push_back(j);
  }
}

}  // namespace

double t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw EvaluationError("degrees of freedom must be positive");
  if (std::isnan(t)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(t)) return 0.0;
  boost::math::students_t dist(df);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

OlsFit fit_ols(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
               const std::vector<std::string>& names) {
  const std::size_t n = y.size();
  if (x.size() != n) throw EvaluationError("regressor and response row counts differ");
  const std::size_t k = names.size();
  const std::size_t p = k + 1;
  if (n < p + 1) throw EvaluationError("need at least " + std::to_string(p + 1) + " rows for " +
                                       std::to_string(k) + " regressors");

  Matrix design(n, std::vector<double>(p, 1.0));
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i].size() != k)
      throw EvaluationError("row " + std::to_string(i) + " has " + std::to_string(x[i].size()) +
                            " regressors, expected " + std::to_string(k));
    for (std::size_t j = 0; j < k; ++j) design[i][j + 1] = x[i][j];
  }
  OlsFit fit;
  fit.names.push_back("intercept");
  fit.names.insert(fit.names.end(), names.begin(), names.end());
  check_rank(design, fit.names);

  Matrix xtx(p, std::vector<double>(p));
  std::vector<double> xty(p, 0.0);
  for (std::size_t a = 0; a < p; ++a) {
    for (std::size_t b = 0; b < p; ++b) xtx[a][b] = dot_col(design, a, b);
    for (std::size_t i = 0; i < n; ++i) xty[a] += design[i][a] * y[i];
  }
  Matrix inv = invert(xtx);
  fit.coefficients.assign(p, 0.0);
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = 0; b < p; ++b) fit.coefficients[a] += inv[a][b] * xty[b];

  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(n);
  double ssr = 0.0, sst = 0.0;
  fit.residuals.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double yhat = 0.0;
    for (std::size_t a = 0; a < p; ++a) yhat += design[i][a] * fit.coefficients[a];
    fit.residuals[i] = y[i] - yhat;
    ssr += fit.residuals[i] * fit.residuals[i];
    sst += (y[i] - mean) * (y[i] - mean);
  }
  // Exact fits leave round-off in ssr; treat it as zero relative to the response scale.
  double scale = 0.0;
  for (double v : y) scale += v * v;
  if (ssr <= 1e-24 * std::max(scale, 1.0)) ssr = 0.0;
  fit.r_squared = sst > 0.0 ? 1.0 - ssr / sst : (ssr == 0.0 ? 1.0 : 0.0);
  fit.df_residual = n - p;
  const double sigma2 = ssr / static_cast<double>(fit.df_residual);
  for (std::size_t a = 0; a < p; ++a) {
    double se = std::sqrt(std::max(0.0, sigma2 * inv[a][a]));
    double c = fit.coefficients[a];
    double t;
    if (se > 0.0) t = c / se;
    else if (std::abs(c) < 1e-12) t = 0.0;
    else t = std::copysign(std::numeric_limits<double>::infinity(), c);
    fit.std_errors.push_back(se);
    fit.t_stats.push_back(t);
    fit.p_values.push_back(t_two_sided_p(t, static_cast<double>(fit.df_residual)));
  }
  return fit;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw EvaluationError("pearson needs two equal-length series");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw EvaluationError("pearson undefined for a constant series");
  return sab / std::sqrt(saa * sbb);
}

CueRegression cue_human_regression(const std::vector<CueRow>& rows) {
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto& r : rows) {
    std::vector<double> row;
    for (int v : r.cue_present) {
      if (v != 0 && v != 1) throw EvaluationError("cue indicators must be 0 or 1");
      row.push_back(v);
    }
    x.push_back(std::move(row));
    y.push_back(r.human_correct_fraction);
  }
  std::vector<std::string> names;
  for (auto k : kAllControls) names.emplace_back(control_id(k));
  CueRegression out;
  out.fit = fit_ols(x, y, names);
  for (std::size_t c = 0; c < 4; ++c) {
    std::vector<double> col;
    for (const auto& row : x) col.push_back(row[c]);
    out.point_biserial[c] = pearson(col, y);
  }
  return out;
}

}  // namespace t4t
