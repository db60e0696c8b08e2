/*
 * Copyright 2026 The hmbound Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "hmbound/history_match.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <boost/math/special_functions/gamma.hpp>

namespace hmbound::hm {

double implausibility(const VectorXd& z, const VectorXd& mean, const MatrixXd& total_var) {
  if (z.size() != mean.size() || total_var.rows() != z.size() || total_var.cols() != z.size()) {
    throw ShapeError("implausibility: observation, mean and variance sizes disagree");
  }
  Eigen::LLT<MatrixXd> llt(total_var);
  if (llt.info() != Eigen::Success) {
    throw FactorizationError("implausibility: total variance is not positive definite");
  }
  const VectorXd w = llt.matrixL().solve(z - mean);
  return w.squaredNorm();
}

double implausibility(double z, double mean, double total_var) {
  if (!(total_var > 0.0)) throw FactorizationError("implausibility: total variance must be positive");
  const double r = z - mean;
  return r * r / total_var;
}

double jth_max(std::vector<double> values, int j) {
  if (j < 1 || j > static_cast<int>(values.size())) {
    throw IndexError("jth_max: j = " + std::to_string(j) + " outside 1.." + std::to_string(values.size()));
  }
  std::nth_element(values.begin(), values.begin() + (j - 1), values.end(), std::greater<double>());
  return values[static_cast<std::size_t>(j - 1)];
}

double chi2_quantile(double df, double p) {
  if (!(df > 0.0) || !(p > 0.0) || !(p < 1.0)) {
    throw ConfigError("chi2_quantile: need df > 0 and 0 < p < 1");
  }
  return 2.0 * boost::math::gamma_p_inv(0.5 * df, p);
}

double chi2_bound(Index ell) {
  if (ell < 1) throw ConfigError("chi2_bound: output dimension must be >= 1");
  return chi2_quantile(static_cast<double>(ell), 0.995);
}

double scaled_implausibility(double impl, Index ell) { return 3.0 * impl / chi2_bound(ell); }

Eigen::VectorXi binarize(const VectorXd& field, double threshold) {
  Eigen::VectorXi out(field.size());
  for (Index i = 0; i < field.size(); ++i) out[i] = field[i] <= threshold ? 0 : 1;
  return out;
}

std::vector<int> binary_implausibility(const Eigen::VectorXi& zb, const RegionEmulator& em, const VectorXd& x,
                                       int m_samples, double threshold, std::uint64_t seed) {
  const Index ell = em.length();
  const Index q = em.rank();
  if (zb.size() != ell || em.mean.size() != ell) {
    throw ShapeError("binary_implausibility: region map length does not match the basis");
  }
  if (static_cast<Index>(em.coefficients.size()) != q) {
    throw ShapeError("binary_implausibility: need one emulator per basis vector");
  }
  if (m_samples < 1) throw ConfigError("binary_implausibility: m_samples must be >= 1");

  VectorXd mean(q), sd(q);
  for (Index k = 0; k < q; ++k) {
    const auto p = em.coefficients[static_cast<std::size_t>(k)].predict(x);
    mean[k] = p.mean;
    sd[k] = std::sqrt(std::max(p.variance, 0.0));
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<int> counts(static_cast<std::size_t>(m_samples));
  VectorXd coef(q);
  for (int s = 0; s < m_samples; ++s) {
    for (Index k = 0; k < q; ++k) coef[k] = mean[k] + sd[k] * normal(rng);
    const VectorXd field = em.mean + em.vectors * coef;
    int miss = 0;
    for (Index i = 0; i < ell; ++i) {
      const int b = field[i] <= threshold ? 0 : 1;
      miss += b != zb[i];
    }
    counts[static_cast<std::size_t>(s)] = miss;
  }
  return counts;
}

BinarySummary parse_binary_summary(const std::string& s) {
  if (s == "probability") return BinarySummary::kProbability;
  if (s == "min") return BinarySummary::kMin;
  if (s == "mean") return BinarySummary::kMean;
  throw ConfigError("unknown binary summary '" + s + "' (expected probability, min or mean)");
}

std::string to_string(BinarySummary s) {
  switch (s) {
    case BinarySummary::kProbability: return "probability";
    case BinarySummary::kMin: return "min";
    case BinarySummary::kMean: return "mean";
  }
  return "probability";
}

namespace {
// Index (0-based) of the order statistic used by probability mode.
std::size_t probability_rank(std::size_t m) { return (m + 19) / 20 - 1; }
}  // namespace

double binary_summary_value(const std::vector<int>& counts, BinarySummary summary) {
  if (counts.empty()) throw PreconditionError("binary summary of an empty count list");
  switch (summary) {
    case BinarySummary::kMin: return *std::min_element(counts.begin(), counts.end());
    case BinarySummary::kMean:
      return std::accumulate(counts.begin(), counts.end(), 0.0) / static_cast<double>(counts.size());
    case BinarySummary::kProbability: {
      std::vector<int> c = counts;
      const std::size_t r = probability_rank(c.size());
      std::nth_element(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(r), c.end());
      return c[r];
    }
  }
  return 0.0;
}

bool binary_nroy_membership(const std::vector<int>& counts, double n_t, BinarySummary summary) {
  if (counts.empty()) throw PreconditionError("binary membership of an empty count list");
  if (summary == BinarySummary::kProbability) {
    // Integer form of P(count <= n_t) >= 0.05.
    std::size_t hits = 0;
    for (int c : counts) hits += c <= n_t;
    return hits * 20 >= counts.size();
  }
  return binary_summary_value(counts, summary) <= n_t;
}

bool bimodal_counts(const std::vector<int>& counts, Index ell) {
  if (counts.size() < 10) return false;
  const int lo = *std::min_element(counts.begin(), counts.end());
  const int hi = *std::max_element(counts.begin(), counts.end());
  if (hi - lo < std::max<Index>(3, ell / 20)) return false;
  const int kBins = std::min(10, hi - lo + 1);
  std::vector<int> hist(static_cast<std::size_t>(kBins), 0);
  const double width = static_cast<double>(hi - lo + 1) / kBins;
  for (int c : counts) {
    const int b = std::min(kBins - 1, static_cast<int>((c - lo) / width));
    ++hist[static_cast<std::size_t>(b)];
  }
  const int min_peak = static_cast<int>(counts.size() / 10);
  std::vector<int> peaks;
  for (int b = 0; b < kBins; ++b) {
    const int left = b > 0 ? hist[b - 1] : -1;
    const int right = b + 1 < kBins ? hist[b + 1] : -1;
    if (hist[b] >= min_peak && hist[b] > left && hist[b] >= right) peaks.push_back(b);
  }
  for (std::size_t i = 0; i < peaks.size(); ++i) {
    for (std::size_t j = i + 1; j < peaks.size(); ++j) {
      const int a = peaks[i], b = peaks[j];
      if (b - a < 2) continue;
      const int valley = *std::min_element(hist.begin() + a + 1, hist.begin() + b);
      if (2 * valley < std::min(hist[a], hist[b])) return true;
    }
  }
  return false;
}

// ------------------------------------------------------------ bound parser

namespace {

class BoundParser {
 public:
  BoundParser(const std::string& text, double ell, const std::string& context)
      : s_(text), ell_(ell), context_(context) {}

  double parse() {
    const double v = expr();
    skip();
    if (pos_ != s_.size()) fail("unexpected '" + std::string(1, s_[pos_]) + "'");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw ConfigError(context_ + ": cannot parse bound '" + s_ + "': " + why);
  }
  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  double expr() {
    double v = term();
    for (;;) {
      if (eat('+')) v += term();
      else if (eat('-')) v -= term();
      else return v;
    }
  }
  double term() {
    double v = power();
    for (;;) {
      if (eat('*')) v *= power();
      else if (eat('/')) {
        const double d = power();
        if (d == 0.0) fail("division by zero");
        v /= d;
      } else {
        return v;
      }
    }
  }
  double power() {
    const double base = unary();
    if (eat('^')) return std::pow(base, power());
    return base;
  }
  double unary() {
    if (eat('-')) return -unary();
    if (eat('+')) return unary();
    return primary();
  }
  double primary() {
    skip();
    if (eat('(')) {
      const double v = expr();
      if (!eat(')')) fail("missing ')'");
      return v;
    }
    if (s_.compare(pos_, 3, "ell") == 0) {
      pos_ += 3;
      return ell_;
    }
    if (pos_ < s_.size() && (std::isdigit(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '.')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(s_.substr(pos_), &used);
      } catch (const std::exception&) {
        fail("bad number");
      }
      pos_ += used;
      return v;
    }
    fail(pos_ < s_.size() ? "unexpected '" + std::string(1, s_[pos_]) + "'" : "unexpected end");
  }

  const std::string& s_;
  double ell_;
  const std::string& context_;
  std::size_t pos_ = 0;
};

}  // namespace

double evaluate_bound(const std::string& expr, Index ell, const std::string& context) {
  const double v = BoundParser(expr, static_cast<double>(ell), context).parse();
  if (!std::isfinite(v) || !(v > 0.0)) {
    throw ConfigError(context + ": bound '" + expr + "' must evaluate to a positive number");
  }
  return v;
}

// ------------------------------------------------------------ design

MatrixXd Box::from_unit(const MatrixXd& u) const {
  MatrixXd x(u.rows(), u.cols());
  for (Index j = 0; j < u.cols(); ++j) x.col(j) = lo[j] + (hi[j] - lo[j]) * u.col(j).array();
  return x;
}

MatrixXd Box::to_unit(const MatrixXd& x) const {
  MatrixXd u(x.rows(), x.cols());
  for (Index j = 0; j < x.cols(); ++j) {
    const double w = hi[j] - lo[j];
    if (w > 0.0) u.col(j) = (x.col(j).array() - lo[j]) / w;
    else u.col(j).setConstant(0.5);
  }
  return u;
}

bool Box::contains(const VectorXd& x) const {
  for (Index j = 0; j < x.size(); ++j) {
    if (x[j] < lo[j] || x[j] > hi[j]) return false;
  }
  return true;
}

VectorXd DesignPoint::joined() const {
  VectorXd v(x.size() + c.size());
  v << x, c;
  return v;
}

DesignPoint DesignPoint::split(const VectorXd& joined, Index n_params) {
  if (n_params > joined.size()) throw ShapeError("DesignPoint::split: too many parameters");
  return {joined.head(n_params), joined.tail(joined.size() - n_params)};
}

double min_pairwise_distance(const MatrixXd& x) {
  double best = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = i + 1; j < x.rows(); ++j) best = std::min(best, (x.row(i) - x.row(j)).squaredNorm());
  }
  return std::sqrt(best);
}

namespace {

MatrixXd squared_distances(const MatrixXd& u) {
  const Index n = u.rows();
  MatrixXd d = MatrixXd::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) d(i, j) = d(j, i) = (u.row(i) - u.row(j)).squaredNorm();
  }
  return d;
}

double off_diagonal_min(const MatrixXd& d) {
  double best = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < d.rows(); ++i) {
    for (Index j = i + 1; j < d.cols(); ++j) best = std::min(best, d(i, j));
  }
  return best;
}

}  // namespace

MatrixXd lhs_design(const Box& box, Index n_points, std::uint64_t seed, int candidates,
                    std::vector<std::string>* warnings) {
  if (n_points < 2) throw ConfigError("lhs_design: need at least 2 points");
  if (box.lo.size() != box.hi.size()) throw ShapeError("lhs_design: bound vectors differ in length");
  std::vector<Index> active;
  for (Index j = 0; j < box.dim(); ++j) {
    if (box.hi[j] < box.lo[j]) throw ConfigError("lhs_design: lower bound above upper bound in dimension " + std::to_string(j));
    if (box.hi[j] > box.lo[j]) active.push_back(j);
    else if (warnings) warnings->push_back("lhs_design: dimension " + std::to_string(j) + " has lo == hi and is fixed");
  }
  const Index n = n_points;
  const Index da = static_cast<Index>(active.size());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  auto random_lhs = [&]() {
    MatrixXd u(n, da);
    std::vector<Index> perm(static_cast<std::size_t>(n));
    for (Index j = 0; j < da; ++j) {
      std::iota(perm.begin(), perm.end(), Index{0});
      std::shuffle(perm.begin(), perm.end(), rng);
      for (Index i = 0; i < n; ++i) u(i, j) = (static_cast<double>(perm[static_cast<std::size_t>(i)]) + unif(rng)) / n;
    }
    return u;
  };

  MatrixXd best;
  double best_min = -1.0;
  if (da > 0) {
    for (int c = 0; c < std::max(1, candidates); ++c) {
      MatrixXd u = random_lhs();
      const double m = off_diagonal_min(squared_distances(u));
      if (m > best_min) {
        best_min = m;
        best = std::move(u);
      }
    }
    // Column swaps keep the stratification; accept those that do not lower
    // the minimum distance.
    MatrixXd d = squared_distances(best);
    std::uniform_int_distribution<Index> row(0, n - 1), col(0, da - 1);
    const Index iters = 10 * n;
    for (Index it = 0; it < iters; ++it) {
      const Index a = row(rng), b = row(rng), k = col(rng);
      if (a == b) continue;
      std::swap(best(a, k), best(b, k));
      VectorXd da_row(n), db_row(n);
      for (Index i = 0; i < n; ++i) {
        da_row[i] = (best.row(a) - best.row(i)).squaredNorm();
        db_row[i] = (best.row(b) - best.row(i)).squaredNorm();
      }
      MatrixXd trial = d;
      trial.row(a) = da_row.transpose();
      trial.col(a) = da_row;
      trial.row(b) = db_row.transpose();
      trial.col(b) = db_row;
      trial(a, a) = trial(b, b) = 0.0;
      const double m = off_diagonal_min(trial);
      if (m >= best_min) {
        best_min = m;
        d = std::move(trial);
      } else {
        std::swap(best(a, k), best(b, k));
      }
    }
  }

  MatrixXd x(n, box.dim());
  for (Index j = 0; j < box.dim(); ++j) x.col(j).setConstant(box.lo[j]);
  for (Index k = 0; k < da; ++k) {
    const Index j = active[static_cast<std::size_t>(k)];
    x.col(j) = box.lo[j] + (box.hi[j] - box.lo[j]) * best.col(k).array();
  }
  return x;
}

std::vector<Index> maximin_select(const MatrixXd& pool, const MatrixXd& chosen, Index n) {
  const Index np = pool.rows();
  std::vector<Index> picked;
  if (n <= 0 || np == 0) return picked;
  VectorXd mind = VectorXd::Constant(np, std::numeric_limits<double>::infinity());
  std::vector<char> used(static_cast<std::size_t>(np), 0);
  for (Index c = 0; c < chosen.rows(); ++c) {
    for (Index i = 0; i < np; ++i) mind[i] = std::min(mind[i], (pool.row(i) - chosen.row(c)).squaredNorm());
  }
  while (static_cast<Index>(picked.size()) < std::min(n, np)) {
    Index arg = -1;
    double best = -1.0;
    for (Index i = 0; i < np; ++i) {
      if (!used[static_cast<std::size_t>(i)] && mind[i] > best) {
        best = mind[i];
        arg = i;
      }
    }
    if (arg < 0) break;
    used[static_cast<std::size_t>(arg)] = 1;
    picked.push_back(arg);
    for (Index i = 0; i < np; ++i) mind[i] = std::min(mind[i], (pool.row(i) - pool.row(arg)).squaredNorm());
  }
  return picked;
}

}  // namespace hmbound::hm
