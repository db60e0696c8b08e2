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

#pragma once

// Dense reference computations used as test oracles. Everything here is
// written independently of the library: plain dense algebra, brute force
// loops, no factor-structure shortcuts.

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline MatrixXd random_spd(int n, std::mt19937_64& rng, double ridge = 0.5) {
  std::normal_distribution<double> nd;
  MatrixXd a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = nd(rng);
  return a * a.transpose() / n + ridge * MatrixXd::Identity(n, n);
}

inline MatrixXd random_matrix(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  MatrixXd a(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) a(i, j) = nd(rng);
  return a;
}

inline VectorXd random_vector(int n, std::mt19937_64& rng) { return random_matrix(n, 1, rng).col(0); }

// Correlation matrix: unit diagonal, SPD.
inline MatrixXd random_corr(int n, std::mt19937_64& rng) {
  MatrixXd a = random_spd(n, rng);
  VectorXd d = a.diagonal().cwiseSqrt().cwiseInverse();
  return d.asDiagonal() * a * d.asDiagonal();
}

inline MatrixXd kron(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd k(a.rows() * b.rows(), a.cols() * b.cols());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return k;
}

inline MatrixXd select(const MatrixXd& a, const std::vector<int>& rows, const std::vector<int>& cols) {
  MatrixXd out(rows.size(), cols.size());
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < cols.size(); ++j) out(i, j) = a(rows[i], cols[j]);
  return out;
}

inline VectorXd select(const VectorXd& v, const std::vector<int>& idx) {
  VectorXd out(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) out[i] = v[idx[i]];
  return out;
}

// E[x_all | x_obs = y] for x ~ N(m, S), returned over every index.
inline VectorXd gaussian_condition(const VectorXd& m, const MatrixXd& s, const std::vector<int>& obs,
                                   const VectorXd& y) {
  std::vector<int> all(m.size());
  for (int i = 0; i < m.size(); ++i) all[i] = i;
  const MatrixXd soo = select(s, obs, obs);
  const MatrixXd sao = select(s, all, obs);
  return m + sao * soo.inverse() * (y - select(m, obs));
}

// Generalized least squares by explicit normal equations.
inline VectorXd gls(const MatrixXd& b, const MatrixXd& w, const VectorXd& y) {
  const MatrixXd wi = w.inverse();
  return (b.transpose() * wi * b).inverse() * b.transpose() * wi * y;
}

// (z - r(z))^T W^{-1} (z - r(z)) with r via a pseudo-inverse of the
// whitened basis.
inline double recon_error(const MatrixXd& b, const MatrixXd& w, const VectorXd& z) {
  Eigen::LLT<MatrixXd> llt(w);
  const MatrixXd l = llt.matrixL();
  const MatrixXd bw = l.triangularView<Eigen::Lower>().solve(b);
  const VectorXd zw = l.triangularView<Eigen::Lower>().solve(z);
  const MatrixXd pinv = bw.completeOrthogonalDecomposition().pseudoInverse();
  const VectorXd r = zw - bw * (pinv * zw);
  return r.squaredNorm();
}

// Cosine of the largest principal angle between two column spaces.
inline double min_subspace_cos(const MatrixXd& a, const MatrixXd& b) {
  const MatrixXd qa = Eigen::HouseholderQR<MatrixXd>(a).householderQ() * MatrixXd::Identity(a.rows(), a.cols());
  const MatrixXd qb = Eigen::HouseholderQR<MatrixXd>(b).householderQ() * MatrixXd::Identity(b.rows(), b.cols());
  Eigen::JacobiSVD<MatrixXd> svd(qa.transpose() * qb);
  return svd.singularValues().minCoeff();
}

// Regularized lower incomplete gamma P(a, x) by series / continued fraction.
inline double gamma_p(double a, double x) {
  if (x <= 0) return 0.0;
  const double lg = std::lgamma(a);
  if (x < a + 1) {
    double sum = 1.0 / a, term = sum;
    for (int n = 1; n < 100000; ++n) {
      term *= x / (a + n);
      sum += term;
      if (std::abs(term) < std::abs(sum) * 1e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - lg);
  }
  double b = x + 1 - a, c = 1e300, d = 1.0 / b, h = d;
  for (int i = 1; i < 100000; ++i) {
    const double an = -i * (i - a);
    b += 2;
    d = an * d + b;
    if (std::abs(d) < 1e-300) d = 1e-300;
    c = b + an / c;
    if (std::abs(c) < 1e-300) c = 1e-300;
    d = 1 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1) < 1e-16) break;
  }
  return 1.0 - std::exp(-x + a * std::log(x) - lg) * h;
}

inline double chi2_quantile(double df, double p) {
  double lo = 0, hi = df + 100 * std::sqrt(df) + 100;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (gamma_p(df / 2, mid / 2) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// j-th largest by full sort.
inline double jth_max(std::vector<double> v, int j) {
  std::sort(v.begin(), v.end(), std::greater<double>());
  return v[j - 1];
}

}  // namespace oracle
