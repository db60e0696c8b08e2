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

#include <cstdint>
#include <string>
#include <vector>

#include "hmbound/basis.hpp"
#include "hmbound/emulator.hpp"
#include "hmbound/field.hpp"

namespace hmbound::hm {

// ------------------------------------------------------------ implausibility

/// (z - m)^T V^{-1} (z - m) with V the total variance.
double implausibility(const VectorXd& z, const VectorXd& mean, const MatrixXd& total_var);
double implausibility(double z, double mean, double total_var);

/// j-th largest value (j = 1 is the maximum).
double jth_max(std::vector<double> values, int j);

/// Quantile of the chi-squared distribution with `df` degrees of freedom.
double chi2_quantile(double df, double p);
/// chi2_{ell, 0.995}.
double chi2_bound(Index ell);
/// 3 * impl / chi2_{ell, 0.995}.
double scaled_implausibility(double impl, Index ell);

// ------------------------------------------------------------ binary outputs

inline constexpr double kDefaultIceThreshold = 10.0;

/// 0 where field <= threshold, 1 otherwise.
Eigen::VectorXi binarize(const VectorXd& field, double threshold = kDefaultIceThreshold);

/// Basis and coefficient emulators for a region's thickness field.
struct RegionEmulator {
  MatrixXd vectors;  ///< l x q
  VectorXd mean;     ///< l
  std::vector<gp::GpEmulator> coefficients;
  Index length() const { return vectors.rows(); }
  Index rank() const { return vectors.cols(); }
};

/// Misclassification counts for `m_samples` posterior draws at x.
///
/// Draws use one std::mt19937_64 seeded with `seed` and a standard normal
/// std::normal_distribution; sample s takes coefficient k as
/// mean_k + sd_k * e, drawing e for k = 0..q-1 before moving to s + 1.
std::vector<int> binary_implausibility(const Eigen::VectorXi& zb, const RegionEmulator& em, const VectorXd& x,
                                       int m_samples, double threshold, std::uint64_t seed);

enum class BinarySummary { kProbability, kMin, kMean };

BinarySummary parse_binary_summary(const std::string& s);
std::string to_string(BinarySummary s);

/// Summary statistic of the counts: the ceil(0.05 m)-th smallest for
/// probability mode, else the min or mean.
double binary_summary_value(const std::vector<int>& counts, BinarySummary summary);

/// Keep decision for a binary output. Probability mode keeps iff at least
/// 5% of the counts are <= n_t.
bool binary_nroy_membership(const std::vector<int>& counts, double n_t, BinarySummary summary);

/// Default N_T = 0.25 * ell.
inline double default_binary_bound(Index ell) { return 0.25 * static_cast<double>(ell); }

/// Flags two separated modes in the count histogram.
bool bimodal_counts(const std::vector<int>& counts, Index ell);

// ------------------------------------------------------------ bounds

/// Evaluates a bound expression such as "3^2", "9", "0.25*ell" or
/// "(ell - 1) / 4". Throws ConfigError naming `context` when malformed.
double evaluate_bound(const std::string& expr, Index ell, const std::string& context = "bound");

// ------------------------------------------------------------ design

struct Box {
  VectorXd lo;
  VectorXd hi;
  Index dim() const { return lo.size(); }
  /// Maps rows of the unit cube into the box.
  MatrixXd from_unit(const MatrixXd& u) const;
  MatrixXd to_unit(const MatrixXd& x) const;
  bool contains(const VectorXd& x) const;
};

struct DesignPoint {
  VectorXd x;  ///< simulator parameters
  VectorXd c;  ///< boundary coefficients
  VectorXd joined() const;
  static DesignPoint split(const VectorXd& joined, Index n_params);
};

/// Maximin-improved Latin hypercube: best of `candidates` random designs,
/// then improving column swaps. Degenerate dimensions (lo == hi) are fixed
/// at lo and reported through `warnings`.
MatrixXd lhs_design(const Box& box, Index n_points, std::uint64_t seed, int candidates = 20,
                    std::vector<std::string>* warnings = nullptr);

/// Smallest pairwise distance between rows (in the given coordinates).
double min_pairwise_distance(const MatrixXd& x);

/// Greedy maximin selection of `n` rows of `pool` (unit-cube coordinates)
/// given already chosen rows.
std::vector<Index> maximin_select(const MatrixXd& pool, const MatrixXd& chosen, Index n);

}  // namespace hmbound::hm
