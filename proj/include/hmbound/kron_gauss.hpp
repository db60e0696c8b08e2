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

#include <Eigen/Cholesky>

#include "hmbound/field.hpp"
#include "hmbound/observations.hpp"

namespace hmbound::kron {

/// Relative nugget added (times the mean diagonal) when a first Cholesky
/// attempt fails.
inline constexpr double kDefaultNuggetScale = 1e-8;

/// Cholesky factorization of a symmetric positive-definite matrix, retried
/// once with a diagonal nugget. Throws FactorizationError naming `name`.
class SpdFactor {
 public:
  SpdFactor() = default;
  SpdFactor(const MatrixXd& a, std::string name, double nugget_scale = kDefaultNuggetScale);

  MatrixXd solve(const MatrixXd& b) const { return llt_.solve(b); }
  VectorXd solve(const VectorXd& b) const { return llt_.solve(b); }
  const Eigen::LLT<MatrixXd>& llt() const { return llt_; }
  Index dim() const { return llt_.rows(); }
  /// Nugget actually added (zero when the first attempt succeeded).
  double nugget() const { return nugget_; }
  double log_det() const;

 private:
  Eigen::LLT<MatrixXd> llt_;
  double nugget_ = 0.0;
};

/// Throws unless `a` is square and symmetric to `rel_tol` relative to its
/// largest absolute entry.
void require_symmetric(const MatrixXd& a, const std::string& name, double rel_tol = 1e-10);

/// Separable covariance Sigma_s (x) Sigma_t, held as its two factors.
class KroneckerCov {
 public:
  KroneckerCov(MatrixXd sigma_s, MatrixXd sigma_t, double nugget_scale = kDefaultNuggetScale);

  const MatrixXd& sigma_s() const { return sigma_s_; }
  const MatrixXd& sigma_t() const { return sigma_t_; }
  const SpdFactor& spatial_factor() const { return chol_s_; }
  const SpdFactor& temporal_factor() const { return chol_t_; }
  Index n_space() const { return sigma_s_.rows(); }
  Index n_time() const { return sigma_t_.rows(); }
  Index dim() const { return n_space() * n_time(); }

  /// Materialized Sigma_s (x) Sigma_t. Only for small instances.
  MatrixXd dense() const;

 private:
  MatrixXd sigma_s_;
  MatrixXd sigma_t_;
  SpdFactor chol_s_;
  SpdFactor chol_t_;
};

/// (Sigma_s (x) Sigma_t)^{-1} v, computed as vec(Sigma_t^{-1} M Sigma_s^{-1}).
FieldVector kron_inverse_apply(const KroneckerCov& cov, const FieldVector& v);

/// h + vec(Sigma_t (Sigma_t' + Sigma_t)^{-1} (Z - H)) with z and the prior
/// mean given on the same set of locations. z must be complete.
FieldVector conditional_mean(const FieldVector& prior_mean, const MatrixXd& sigma_t,
                             const MatrixXd& sigma_t_obs, const FieldVector& z);

/// Conditional mean of the full field given complete data z on a subset of
/// locations. On the observed locations this is the temporal-only update
/// above; other locations receive it through the spatial kriging weights
/// Sigma_s[:, obs] Sigma_s[obs, obs]^{-1}.
FieldVector conditional_mean(const FieldVector& prior_mean, const MatrixXd& sigma_s,
                             const std::vector<Index>& observed_locations, const MatrixXd& sigma_t,
                             const MatrixXd& sigma_t_obs, const FieldVector& z_observed);

/// Covariance of z | c when T | c ~ N(h, sigma_eps) and z | T ~ N(T, sigma_e)
/// with a shared spatial factor: Sigma_s (x) (Sigma_t + Sigma_t').
KroneckerCov marginal_obs_cov(const KroneckerCov& sigma_eps, const KroneckerCov& sigma_e);

enum class ImputeMode { kMean, kSample };

struct ImputeOptions {
  ImputeMode mode = ImputeMode::kMean;
  std::uint64_t seed = 0;
};

/// Completes the time series at every observed location of `obs`: missing
/// entries take the conditional mean (or a seeded conditional draw) of the
/// Gaussian z | c with mean prior_mean and covariance `marginal`.
///
/// `prior_mean` is on the full grid; `marginal` is over the observed
/// locations (in ascending location order). The result is a field over those
/// locations with observed entries copied unchanged.
FieldVector impute_missing(const ObservationSet& obs, const FieldVector& prior_mean,
                           const KroneckerCov& marginal, const ImputeOptions& options = {});

/// Restricts a full-grid field to the given locations, preserving order.
FieldVector restrict_locations(const FieldVector& field, const std::vector<Index>& locations);

/// Rows/columns of a square matrix at the given indices.
MatrixXd submatrix(const MatrixXd& a, const std::vector<Index>& rows, const std::vector<Index>& cols);

}  // namespace hmbound::kron
