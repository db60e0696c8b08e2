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

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hmbound/basis.hpp"
#include "hmbound/field.hpp"
#include "hmbound/kron_gauss.hpp"
#include "hmbound/observations.hpp"

namespace hmbound::bc {

/// Half-open range [begin, end) of time indices.
struct Period {
  Index begin = 0;
  Index end = 0;
  Index length() const { return end - begin; }
  bool contains(Index t) const { return t >= begin && t < end; }
};

/// Splits [0, n_time) into `count` contiguous periods with the given
/// interior boundaries (empty: equal lengths).
std::vector<Period> make_periods(Index n_time, const std::vector<Index>& boundaries);

struct TemporalVector {
  Index period = 0;
  FieldVector field;  ///< zero outside its period
};

struct SpatialVector {
  Index period = 0;
  VectorXd pattern;  ///< one value per location, repeated at every time of the period
  bool expert = false;
};

struct CoefficientBounds {
  double lo = -1.0;
  double hi = 1.0;
};

/// Boundary-condition mean model h(c) = mu + sum c^t_j t_j + sum c^s_j s_j.
///
/// Coefficients are ordered temporal first (in insertion order, i.e. by
/// period then index) and spatial second.
class BoundaryModel {
 public:
  BoundaryModel() = default;
  BoundaryModel(FieldVector mu, std::vector<Period> periods);

  Index n_space() const { return mu_.n_space(); }
  Index n_time() const { return mu_.n_time(); }
  const FieldVector& mu() const { return mu_; }
  const std::vector<Period>& periods() const { return periods_; }
  const std::vector<TemporalVector>& temporal() const { return temporal_; }
  const std::vector<SpatialVector>& spatial() const { return spatial_; }
  Index n_temporal() const { return static_cast<Index>(temporal_.size()); }
  Index n_spatial() const { return static_cast<Index>(spatial_.size()); }
  Index n_coefficients() const { return n_temporal() + n_spatial(); }
  std::vector<std::string> coefficient_names() const;

  void add_temporal(TemporalVector v);
  void add_spatial(SpatialVector v);

  const std::vector<CoefficientBounds>& bounds() const { return bounds_; }
  void set_bounds(std::vector<CoefficientBounds> bounds);

  /// Per-period lift matrices U Sigma^{-1} Lambda and the source ensemble hash.
  std::vector<MatrixXd> lift_matrices;
  std::vector<Index> lift_periods;
  std::string ensemble_hash;

  /// Full (n_space*n_time) x n_coefficients basis matrix, coefficient order.
  MatrixXd basis_matrix() const;
  /// Rows of basis_matrix() at the given flat indices.
  MatrixXd basis_rows(const std::vector<Index>& flat_rows) const;

  void check_invariants() const;

 private:
  FieldVector mu_;
  std::vector<Period> periods_;
  std::vector<TemporalVector> temporal_;
  std::vector<SpatialVector> spatial_;
  std::vector<CoefficientBounds> bounds_;
};

// -------------------------------------------------------- covariances

MatrixXd grid_coordinates(Index nx, Index ny);
/// exp(-d^2 / (2 l^2)) correlation over site coordinates (rows), plus jitter.
MatrixXd squared_exponential_space_cov(const MatrixXd& coords, double length_scale, double jitter = 1e-6);
/// variance * exp(-(i-j)^2 / (2 l^2)) over time indices, plus jitter.
MatrixXd squared_exponential_time_cov(Index n_time, double length_scale = 5.0, double variance = 1.0,
                                      double jitter = 1e-8);

/// W = [Sigma_s]_{anchors} (x) [Sigma_t']_{period} for the temporal fit.
basis::Weight temporal_fit_weight(const MatrixXd& sigma_s, const std::vector<Index>& anchors,
                                  const MatrixXd& sigma_t_obs, const Period& period);

// -------------------------------------------------------- fitting

/// Flat field rows (location-major) of `locations` x `period`.
std::vector<Index> field_rows(const std::vector<Index>& locations, const Period& period, Index n_time);

struct TemporalFit {
  Index period = 0;
  std::vector<Index> anchors;
  basis::Basis anchor_basis;  ///< rotated anchor basis, n_t columns
  MatrixXd lift_matrix;       ///< n x n_t
  std::string ensemble_hash;
  double error = 0.0;            ///< R_W at the anchors, rotated basis
  double truncated_error = 0.0;  ///< R_W at the anchors, truncated SVD basis
};

/// Temporal basis for one period from the ensemble at the anchor locations.
/// `anchor_series` holds complete series at the anchors (n_space = anchors,
/// full time axis); impute missing entries before calling.
TemporalFit fit_temporal_basis(const basis::CentredEnsemble& ens, Index n_space, Index n_time,
                               const FieldVector& anchor_series, const std::vector<Index>& anchors,
                               const Period& period, Index period_index, const basis::Weight& w, Index n_t,
                               double min_signal = basis::kDefaultMinSignal);

/// Same, taking raw observations that must be complete at the anchors within the period.
TemporalFit fit_temporal_basis(const basis::CentredEnsemble& ens, Index n_space, Index n_time,
                               const ObservationSet& obs, const std::vector<Index>& anchors,
                               const Period& period, Index period_index, const basis::Weight& w, Index n_t,
                               double min_signal = basis::kDefaultMinSignal);

/// Full spatio-temporal temporal vectors t_j = [T_mu (U Sigma^{-1} Lambda)]_{.j}.
std::vector<FieldVector> lift_temporal(const basis::CentredEnsemble& ens, Index n_space, Index n_time,
                                       const TemporalFit& fit, const std::vector<Period>& periods);

/// Ensemble residuals within `period` (rows as field_rows over all
/// locations) after unweighted least-squares removal of the temporal vectors.
MatrixXd temporal_residuals(const basis::CentredEnsemble& ens, Index n_space, Index n_time,
                            const std::vector<FieldVector>& temporal_vectors, const Period& period);

struct SpatialFit {
  Index period = 0;
  std::vector<VectorXd> patterns;
  basis::Basis residual_basis;  ///< rotated basis of the time-averaged residuals
  std::vector<Index> fit_locations;
  std::vector<Index> holdout_locations;
  double fit_error = 0.0;
  double holdout_error_before = 0.0;  ///< holdout R_W with no spatial vectors
  double holdout_error = 0.0;         ///< holdout R_W with the spatial vectors
  VectorXd obs_residual;              ///< time-averaged observation residual (NaN where unobserved)
};

/// Spatial basis for one period from the residuals left after the period's
/// temporal vectors. Ensemble members are projected onto the temporal
/// vectors unweighted; the observations by error-variance-weighted least
/// squares over their observed entries.
SpatialFit fit_spatial_basis(const basis::CentredEnsemble& ens, Index n_space, Index n_time,
                             const ObservationSet& obs, const std::vector<FieldVector>& temporal_vectors,
                             const Period& period, Index period_index, const std::vector<Index>& fit_locations,
                             const std::vector<Index>& holdout_locations, const MatrixXd& sigma_s, Index n_s,
                             double min_signal = basis::kDefaultMinSignal);

/// Appends 1 (x) pattern for `period` with its own coefficient and bounds.
BoundaryModel append_expert_vector(const BoundaryModel& model, const VectorXd& pattern, Index period,
                                   CoefficientBounds bounds = {});

// -------------------------------------------------------- evaluation

enum class BoundsMode { kStrict, kWarn };

/// h(c). Out-of-bounds coefficients raise BoundsError in strict mode; in
/// warn mode a message is appended to `warnings` when given.
FieldVector mean_function(const BoundaryModel& model, const VectorXd& c, BoundsMode mode = BoundsMode::kStrict,
                          std::vector<std::string>* warnings = nullptr);

/// Centred moving average of width `window` over [first, last] (inclusive),
/// computed from the unsmoothed field.
FieldVector smooth_transition(const FieldVector& field, Index window, Index first, Index last);

struct SmoothingSpec {
  Index window = 7;
  Index first = 0;
  Index last = -1;
};

/// Default smoothing: width 7 over [b-2, b+3] where b starts the third period.
std::optional<SmoothingSpec> default_smoothing(const BoundaryModel& model);

struct GenerationInputs {
  MatrixXd sigma_s;      ///< spatial correlation, n_space x n_space
  MatrixXd sigma_t;      ///< temporal covariance of T | c
  MatrixXd sigma_t_obs;  ///< temporal covariance of the observation error
  std::optional<SmoothingSpec> smoothing;
  kron::ImputeOptions impute;
  BoundsMode bounds_mode = BoundsMode::kStrict;
};

/// E[T | z, c]: mean function, optional smoothing, imputation of the
/// observed locations' missing entries, then the Kronecker conditional update.
FieldVector generate_boundary(const BoundaryModel& model, const VectorXd& c, const ObservationSet& obs,
                              const GenerationInputs& inputs);

/// Monthly fields whose average over the 12 months equals h(c).
/// `annual` and `monthly` are raw (uncentred) ensembles; the monthly
/// ensembles must average to the annual one.
std::vector<FieldVector> monthly_disaggregate(const BoundaryModel& model, const MatrixXd& annual,
                                              const std::vector<MatrixXd>& monthly, const VectorXd& c);

// -------------------------------------------------------- serialization

void save_model(const BoundaryModel& model, const std::filesystem::path& dir);
BoundaryModel load_model(const std::filesystem::path& dir);

}  // namespace hmbound::bc
