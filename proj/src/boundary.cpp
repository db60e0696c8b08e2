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

#include "hmbound/boundary.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <Eigen/QR>
#include <nlohmann/json.hpp>

#include "hmbound/io.hpp"

namespace hmbound::bc {

std::vector<Period> make_periods(Index n_time, const std::vector<Index>& boundaries) {
  if (n_time < 1) throw ShapeError("make_periods: empty time axis");
  std::vector<Period> out;
  Index begin = 0;
  for (Index b : boundaries) {
    if (b <= begin || b >= n_time) throw ConfigError("period boundaries must increase strictly inside the time axis");
    out.push_back({begin, b});
    begin = b;
  }
  out.push_back({begin, n_time});
  return out;
}

// ------------------------------------------------------- BoundaryModel

BoundaryModel::BoundaryModel(FieldVector mu, std::vector<Period> periods)
    : mu_(std::move(mu)), periods_(std::move(periods)) {
  if (!mu_.all_finite()) throw DataError("boundary mean has non-finite entries");
  Index next = 0;
  for (const Period& p : periods_) {
    if (p.begin != next || p.end <= p.begin) throw ConfigError("periods must partition the time axis in order");
    next = p.end;
  }
  if (next != mu_.n_time()) throw ConfigError("periods must cover the whole time axis");
}

void BoundaryModel::add_temporal(TemporalVector v) {
  if (v.period < 0 || v.period >= static_cast<Index>(periods_.size())) throw IndexError("temporal vector period out of range");
  v.field.require_shape(n_space(), n_time(), "temporal vector");
  const Period& p = periods_[static_cast<std::size_t>(v.period)];
  for (Index s = 0; s < n_space(); ++s) {
    for (Index t = 0; t < n_time(); ++t) {
      if (!p.contains(t) && v.field(s, t) != 0.0) throw ConsistencyError("temporal vector is nonzero outside its period");
    }
  }
  // Temporal coefficients precede spatial ones; keep bounds aligned.
  bounds_.insert(bounds_.begin() + n_temporal(), CoefficientBounds{});
  temporal_.push_back(std::move(v));
}

void BoundaryModel::add_spatial(SpatialVector v) {
  if (v.period < 0 || v.period >= static_cast<Index>(periods_.size())) throw IndexError("spatial vector period out of range");
  if (v.pattern.size() != n_space()) {
    throw ShapeError("spatial pattern has length " + std::to_string(v.pattern.size()) + ", expected " +
                     std::to_string(n_space()));
  }
  if (!v.pattern.allFinite()) throw DataError("spatial pattern has non-finite entries");
  bounds_.push_back(CoefficientBounds{});
  spatial_.push_back(std::move(v));
}

void BoundaryModel::set_bounds(std::vector<CoefficientBounds> bounds) {
  if (static_cast<Index>(bounds.size()) != n_coefficients()) throw ShapeError("bounds length does not match coefficients");
  for (const auto& b : bounds) {
    if (!(b.lo <= b.hi)) throw ConfigError("coefficient bound has lo > hi");
  }
  bounds_ = std::move(bounds);
}

std::vector<std::string> BoundaryModel::coefficient_names() const {
  std::vector<std::string> out;
  std::vector<int> count(periods_.size(), 0);
  for (const auto& v : temporal_) {
    out.push_back("ct_" + std::to_string(++count[static_cast<std::size_t>(v.period)]) + "_" + std::to_string(v.period + 1));
  }
  std::fill(count.begin(), count.end(), 0);
  for (const auto& v : spatial_) {
    out.push_back("cs_" + std::to_string(++count[static_cast<std::size_t>(v.period)]) + "_" + std::to_string(v.period + 1));
  }
  return out;
}

MatrixXd BoundaryModel::basis_matrix() const {
  MatrixXd b = MatrixXd::Zero(mu_.size(), n_coefficients());
  Index j = 0;
  for (const auto& v : temporal_) b.col(j++) = v.field.values();
  for (const auto& v : spatial_) {
    const Period& p = periods_[static_cast<std::size_t>(v.period)];
    for (Index s = 0; s < n_space(); ++s) {
      for (Index t = p.begin; t < p.end; ++t) b(FieldVector::flat_index(s, t, n_time()), j) = v.pattern[s];
    }
    ++j;
  }
  return b;
}

MatrixXd BoundaryModel::basis_rows(const std::vector<Index>& flat_rows) const {
  MatrixXd out = MatrixXd::Zero(static_cast<Index>(flat_rows.size()), n_coefficients());
  const Index nt = n_time();
  for (std::size_t i = 0; i < flat_rows.size(); ++i) {
    const Index row = flat_rows[i];
    if (row < 0 || row >= mu_.size()) throw IndexError("basis_rows: row out of range");
    const Index s = row / nt, t = row % nt;
    Index j = 0;
    for (const auto& v : temporal_) out(static_cast<Index>(i), j++) = v.field.values()[row];
    for (const auto& v : spatial_) {
      if (periods_[static_cast<std::size_t>(v.period)].contains(t)) out(static_cast<Index>(i), j) = v.pattern[s];
      ++j;
    }
  }
  return out;
}

void BoundaryModel::check_invariants() const {
  Index next = 0;
  for (const Period& p : periods_) {
    if (p.begin != next || p.end <= p.begin) throw ConsistencyError("periods do not partition the time axis");
    next = p.end;
  }
  if (next != n_time()) throw ConsistencyError("periods do not cover the time axis");
  if (static_cast<Index>(bounds_.size()) != n_coefficients()) throw ConsistencyError("bounds misaligned with coefficients");
  if (lift_matrices.size() != lift_periods.size()) throw ConsistencyError("lift matrices misaligned with periods");
}

// --------------------------------------------------------- covariances

MatrixXd grid_coordinates(Index nx, Index ny) {
  MatrixXd c(nx * ny, 2);
  for (Index j = 0; j < ny; ++j) {
    for (Index i = 0; i < nx; ++i) {
      c(j * nx + i, 0) = static_cast<double>(i);
      c(j * nx + i, 1) = static_cast<double>(j);
    }
  }
  return c;
}

MatrixXd squared_exponential_space_cov(const MatrixXd& coords, double length_scale, double jitter) {
  if (!(length_scale > 0)) throw ConfigError("spatial length-scale must be positive");
  const Index n = coords.rows();
  MatrixXd k(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) {
      const double d2 = (coords.row(i) - coords.row(j)).squaredNorm();
      k(i, j) = k(j, i) = std::exp(-0.5 * d2 / (length_scale * length_scale));
    }
  }
  k.diagonal().array() += jitter;
  return k;
}

MatrixXd squared_exponential_time_cov(Index n_time, double length_scale, double variance, double jitter) {
  if (!(length_scale > 0) || !(variance > 0)) throw ConfigError("temporal length-scale and variance must be positive");
  MatrixXd k(n_time, n_time);
  for (Index i = 0; i < n_time; ++i) {
    for (Index j = 0; j < n_time; ++j) {
      const double d = static_cast<double>(i - j);
      k(i, j) = variance * std::exp(-0.5 * d * d / (length_scale * length_scale));
    }
  }
  k.diagonal().array() += jitter * variance;
  return k;
}

basis::Weight temporal_fit_weight(const MatrixXd& sigma_s, const std::vector<Index>& anchors,
                                  const MatrixXd& sigma_t_obs, const Period& period) {
  std::vector<Index> times;
  for (Index t = period.begin; t < period.end; ++t) times.push_back(t);
  return basis::Weight::kronecker(
      kron::KroneckerCov(kron::submatrix(sigma_s, anchors, anchors), kron::submatrix(sigma_t_obs, times, times)),
      "sigma_s[anchors] x sigma_t_obs[period]");
}

// ------------------------------------------------------------- fitting

std::vector<Index> field_rows(const std::vector<Index>& locations, const Period& period, Index n_time) {
  std::vector<Index> rows;
  rows.reserve(locations.size() * static_cast<std::size_t>(period.length()));
  for (Index s : locations) {
    for (Index t = period.begin; t < period.end; ++t) rows.push_back(FieldVector::flat_index(s, t, n_time));
  }
  return rows;
}

namespace {

std::vector<Index> all_locations(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

void check_ensemble_grid(const basis::CentredEnsemble& ens, Index n_space, Index n_time) {
  if (ens.rows() != n_space * n_time) {
    throw ShapeError("ensemble has " + std::to_string(ens.rows()) + " rows, grid needs " +
                     std::to_string(n_space * n_time));
  }
}

MatrixXd period_rows(const std::vector<FieldVector>& vectors, Index n_space, Index n_time, const Period& period) {
  if (period.begin < 0 || period.end > n_time || period.length() < 1) throw IndexError("period out of range");
  const std::vector<Index> rows = field_rows(all_locations(n_space), period, n_time);
  MatrixXd tp(static_cast<Index>(rows.size()), static_cast<Index>(vectors.size()));
  for (std::size_t j = 0; j < vectors.size(); ++j) {
    vectors[j].require_shape(n_space, n_time, "temporal vector");
    for (std::size_t i = 0; i < rows.size(); ++i) tp(static_cast<Index>(i), static_cast<Index>(j)) = vectors[j].values()[rows[i]];
  }
  return tp;
}

}  // namespace

MatrixXd temporal_residuals(const basis::CentredEnsemble& ens, Index n_space, Index n_time,
                            const std::vector<FieldVector>& temporal_vectors, const Period& period) {
  check_ensemble_grid(ens, n_space, n_time);
  const MatrixXd tp = period_rows(temporal_vectors, n_space, n_time, period);
  const std::vector<Index> rows = field_rows(all_locations(n_space), period, n_time);
  MatrixXd y(static_cast<Index>(rows.size()), ens.members());
  for (std::size_t i = 0; i < rows.size(); ++i) y.row(static_cast<Index>(i)) = ens.data().row(rows[i]);
  if (tp.cols() > 0) {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(tp);
    if (qr.rank() < tp.cols()) throw RankError("temporal vectors are linearly dependent within the period");
    y -= tp * qr.solve(y).eval();
  }
  return y;
}

TemporalFit fit_temporal_basis(const basis::CentredEnsemble& ens, Index n_space, Index n_time,
                               const FieldVector& anchor_series, const std::vector<Index>& anchors,
                               const Period& period, Index period_index, const basis::Weight& w, Index n_t,
                               double min_signal) {
  check_ensemble_grid(ens, n_space, n_time);
  if (anchors.empty()) throw DataError("temporal fit needs at least one anchor location");
  anchor_series.require_shape(static_cast<Index>(anchors.size()), n_time, "anchor series");
  if (period.begin < 0 || period.end > n_time || period.length() < 1) throw IndexError("temporal fit period out of range");
  if (n_t >= ens.members()) {
    throw RankError("n_t=" + std::to_string(n_t) + " must be below the ensemble size " + std::to_string(ens.members()));
  }

  const std::vector<Index> rows = field_rows(anchors, period, n_time);
  const basis::CentredEnsemble sub = ens.restrict_rows(rows);
  const basis::Basis full = basis::svd_basis(sub);
  if (n_t > full.rank()) {
    throw RankError("n_t=" + std::to_string(n_t) + " exceeds the anchor ensemble rank " + std::to_string(full.rank()));
  }
  VectorXd z(static_cast<Index>(rows.size()));
  Index i = 0;
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    for (Index t = period.begin; t < period.end; ++t, ++i) {
      const double v = anchor_series(static_cast<Index>(k), t);
      if (!std::isfinite(v)) throw PreconditionError("anchor series is incomplete; impute first");
      z[i] = v - sub.mean()[i];
    }
  }

  basis::RotationOptions ro;
  ro.n_keep = n_t;
  ro.min_signal = min_signal;
  const basis::Rotation rot = basis::optimal_rotation(full, w, z, ro);

  TemporalFit fit;
  fit.period = period_index;
  fit.anchors = anchors;
  fit.anchor_basis = rot.basis;
  fit.lift_matrix = rot.basis.lift_matrix();
  fit.ensemble_hash = ens.hash();
  fit.error = rot.error;
  fit.truncated_error = rot.truncated_error;
  return fit;
}

TemporalFit fit_temporal_basis(const basis::CentredEnsemble& ens, Index n_space, Index n_time,
                               const ObservationSet& obs, const std::vector<Index>& anchors,
                               const Period& period, Index period_index, const basis::Weight& w, Index n_t,
                               double min_signal) {
  FieldVector series(static_cast<Index>(anchors.size()), n_time,
                     VectorXd::Constant(static_cast<Index>(anchors.size()) * n_time, std::nan("")));
  std::vector<Index> seen(anchors.size(), 0);
  for (const Observation& e : obs.entries()) {
    const auto it = std::find(anchors.begin(), anchors.end(), e.location);
    if (it == anchors.end()) continue;
    const auto k = static_cast<std::size_t>(it - anchors.begin());
    series.values()[FieldVector::flat_index(static_cast<Index>(k), e.time, n_time)] = e.value;
    ++seen[k];
  }
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    if (seen[k] == 0) throw DataError("anchor location " + std::to_string(anchors[k]) + " has no observations");
  }
  for (std::size_t k = 0; k < anchors.size(); ++k) {
    for (Index t = period.begin; t < period.end; ++t) {
      if (!std::isfinite(series(static_cast<Index>(k), t))) {
        throw PreconditionError("anchor location " + std::to_string(anchors[k]) + " is missing time " +
                                std::to_string(t) + "; impute first");
      }
    }
  }
  return fit_temporal_basis(ens, n_space, n_time, series, anchors, period, period_index, w, n_t, min_signal);
}

std::vector<FieldVector> lift_temporal(const basis::CentredEnsemble& ens, Index n_space, Index n_time,
                                       const TemporalFit& fit, const std::vector<Period>& periods) {
  check_ensemble_grid(ens, n_space, n_time);
  if (fit.ensemble_hash != ens.hash()) {
    throw ConsistencyError("lift matrix was fitted to ensemble " + fit.ensemble_hash + ", got " + ens.hash());
  }
  if (fit.lift_matrix.rows() != ens.members()) throw ShapeError("lift matrix rows do not match ensemble size");
  if (fit.period < 0 || fit.period >= static_cast<Index>(periods.size())) throw IndexError("lift period out of range");
  const Period& p = periods[static_cast<std::size_t>(fit.period)];
  const MatrixXd lifted = ens.data() * fit.lift_matrix;
  std::vector<FieldVector> out;
  for (Index j = 0; j < lifted.cols(); ++j) {
    FieldVector f(n_space, n_time);
    for (Index s = 0; s < n_space; ++s) {
      for (Index t = p.begin; t < p.end; ++t) {
        const Index row = FieldVector::flat_index(s, t, n_time);
        f.values()[row] = lifted(row, j);
      }
    }
    out.push_back(std::move(f));
  }
  return out;
}

SpatialFit fit_spatial_basis(const basis::CentredEnsemble& ens, Index n_space, Index n_time,
                             const ObservationSet& obs, const std::vector<FieldVector>& temporal_vectors,
                             const Period& period, Index period_index, const std::vector<Index>& fit_locations,
                             const std::vector<Index>& holdout_locations, const MatrixXd& sigma_s, Index n_s,
                             double min_signal) {
  check_ensemble_grid(ens, n_space, n_time);
  if (sigma_s.rows() != n_space || sigma_s.cols() != n_space) throw ShapeError("sigma_s does not match the grid");
  if (fit_locations.empty()) throw DataError("spatial fit needs at least one fit location");
  {
    std::set<Index> f(fit_locations.begin(), fit_locations.end());
    for (Index h : holdout_locations) {
      if (f.count(h)) throw PreconditionError("fit and holdout locations overlap at " + std::to_string(h));
    }
  }
  const Index nt = n_time;
  const Index len = period.length();
  const Index q = static_cast<Index>(temporal_vectors.size());
  const MatrixXd tp = period_rows(temporal_vectors, n_space, n_time, period);
  const MatrixXd resid = temporal_residuals(ens, n_space, n_time, temporal_vectors, period);
  MatrixXd ebar_t(n_space, ens.members());
  for (Index s = 0; s < n_space; ++s) ebar_t.row(s) = resid.middleRows(s * len, len).colwise().mean();

  // Observation residuals: weighted least squares over observed entries.
  std::vector<Observation> entries;
  for (const Observation& e : obs.entries()) {
    if (period.contains(e.time)) entries.push_back(e);
  }
  const Index m = static_cast<Index>(entries.size());
  if (m == 0) throw DataError("no observations fall inside the period");
  double var_floor = 0.0;
  for (const auto& e : entries) var_floor += e.error_sd * e.error_sd;
  var_floor = std::max(1e-12 * var_floor / static_cast<double>(m), 1e-300);
  MatrixXd a(m, q);
  VectorXd yz(m), wts(m);
  for (Index i = 0; i < m; ++i) {
    const Observation& e = entries[static_cast<std::size_t>(i)];
    const Index row = FieldVector::flat_index(e.location, e.time, nt);
    const Index prow = e.location * len + (e.time - period.begin);
    if (q > 0) a.row(i) = tp.row(prow);
    yz[i] = e.value - ens.mean()[row];
    wts[i] = 1.0 / std::max(e.error_sd * e.error_sd, var_floor);
  }
  VectorXd ez = yz;
  if (q > 0) {
    const VectorXd sw = wts.cwiseSqrt();
    Eigen::ColPivHouseholderQR<MatrixXd> qr(sw.asDiagonal() * a);
    if (qr.rank() < q) throw RankError("observations do not determine the temporal coefficients within the period");
    ez -= a * qr.solve(sw.asDiagonal() * yz);
  }
  VectorXd ebar_z = VectorXd::Zero(n_space);
  VectorXd counts = VectorXd::Zero(n_space);
  for (Index i = 0; i < m; ++i) {
    ebar_z[entries[static_cast<std::size_t>(i)].location] += ez[i];
    counts[entries[static_cast<std::size_t>(i)].location] += 1.0;
  }
  for (Index s = 0; s < n_space; ++s) ebar_z[s] = counts[s] > 0 ? ebar_z[s] / counts[s] : std::nan("");
  auto require_observed = [&](const std::vector<Index>& locs, const char* what) {
    for (Index s : locs) {
      if (s < 0 || s >= n_space) throw IndexError(std::string(what) + " location out of range");
      if (counts[s] == 0) {
        throw DataError(std::string(what) + " location " + std::to_string(s) + " has no observations in the period");
      }
    }
  };
  require_observed(fit_locations, "fit");
  require_observed(holdout_locations, "holdout");

  const basis::CentredEnsemble res_ens(ebar_t, VectorXd::Zero(n_space), ens.member_ids());
  const basis::Basis full = basis::svd_basis(res_ens);
  if (n_s > full.rank()) {
    throw RankError("n_s=" + std::to_string(n_s) + " exceeds the residual rank " + std::to_string(full.rank()));
  }
  VectorXd zf(static_cast<Index>(fit_locations.size()));
  for (std::size_t i = 0; i < fit_locations.size(); ++i) zf[static_cast<Index>(i)] = ebar_z[fit_locations[i]];
  const basis::Weight wf =
      basis::Weight::dense(kron::submatrix(sigma_s, fit_locations, fit_locations), "sigma_s[fit]");

  SpatialFit out;
  out.period = period_index;
  out.fit_locations = fit_locations;
  out.holdout_locations = holdout_locations;
  out.obs_residual = ebar_z;
  if (n_s == 0) {
    out.fit_error = zf.dot(wf.solve(zf));
  } else {
    basis::RotationOptions ro;
    ro.n_keep = n_s;
    ro.min_signal = min_signal;
    ro.rows = fit_locations;
    const basis::Rotation rot = basis::optimal_rotation(full, wf, zf, ro);
    out.residual_basis = rot.basis;
    out.fit_error = rot.error;
    for (Index j = 0; j < n_s; ++j) out.patterns.push_back(rot.basis.vectors.col(j));
  }
  if (!holdout_locations.empty()) {
    VectorXd zh(static_cast<Index>(holdout_locations.size()));
    MatrixXd bh(zh.size(), n_s);
    for (std::size_t i = 0; i < holdout_locations.size(); ++i) {
      zh[static_cast<Index>(i)] = ebar_z[holdout_locations[i]];
      for (Index j = 0; j < n_s; ++j) bh(static_cast<Index>(i), j) = out.patterns[static_cast<std::size_t>(j)][holdout_locations[i]];
    }
    const basis::Weight wh =
        basis::Weight::dense(kron::submatrix(sigma_s, holdout_locations, holdout_locations), "sigma_s[holdout]");
    out.holdout_error_before = zh.dot(wh.solve(zh));
    out.holdout_error = out.holdout_error_before;
    if (n_s > 0) {
      try {
        out.holdout_error = basis::recon_error(bh, wh, zh);
      } catch (const RankError&) {
        // Patterns collinear on the holdout set; report the unexplained error.
      }
    }
  }
  return out;
}

BoundaryModel append_expert_vector(const BoundaryModel& model, const VectorXd& pattern, Index period,
                                   CoefficientBounds bounds) {
  BoundaryModel out = model;
  out.add_spatial(SpatialVector{period, pattern, true});
  auto b = out.bounds();
  b.back() = bounds;
  out.set_bounds(std::move(b));
  return out;
}

// ---------------------------------------------------------- evaluation

FieldVector mean_function(const BoundaryModel& model, const VectorXd& c, BoundsMode mode,
                          std::vector<std::string>* warnings) {
  if (c.size() != model.n_coefficients()) {
    throw ShapeError("coefficient vector has length " + std::to_string(c.size()) + ", model has " +
                     std::to_string(model.n_coefficients()));
  }
  if (!c.allFinite()) throw DataError("coefficient vector has non-finite entries");
  const auto& bounds = model.bounds();
  const auto names = model.coefficient_names();
  for (Index j = 0; j < c.size(); ++j) {
    const auto& b = bounds[static_cast<std::size_t>(j)];
    if (c[j] < b.lo || c[j] > b.hi) {
      const std::string msg = "coefficient " + names[static_cast<std::size_t>(j)] + "=" + io::format_double(c[j]) +
                              " outside [" + io::format_double(b.lo) + ", " + io::format_double(b.hi) + "]";
      if (mode == BoundsMode::kStrict) throw BoundsError(msg);
      if (warnings) warnings->push_back(msg);
    }
  }
  FieldVector h = model.mu();
  const Index nt = model.n_time();
  Index j = 0;
  for (const auto& v : model.temporal()) h.values() += c[j++] * v.field.values();
  for (const auto& v : model.spatial()) {
    const Period& p = model.periods()[static_cast<std::size_t>(v.period)];
    for (Index s = 0; s < model.n_space(); ++s) {
      for (Index t = p.begin; t < p.end; ++t) h.values()[FieldVector::flat_index(s, t, nt)] += c[j] * v.pattern[s];
    }
    ++j;
  }
  return h;
}

FieldVector smooth_transition(const FieldVector& field, Index window, Index first, Index last) {
  if (window < 1 || window % 2 == 0) throw ConfigError("smoothing window must be a positive odd integer");
  if (first > last) throw IndexError("smoothing range is empty");
  const Index half = window / 2;
  if (first - half < 0 || last + half >= field.n_time()) {
    throw IndexError("smoothing window reaches outside the time axis");
  }
  FieldVector out = field;
  for (Index s = 0; s < field.n_space(); ++s) {
    for (Index t = first; t <= last; ++t) {
      double acc = 0.0;
      for (Index i = t - half; i <= t + half; ++i) acc += field(s, i);
      out.values()[FieldVector::flat_index(s, t, field.n_time())] = acc / static_cast<double>(window);
    }
  }
  return out;
}

std::optional<SmoothingSpec> default_smoothing(const BoundaryModel& model) {
  if (model.periods().size() < 3) return std::nullopt;
  const Index b = model.periods()[2].begin;
  SmoothingSpec s;
  s.window = 7;
  s.first = b - 2;
  s.last = b + 3;
  if (s.first - 3 < 0 || s.last + 3 >= model.n_time()) return std::nullopt;
  return s;
}

FieldVector generate_boundary(const BoundaryModel& model, const VectorXd& c, const ObservationSet& obs,
                              const GenerationInputs& in) {
  FieldVector h = mean_function(model, c, in.bounds_mode);
  if (in.smoothing) h = smooth_transition(h, in.smoothing->window, in.smoothing->first, in.smoothing->last);
  if (obs.empty()) return h;
  if (obs.n_space() != model.n_space() || obs.n_time() != model.n_time()) {
    throw ShapeError("observation grid does not match the boundary model");
  }
  const ObservationSet o = obs.restricted_to_observed();
  const std::vector<Index> locs = o.observed_locations();
  const MatrixXd ss = kron::submatrix(in.sigma_s, locs, locs);
  const kron::KroneckerCov marginal(ss, in.sigma_t + in.sigma_t_obs);
  const FieldVector z = kron::impute_missing(o, h, marginal, in.impute);
  return kron::conditional_mean(h, in.sigma_s, locs, in.sigma_t, in.sigma_t_obs, z);
}

std::vector<FieldVector> monthly_disaggregate(const BoundaryModel& model, const MatrixXd& annual,
                                              const std::vector<MatrixXd>& monthly, const VectorXd& c) {
  if (monthly.size() != 12) throw ShapeError("monthly disaggregation needs 12 monthly ensembles");
  const Index l = model.mu().size();
  if (annual.rows() != l) throw ShapeError("annual ensemble does not match the grid");
  MatrixXd avg = MatrixXd::Zero(annual.rows(), annual.cols());
  for (const MatrixXd& m : monthly) {
    if (m.rows() != annual.rows() || m.cols() != annual.cols()) throw ShapeError("monthly ensemble shape mismatch");
    avg += m;
  }
  avg /= 12.0;
  const double scale = std::max(annual.cwiseAbs().maxCoeff(), 1.0);
  if ((avg - annual).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw ConsistencyError("monthly ensembles do not average to the annual ensemble");
  }
  const basis::CentredEnsemble ann = basis::CentredEnsemble::from_raw(annual);
  if (!model.ensemble_hash.empty() && ann.hash() != model.ensemble_hash) {
    throw ConsistencyError("annual ensemble does not match the model's source ensemble");
  }
  if ((ann.mean() - model.mu().values()).cwiseAbs().maxCoeff() > 1e-8 * scale) {
    throw ConsistencyError("annual ensemble mean does not match the model mean");
  }
  // Spatial part and the model's own temporal part are shared by all months.
  const FieldVector h = mean_function(model, c, BoundsMode::kWarn);
  VectorXd annual_temporal = VectorXd::Zero(l);
  for (Index j = 0; j < model.n_temporal(); ++j) annual_temporal += c[j] * model.temporal()[static_cast<std::size_t>(j)].field.values();
  const VectorXd shared = h.values() - model.mu().values() - annual_temporal;

  std::vector<FieldVector> out;
  for (const MatrixXd& m : monthly) {
    const VectorXd mu_m = m.rowwise().mean();
    const MatrixXd centred = m.colwise() - mu_m;
    VectorXd v = mu_m + shared;
    Index j = 0;
    for (std::size_t k = 0; k < model.lift_matrices.size(); ++k) {
      const Period& p = model.periods()[static_cast<std::size_t>(model.lift_periods[k])];
      const MatrixXd lifted = centred * model.lift_matrices[k];
      for (Index col = 0; col < lifted.cols(); ++col, ++j) {
        for (Index s = 0; s < model.n_space(); ++s) {
          for (Index t = p.begin; t < p.end; ++t) {
            const Index row = FieldVector::flat_index(s, t, model.n_time());
            v[row] += c[j] * lifted(row, col);
          }
        }
      }
    }
    if (j != model.n_temporal()) throw ConsistencyError("lift matrices do not cover the temporal vectors");
    out.emplace_back(model.n_space(), model.n_time(), std::move(v));
  }
  return out;
}

// ------------------------------------------------------- serialization

void save_model(const BoundaryModel& model, const std::filesystem::path& dir) {
  model.check_invariants();
  nlohmann::json j;
  j["format"] = "hmbound.boundary.v1";
  j["n_space"] = model.n_space();
  j["n_time"] = model.n_time();
  j["ensemble_hash"] = model.ensemble_hash;
  for (const Period& p : model.periods()) j["periods"].push_back({p.begin, p.end});
  for (const auto& b : model.bounds()) j["bounds"].push_back({b.lo, b.hi});
  j["coefficients"] = model.coefficient_names();

  MatrixXd mu_t(model.mu().size(), 1 + model.n_temporal());
  mu_t.col(0) = model.mu().values();
  for (Index k = 0; k < model.n_temporal(); ++k) {
    mu_t.col(1 + k) = model.temporal()[static_cast<std::size_t>(k)].field.values();
    j["temporal_periods"].push_back(model.temporal()[static_cast<std::size_t>(k)].period);
  }
  io::write_matrix_csv(dir / "mean_and_temporal.csv", mu_t);
  MatrixXd sp(model.n_space(), model.n_spatial());
  for (Index k = 0; k < model.n_spatial(); ++k) {
    const auto& v = model.spatial()[static_cast<std::size_t>(k)];
    sp.col(k) = v.pattern;
    j["spatial"].push_back({{"period", v.period}, {"expert", v.expert}});
  }
  io::write_matrix_csv(dir / "spatial.csv", sp);
  for (std::size_t k = 0; k < model.lift_matrices.size(); ++k) {
    const std::string name = "lift_" + std::to_string(model.lift_periods[k] + 1) + ".csv";
    io::write_matrix_csv(dir / name, model.lift_matrices[k]);
    j["lifts"].push_back({{"period", model.lift_periods[k]}, {"file", name}});
  }
  io::write_text(dir / "model.json", j.dump(2) + "\n");
}

BoundaryModel load_model(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_text(dir / "model.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("boundary model manifest: " + std::string(e.what()));
  }
  try {
    if (j.at("format") != "hmbound.boundary.v1") throw DataError("unknown boundary model format");
    const Index ns = j.at("n_space").get<Index>();
    const Index nt = j.at("n_time").get<Index>();
    std::vector<Period> periods;
    for (const auto& p : j.at("periods")) periods.push_back({p.at(0).get<Index>(), p.at(1).get<Index>()});
    const MatrixXd mu_t = io::read_matrix_csv(dir / "mean_and_temporal.csv");
    if (mu_t.rows() != ns * nt || mu_t.cols() < 1) throw ShapeError("mean_and_temporal.csv shape mismatch");
    BoundaryModel m(FieldVector(ns, nt, mu_t.col(0)), periods);
    const auto tp = j.value("temporal_periods", nlohmann::json::array());
    if (static_cast<Index>(tp.size()) != mu_t.cols() - 1) throw ShapeError("temporal vector count mismatch");
    for (Index k = 0; k + 1 < mu_t.cols(); ++k) {
      m.add_temporal({tp.at(static_cast<std::size_t>(k)).get<Index>(), FieldVector(ns, nt, mu_t.col(1 + k))});
    }
    const MatrixXd sp = io::read_matrix_csv(dir / "spatial.csv");
    const auto sj = j.value("spatial", nlohmann::json::array());
    if (static_cast<Index>(sj.size()) != sp.cols()) throw ShapeError("spatial vector count mismatch");
    for (Index k = 0; k < sp.cols(); ++k) {
      const auto& e = sj.at(static_cast<std::size_t>(k));
      m.add_spatial({e.at("period").get<Index>(), sp.col(k), e.at("expert").get<bool>()});
    }
    std::vector<CoefficientBounds> bounds;
    for (const auto& b : j.at("bounds")) bounds.push_back({b.at(0).get<double>(), b.at(1).get<double>()});
    m.set_bounds(bounds);
    m.ensemble_hash = j.value("ensemble_hash", "");
    for (const auto& l : j.value("lifts", nlohmann::json::array())) {
      m.lift_periods.push_back(l.at("period").get<Index>());
      m.lift_matrices.push_back(io::read_matrix_csv(dir / l.at("file").get<std::string>()));
    }
    m.check_invariants();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("boundary model manifest: " + std::string(e.what()));
  }
}

}  // namespace hmbound::bc
