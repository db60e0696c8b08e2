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

#include "hmbound/kron_gauss.hpp"

#include <cmath>
#include <random>

namespace hmbound::kron {

void require_symmetric(const MatrixXd& a, const std::string& name, double rel_tol) {
  if (a.rows() != a.cols()) {
    throw ShapeError(name + " is " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     ", expected square");
  }
  if (a.size() == 0) throw ShapeError(name + " is empty");
  if (!a.allFinite()) throw DataError(name + " has non-finite entries");
  const double scale = std::max(a.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > rel_tol * scale) {
    throw ModelAssumptionError(name + " is not symmetric");
  }
}

SpdFactor::SpdFactor(const MatrixXd& a, std::string name, double nugget_scale) {
  require_symmetric(a, name);
  llt_.compute(a);
  if (llt_.info() == Eigen::Success) return;
  const double mean_diag = a.diagonal().mean();
  if (nugget_scale > 0 && mean_diag > 0) {
    nugget_ = nugget_scale * mean_diag;
    llt_.compute(a + nugget_ * MatrixXd::Identity(a.rows(), a.cols()));
    if (llt_.info() == Eigen::Success) return;
  }
  throw FactorizationError(name + " is not positive definite (Cholesky failed" +
                           std::string(nugget_ > 0 ? " after nugget" : "") + ")");
}

double SpdFactor::log_det() const {
  return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
}

KroneckerCov::KroneckerCov(MatrixXd sigma_s, MatrixXd sigma_t, double nugget_scale)
    : sigma_s_(std::move(sigma_s)),
      sigma_t_(std::move(sigma_t)),
      chol_s_(sigma_s_, "sigma_s", nugget_scale),
      chol_t_(sigma_t_, "sigma_t", nugget_scale) {}

MatrixXd KroneckerCov::dense() const {
  const Index ns = n_space(), nt = n_time();
  MatrixXd out(ns * nt, ns * nt);
  for (Index i = 0; i < ns; ++i) {
    for (Index j = 0; j < ns; ++j) out.block(i * nt, j * nt, nt, nt) = sigma_s_(i, j) * sigma_t_;
  }
  return out;
}

FieldVector kron_inverse_apply(const KroneckerCov& cov, const FieldVector& v) {
  v.require_shape(cov.n_space(), cov.n_time(), "kron_inverse_apply");
  const MatrixXd left = cov.temporal_factor().solve(MatrixXd(v.as_matrix()));
  const MatrixXd both = cov.spatial_factor().solve(MatrixXd(left.transpose())).transpose();
  return FieldVector::from_matrix(both);
}

namespace {

MatrixXd temporal_gain(const MatrixXd& sigma_t, const MatrixXd& sigma_t_obs, const MatrixXd& innovation) {
  if (sigma_t.rows() != sigma_t_obs.rows() || sigma_t.cols() != sigma_t_obs.cols()) {
    throw ShapeError("conditional_mean: sigma_t and sigma_t' differ in shape");
  }
  if (innovation.rows() != sigma_t.rows()) throw ShapeError("conditional_mean: time axis mismatch");
  SpdFactor total(sigma_t + sigma_t_obs, "sigma_t + sigma_t'");
  return sigma_t * total.solve(innovation);
}

void require_complete(const FieldVector& z) {
  if (!z.all_finite()) {
    throw PreconditionError("conditional_mean: z has missing entries; impute first");
  }
}

}  // namespace

FieldVector conditional_mean(const FieldVector& prior_mean, const MatrixXd& sigma_t,
                             const MatrixXd& sigma_t_obs, const FieldVector& z) {
  z.require_shape(prior_mean.n_space(), prior_mean.n_time(), "conditional_mean");
  require_complete(z);
  const MatrixXd gain = temporal_gain(sigma_t, sigma_t_obs, z.as_matrix() - prior_mean.as_matrix());
  FieldVector out = prior_mean;
  out.as_matrix() += gain;
  return out;
}

FieldVector conditional_mean(const FieldVector& prior_mean, const MatrixXd& sigma_s,
                             const std::vector<Index>& observed_locations, const MatrixXd& sigma_t,
                             const MatrixXd& sigma_t_obs, const FieldVector& z_observed) {
  const Index n_obs = static_cast<Index>(observed_locations.size());
  z_observed.require_shape(n_obs, prior_mean.n_time(), "conditional_mean");
  if (sigma_s.rows() != prior_mean.n_space() || sigma_s.cols() != prior_mean.n_space()) {
    throw ShapeError("conditional_mean: sigma_s does not match the field's locations");
  }
  FieldVector out = prior_mean;
  if (n_obs == 0) return out;
  require_complete(z_observed);
  const FieldVector prior_obs = restrict_locations(prior_mean, observed_locations);
  const MatrixXd gain =
      temporal_gain(sigma_t, sigma_t_obs, z_observed.as_matrix() - prior_obs.as_matrix());

  // Kriging weights from observed to all locations; identity on observed ones.
  std::vector<Index> all(static_cast<std::size_t>(prior_mean.n_space()));
  for (Index i = 0; i < prior_mean.n_space(); ++i) all[i] = i;
  SpdFactor s_oo(submatrix(sigma_s, observed_locations, observed_locations), "sigma_s[obs,obs]");
  MatrixXd weights = s_oo.solve(submatrix(sigma_s, observed_locations, all));
  for (Index k = 0; k < n_obs; ++k) {
    weights.col(observed_locations[k]).setZero();
    weights(k, observed_locations[k]) = 1.0;
  }
  out.as_matrix() += gain * weights;
  return out;
}

KroneckerCov marginal_obs_cov(const KroneckerCov& sigma_eps, const KroneckerCov& sigma_e) {
  const MatrixXd& a = sigma_eps.sigma_s();
  const MatrixXd& b = sigma_e.sigma_s();
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ModelAssumptionError("marginal_obs_cov: spatial factors differ in dimension");
  }
  const double scale = std::max({a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), 1e-300});
  if ((a - b).cwiseAbs().maxCoeff() > 1e-12 * scale) {
    throw ModelAssumptionError("marginal_obs_cov: the model requires a common spatial factor");
  }
  if (sigma_eps.n_time() != sigma_e.n_time()) {
    throw ShapeError("marginal_obs_cov: temporal factors differ in dimension");
  }
  return KroneckerCov(a, sigma_eps.sigma_t() + sigma_e.sigma_t());
}

FieldVector restrict_locations(const FieldVector& field, const std::vector<Index>& locations) {
  FieldVector out(static_cast<Index>(locations.size()), field.n_time());
  for (std::size_t k = 0; k < locations.size(); ++k) {
    const Index s = locations[k];
    if (s < 0 || s >= field.n_space()) throw ShapeError("restrict_locations: location out of range");
    out.as_matrix().col(static_cast<Index>(k)) = field.as_matrix().col(s);
  }
  return out;
}

MatrixXd submatrix(const MatrixXd& a, const std::vector<Index>& rows, const std::vector<Index>& cols) {
  MatrixXd out(rows.size(), cols.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) out(i, j) = a(rows[i], cols[j]);
  }
  return out;
}

FieldVector impute_missing(const ObservationSet& obs, const FieldVector& prior_mean,
                           const KroneckerCov& marginal, const ImputeOptions& options) {
  const auto& locations = obs.locations();
  const Index n_loc = static_cast<Index>(locations.size());
  const Index nt = obs.n_time();
  prior_mean.require_shape(obs.n_space(), nt, "impute_missing prior_mean");
  if (marginal.n_space() != n_loc || marginal.n_time() != nt) {
    throw ShapeError("impute_missing: marginal covariance is " + std::to_string(marginal.n_space()) + "x" +
                     std::to_string(marginal.n_time()) + ", expected " + std::to_string(n_loc) + "x" +
                     std::to_string(nt));
  }
  for (Index loc : locations) {
    if (obs.count_at(loc) == 0) {
      throw DataError("impute_missing: location " + std::to_string(loc) +
                      " has no observed entries; exclude it before imputing");
    }
  }

  FieldVector out = restrict_locations(prior_mean, locations);
  const MatrixXd values = obs.value_matrix();
  std::vector<Index> observed, missing;
  for (Index k = 0; k < n_loc; ++k) {
    for (Index t = 0; t < nt; ++t) {
      const Index i = FieldVector::flat_index(k, t, nt);
      if (std::isnan(values(t, k))) {
        missing.push_back(i);
      } else {
        observed.push_back(i);
        out.values()[i] = values(t, k);
      }
    }
  }
  if (missing.empty()) return out;

  auto cov = [&](Index i, Index j) {
    return marginal.sigma_s()(i / nt, j / nt) * marginal.sigma_t()(i % nt, j % nt);
  };
  const Index no = static_cast<Index>(observed.size()), nm = static_cast<Index>(missing.size());
  MatrixXd c_oo(no, no), c_mo(nm, no);
  VectorXd innovation(no);
  for (Index a = 0; a < no; ++a) {
    innovation[a] = out.values()[observed[a]] - prior_mean.values()[locations[observed[a] / nt] * nt + observed[a] % nt];
    for (Index b = 0; b < no; ++b) c_oo(a, b) = cov(observed[a], observed[b]);
  }
  for (Index a = 0; a < nm; ++a) {
    for (Index b = 0; b < no; ++b) c_mo(a, b) = cov(missing[a], observed[b]);
  }
  SpdFactor f_oo(c_oo, "marginal[obs,obs]");
  VectorXd cond_mean = c_mo * f_oo.solve(innovation);

  if (options.mode == ImputeMode::kSample) {
    MatrixXd c_mm(nm, nm);
    for (Index a = 0; a < nm; ++a) {
      for (Index b = 0; b < nm; ++b) c_mm(a, b) = cov(missing[a], missing[b]);
    }
    MatrixXd cond_cov = c_mm - c_mo * f_oo.solve(MatrixXd(c_mo.transpose()));
    cond_cov = 0.5 * (cond_cov + cond_cov.transpose()).eval();
    SpdFactor f_mm(cond_cov, "conditional covariance of missing entries", 1e-10);
    std::mt19937_64 rng(options.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    VectorXd eps(nm);
    for (Index a = 0; a < nm; ++a) eps[a] = normal(rng);
    cond_mean += f_mm.llt().matrixL() * eps;
  }
  for (Index a = 0; a < nm; ++a) {
    const Index i = missing[a];
    out.values()[i] = prior_mean.values()[locations[i / nt] * nt + i % nt] + cond_mean[a];
  }
  return out;
}

}  // namespace hmbound::kron
