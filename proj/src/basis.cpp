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

#include "hmbound/basis.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

#include "hmbound/io.hpp"
#include "hmbound/optim.hpp"

namespace hmbound::basis {

// ---------------------------------------------------------------- Weight

Weight Weight::identity() { return Weight(Kind::kIdentity, "identity"); }

Weight Weight::diagonal(VectorXd variances, std::string ref) {
  if (variances.size() == 0 || !variances.allFinite() || (variances.array() <= 0).any()) {
    throw FactorizationError("diagonal weight must have positive finite variances");
  }
  Weight w(Kind::kDiagonal, std::move(ref));
  w.diag_ = std::move(variances);
  return w;
}

Weight Weight::dense(const MatrixXd& cov, std::string ref) {
  Weight w(Kind::kDense, ref);
  w.dense_ = std::make_shared<const kron::SpdFactor>(cov, "weight " + ref);
  return w;
}

Weight Weight::kronecker(kron::KroneckerCov cov, std::string ref) {
  Weight w(Kind::kKronecker, std::move(ref));
  w.kron_ = std::make_shared<const kron::KroneckerCov>(std::move(cov));
  return w;
}

Index Weight::dim() const {
  switch (kind_) {
    case Kind::kIdentity: return -1;
    case Kind::kDiagonal: return diag_.size();
    case Kind::kDense: return dense_->dim();
    case Kind::kKronecker: return kron_->dim();
  }
  return -1;
}

void Weight::require_dim(Index rows) const {
  const Index d = dim();
  if (d >= 0 && d != rows) {
    throw ShapeError("weight " + ref_ + " has dimension " + std::to_string(d) + ", applied to " +
                     std::to_string(rows) + " rows");
  }
}

MatrixXd Weight::solve(const MatrixXd& b) const {
  require_dim(b.rows());
  switch (kind_) {
    case Kind::kIdentity: return b;
    case Kind::kDiagonal: return diag_.cwiseInverse().asDiagonal() * b;
    case Kind::kDense: return dense_->solve(b);
    case Kind::kKronecker: {
      MatrixXd out(b.rows(), b.cols());
      for (Index j = 0; j < b.cols(); ++j) {
        FieldVector col(kron_->n_space(), kron_->n_time(), b.col(j));
        out.col(j) = kron::kron_inverse_apply(*kron_, col).values();
      }
      return out;
    }
  }
  return b;
}

VectorXd Weight::solve(const VectorXd& b) const { return solve(MatrixXd(b)).col(0); }

// ------------------------------------------------------- CentredEnsemble

CentredEnsemble CentredEnsemble::from_raw(const MatrixXd& raw, std::vector<std::string> member_ids) {
  if (raw.cols() < 2) {
    throw EnsembleSizeError("ensemble has " + std::to_string(raw.cols()) + " members, need at least 2");
  }
  if (!raw.allFinite()) throw DataError("ensemble has non-finite entries");
  VectorXd mean = raw.rowwise().mean();
  MatrixXd centred = raw.colwise() - mean;
  return CentredEnsemble(std::move(centred), std::move(mean), std::move(member_ids));
}

CentredEnsemble::CentredEnsemble(MatrixXd centred, VectorXd mean, std::vector<std::string> member_ids)
    : data_(std::move(centred)), mean_(std::move(mean)), ids_(std::move(member_ids)) {
  if (data_.cols() < 2) {
    throw EnsembleSizeError("ensemble has " + std::to_string(data_.cols()) + " members, need at least 2");
  }
  if (mean_.size() != data_.rows()) throw ShapeError("ensemble mean length does not match rows");
  if (ids_.empty()) {
    for (Index i = 0; i < data_.cols(); ++i) ids_.push_back("member" + std::to_string(i));
  }
  if (static_cast<Index>(ids_.size()) != data_.cols()) throw ShapeError("member id count does not match columns");
  const double scale = std::max({mean_.norm(), data_.cwiseAbs().maxCoeff(), 1.0});
  if (data_.rowwise().sum().cwiseAbs().maxCoeff() > 1e-8 * scale * static_cast<double>(data_.cols())) {
    throw DataError("ensemble data is not centred");
  }
  hash_ = io::content_hash(data_);
}

CentredEnsemble CentredEnsemble::restrict_rows(const std::vector<Index>& rows) const {
  MatrixXd d(rows.size(), data_.cols());
  VectorXd m(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= data_.rows()) throw ShapeError("restrict_rows: row out of range");
    d.row(static_cast<Index>(i)) = data_.row(rows[i]);
    m[static_cast<Index>(i)] = mean_[rows[i]];
  }
  return CentredEnsemble(std::move(d), std::move(m), ids_);
}

// ----------------------------------------------------------------- Basis

Basis Basis::truncated(Index q) const {
  if (q < 0 || q > rank()) {
    throw RankError("cannot truncate a rank-" + std::to_string(rank()) + " basis to " + std::to_string(q));
  }
  Basis out = *this;
  out.vectors = vectors.leftCols(q);
  out.rotation = rotation.leftCols(q);
  return out;
}

VectorXd Basis::explained_fraction() const {
  const VectorXd var = singular_values.array().square();
  const double total = var.sum();
  VectorXd out(rank());
  for (Index j = 0; j < rank(); ++j) {
    const VectorXd& a = rotation.col(j);
    out[j] = a.cwiseProduct(a).dot(var) / (a.squaredNorm() * total);
  }
  return out;
}

Basis svd_basis(const CentredEnsemble& ens) {
  Eigen::BDCSVD<MatrixXd> svd(ens.data(), Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& sv = svd.singularValues();
  const double tol = 1e-10 * std::max(sv.size() > 0 ? sv[0] : 0.0, 1e-300);
  Index r = 0;
  while (r < sv.size() && sv[r] > tol && sv[r] > 0) ++r;
  if (r == 0) throw RankError("ensemble has no variability");
  Basis b;
  b.vectors = svd.matrixU().leftCols(r);
  // Fix the sign so the largest-magnitude entry of each vector is positive.
  MatrixXd u = svd.matrixV().leftCols(r);
  for (Index k = 0; k < r; ++k) {
    Index imax = 0;
    b.vectors.col(k).cwiseAbs().maxCoeff(&imax);
    if (b.vectors(imax, k) < 0) {
      b.vectors.col(k) *= -1.0;
      u.col(k) *= -1.0;
    }
  }
  b.singular_values = sv.head(r);
  b.rotation = MatrixXd::Identity(r, r);
  b.member_weights = u * b.singular_values.cwiseInverse().asDiagonal();
  b.source_hash = ens.hash();
  return b;
}

namespace {

// Cholesky of B^T W^{-1} B with a rank check.
Eigen::LLT<MatrixXd> gram_factor(const MatrixXd& b, const MatrixXd& winv_b) {
  MatrixXd g = b.transpose() * winv_b;
  g = 0.5 * (g + g.transpose()).eval();
  Eigen::LLT<MatrixXd> llt(g);
  const double scale = std::max(g.diagonal().cwiseAbs().maxCoeff(), 1e-300);
  if (llt.info() != Eigen::Success || g.rows() == 0 ||
      llt.matrixLLT().diagonal().array().square().minCoeff() < 1e-13 * scale) {
    throw RankError("basis is rank deficient under the weight (B^T W^-1 B singular)");
  }
  return llt;
}

}  // namespace

VectorXd project(const MatrixXd& vectors, const Weight& w, const VectorXd& centred_field) {
  if (centred_field.size() != vectors.rows()) {
    throw ShapeError("project: field length " + std::to_string(centred_field.size()) + " != basis length " +
                     std::to_string(vectors.rows()));
  }
  const MatrixXd winv_b = w.solve(vectors);
  auto llt = gram_factor(vectors, winv_b);
  return llt.solve(winv_b.transpose() * centred_field);
}

VectorXd project(const Basis& basis, const Weight& w, const VectorXd& field, const VectorXd& mean) {
  if (mean.size() != field.size()) throw ShapeError("project: mean and field lengths differ");
  return project(basis.vectors, w, field - mean);
}

VectorXd reconstruct(const Basis& basis, const VectorXd& coeffs, const VectorXd& mean) {
  if (coeffs.size() != basis.rank()) {
    throw ShapeError("reconstruct: " + std::to_string(coeffs.size()) + " coefficients for a rank-" +
                     std::to_string(basis.rank()) + " basis");
  }
  if (mean.size() != basis.length()) throw ShapeError("reconstruct: mean length does not match basis");
  return basis.vectors * coeffs + mean;
}

double recon_error(const MatrixXd& b, const Weight& w, const VectorXd& z) {
  if (z.size() != b.rows()) throw ShapeError("recon_error: z length does not match basis");
  VectorXd resid = z;
  if (b.cols() > 0) resid -= b * project(b, w, z);
  return std::max(0.0, resid.dot(w.solve(resid)));
}

Index components_for_fraction(const Basis& basis, double fraction) {
  const VectorXd var = basis.singular_values.array().square();
  const double total = var.sum();
  double acc = 0.0;
  for (Index k = 0; k < var.size(); ++k) {
    acc += var[k];
    if (acc >= fraction * total * (1 - 1e-12)) return k + 1;
  }
  return var.size();
}

// ------------------------------------------------------------- Rotation

namespace {

// Orthonormal basis of the null space of `c` (rows are constraints) in R^r.
MatrixXd null_space(const MatrixXd& c, Index r) {
  if (c.rows() == 0) return MatrixXd::Identity(r, r);
  Eigen::JacobiSVD<MatrixXd> svd(c, Eigen::ComputeFullV);
  const VectorXd& sv = svd.singularValues();
  const double tol = 1e-10 * std::max(sv.size() ? sv[0] : 0.0, 1e-300);
  Index rank = 0;
  while (rank < sv.size() && sv[rank] > tol) ++rank;
  return svd.matrixV().rightCols(r - rank);
}

struct StepProblem {
  MatrixXd dirs;    // r x k orthonormal search directions
  MatrixXd gram;    // k x k, positive definite
  VectorXd target;  // k
  MatrixXd signal;  // k x k, signal(y) = y^T signal y / y^T y
};

double gain(const StepProblem& p, const VectorXd& y) {
  const double num = y.dot(p.target);
  const double den = y.dot(p.gram * y);
  return den > 0 ? num * num / den : 0.0;
}

double signal(const StepProblem& p, const VectorXd& y) {
  const double n2 = y.squaredNorm();
  return n2 > 0 ? y.dot(p.signal * y) / n2 : 0.0;
}

// Maximizes the gain subject to signal(y) >= tau, starting from the
// unconstrained optimum y_opt (infeasible) and the max-signal direction y_sig
// (feasible).
VectorXd constrained_step(const StepProblem& p, VectorXd y_opt, const VectorXd& y_sig, double tau) {
  y_opt.normalize();
  if (y_opt.dot(y_sig) < 0) y_opt = -y_opt;
  // Bisection along the segment for the boundary point closest to y_opt.
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 100; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (signal(p, (1 - mid) * y_opt + mid * y_sig) >= tau) hi = mid; else lo = mid;
  }
  VectorXd best = ((1 - hi) * y_opt + hi * y_sig).normalized();
  double best_gain = gain(p, best);

  const double scale = std::max(p.target.dot(p.gram.ldlt().solve(p.target)), 1e-300);
  double penalty = 1e3;
  VectorXd start = best;
  for (int attempt = 0; attempt < 4; ++attempt) {
    auto objective = [&](const VectorXd& y) {
      const double short_by = std::max(0.0, tau - signal(p, y));
      return -gain(p, y) / scale + penalty * short_by * short_by / (tau * tau) + 1e-3 * (y.squaredNorm() - 1) * (y.squaredNorm() - 1);
    };
    auto res = optim::nelder_mead(objective, start, 0.1, 4000, 1e-10);
    VectorXd y = res.x.normalized();
    if (signal(p, y) >= tau) {
      if (gain(p, y) > best_gain) {
        best = y;
        best_gain = gain(p, y);
      }
      break;
    }
    // Rejected: tighten the penalty and reoptimize from where we ended.
    penalty *= 10.0;
    start = y;
  }
  return best;
}

}  // namespace

Rotation optimal_rotation(const Basis& full, const Weight& w, const VectorXd& z, const RotationOptions& options) {
  const Index r = full.rank();
  if (full.rotation.rows() != r || !full.rotation.isIdentity(1e-12)) {
    throw PreconditionError("optimal_rotation expects an unrotated SVD basis");
  }
  if (options.n_keep < 1 || options.n_keep > r) {
    throw RankError("optimal_rotation: n_keep=" + std::to_string(options.n_keep) + " outside [1, " +
                    std::to_string(r) + "]");
  }
  if (!(options.min_signal > 0 && options.min_signal <= 1)) {
    throw ConfigError("optimal_rotation: min_signal must lie in (0, 1]");
  }

  const MatrixXd a_rows = options.rows.empty() ? full.vectors : [&] {
    MatrixXd m(options.rows.size(), r);
    for (std::size_t i = 0; i < options.rows.size(); ++i) m.row(static_cast<Index>(i)) = full.vectors.row(options.rows[i]);
    return m;
  }();
  if (z.size() != a_rows.rows()) throw ShapeError("optimal_rotation: z length does not match compared rows");

  const VectorXd var = full.singular_values.array().square();
  const MatrixXd d = (var / var.sum()).asDiagonal();
  const MatrixXd winv_a = w.solve(a_rows);
  const MatrixXd g_full = 0.5 * (a_rows.transpose() * winv_a + (a_rows.transpose() * winv_a).transpose());

  MatrixXd accepted(r, 0);  // columns: combination weights a_j
  for (Index step = 0; step < options.n_keep; ++step) {
    // Directions W-orthogonal (on the compared rows) to the accepted vectors.
    const MatrixXd constraints = (a_rows * accepted).transpose() * winv_a;
    MatrixXd n = null_space(constraints, r);
    // Drop directions invisible on the compared rows.
    Eigen::SelfAdjointEigenSolver<MatrixXd> eg(n.transpose() * g_full * n);
    const double gmax = eg.eigenvalues().size() ? eg.eigenvalues().maxCoeff() : 0.0;
    std::vector<Index> keep;
    for (Index i = 0; i < eg.eigenvalues().size(); ++i) {
      if (eg.eigenvalues()[i] > 1e-10 * std::max(gmax, 1e-300)) keep.push_back(i);
    }
    if (keep.empty()) {
      throw RankError("optimal_rotation: no direction left for vector " + std::to_string(step + 1) +
                      " on the compared rows");
    }
    MatrixXd vsel(n.cols(), keep.size());
    for (std::size_t i = 0; i < keep.size(); ++i) vsel.col(static_cast<Index>(i)) = eg.eigenvectors().col(keep[i]);
    StepProblem p;
    p.dirs = n * vsel;
    p.gram = p.dirs.transpose() * g_full * p.dirs;
    p.gram = 0.5 * (p.gram + p.gram.transpose()).eval();
    p.signal = p.dirs.transpose() * d * p.dirs;

    const MatrixXd b_acc = a_rows * accepted;
    VectorXd resid = z;
    if (b_acc.cols() > 0) resid -= b_acc * project(b_acc, w, z);
    p.target = p.dirs.transpose() * (winv_a.transpose() * resid);

    Eigen::SelfAdjointEigenSolver<MatrixXd> es(p.signal);
    const Index top = es.eigenvalues().size() - 1;
    const double max_signal = es.eigenvalues()[top];
    const VectorXd y_sig = es.eigenvectors().col(top);
    if (max_signal < options.min_signal) {
      throw ConstraintError("optimal_rotation: vector " + std::to_string(step + 1) + " needs signal " +
                            std::to_string(options.min_signal) + " but at most " + std::to_string(max_signal) +
                            " of the ensemble variance is attainable");
    }

    const double current = std::max(resid.dot(w.solve(resid)), 0.0);
    const VectorXd y_opt = p.gram.ldlt().solve(p.target);
    const double best_gain = p.target.dot(y_opt);
    VectorXd y;
    if (!(best_gain > 1e-12 * std::max(current, 1e-300)) || current <= 1e-300) {
      y = y_sig;
    } else if (signal(p, y_opt) >= options.min_signal) {
      y = y_opt.normalized();
    } else {
      y = constrained_step(p, y_opt, y_sig, options.min_signal);
    }
    VectorXd a = p.dirs * y;
    a.normalize();
    // Deterministic sign: positive projection on z when it matters, else on
    // the leading SVD direction.
    const double orient = (a_rows * a).dot(w.solve(z));
    if (orient < 0 || (orient == 0 && a[0] < 0)) a = -a;
    accepted.conservativeResize(r, accepted.cols() + 1);
    accepted.col(accepted.cols() - 1) = a;
  }

  Rotation out;
  out.basis = full;
  out.basis.rotation = accepted;
  out.basis.vectors = full.vectors * accepted;
  out.basis.weight_ref = w.ref();
  out.error = recon_error(a_rows * accepted, w, z);
  try {
    out.truncated_error = recon_error(a_rows.leftCols(options.n_keep), w, z);
  } catch (const RankError&) {
    out.truncated_error = std::numeric_limits<double>::infinity();
  }
  const double tol = 1e-10 * std::max(z.dot(w.solve(z)), 1e-300);
  if (out.error > out.truncated_error + tol) {
    out.basis = full.truncated(options.n_keep);
    out.basis.weight_ref = w.ref();
    out.error = out.truncated_error;
    out.fell_back_to_svd = true;
  }
  return out;
}

}  // namespace hmbound::basis
