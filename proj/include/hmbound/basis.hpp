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

#include <memory>
#include <string>
#include <vector>

#include "hmbound/field.hpp"
#include "hmbound/kron_gauss.hpp"

namespace hmbound::basis {

/// A positive-definite weight (variance) matrix W, applied through W^{-1}.
class Weight {
 public:
  static Weight identity();
  static Weight diagonal(VectorXd variances, std::string ref = "diagonal");
  static Weight dense(const MatrixXd& cov, std::string ref = "dense");
  static Weight kronecker(kron::KroneckerCov cov, std::string ref = "kronecker");

  /// W^{-1} b, column by column.
  MatrixXd solve(const MatrixXd& b) const;
  VectorXd solve(const VectorXd& b) const;
  /// Dimension, or -1 for the identity (any dimension).
  Index dim() const;
  const std::string& ref() const { return ref_; }
  bool is_identity() const { return kind_ == Kind::kIdentity; }

 private:
  enum class Kind { kIdentity, kDiagonal, kDense, kKronecker };
  Weight(Kind kind, std::string ref) : kind_(kind), ref_(std::move(ref)) {}
  void require_dim(Index rows) const;

  Kind kind_;
  std::string ref_;
  VectorXd diag_;
  std::shared_ptr<const kron::SpdFactor> dense_;
  std::shared_ptr<const kron::KroneckerCov> kron_;
};

/// An l x n ensemble centred by its mean: column i is f(x_i) - mu.
class CentredEnsemble {
 public:
  CentredEnsemble() = default;
  static CentredEnsemble from_raw(const MatrixXd& raw, std::vector<std::string> member_ids = {});
  /// Wraps already centred data; throws if the columns do not sum to zero.
  CentredEnsemble(MatrixXd centred, VectorXd mean, std::vector<std::string> member_ids = {});

  const MatrixXd& data() const { return data_; }
  const VectorXd& mean() const { return mean_; }
  const std::vector<std::string>& member_ids() const { return ids_; }
  Index rows() const { return data_.rows(); }
  Index members() const { return data_.cols(); }
  /// Hash of the centred data; ties derived quantities to their source.
  const std::string& hash() const { return hash_; }

  CentredEnsemble restrict_rows(const std::vector<Index>& rows) const;

 private:
  MatrixXd data_;
  VectorXd mean_;
  std::vector<std::string> ids_;
  std::string hash_;
};

struct Basis {
  /// l x q basis vectors (Gamma, or Gamma * Lambda when rotated).
  MatrixXd vectors;
  /// Singular values of the source ensemble, descending.
  VectorXd singular_values;
  /// r x q combination matrix Lambda of the source SVD directions.
  MatrixXd rotation;
  /// n x r matrix U Sigma^{-1}: SVD direction k is data * member_weights.col(k).
  MatrixXd member_weights;
  std::string weight_ref = "identity";
  std::string source_hash;

  Index rank() const { return vectors.cols(); }
  Index length() const { return vectors.rows(); }
  /// First q columns.
  Basis truncated(Index q) const;
  /// n x q matrix U Sigma^{-1} Lambda: vectors = centred ensemble * lift_matrix.
  MatrixXd lift_matrix() const { return member_weights * rotation; }
  /// Fraction of total ensemble variance along each basis column.
  VectorXd explained_fraction() const;
};

/// Right singular vectors of F_mu^T (i.e. left singular vectors of the
/// centred data), descending singular value, nonzero directions only.
Basis svd_basis(const CentredEnsemble& ens);

/// W-weighted least-squares coefficients (B^T W^{-1} B)^{-1} B^T W^{-1} (f - mu).
VectorXd project(const Basis& basis, const Weight& w, const VectorXd& field, const VectorXd& mean);
VectorXd project(const MatrixXd& vectors, const Weight& w, const VectorXd& centred_field);

/// B c + mu.
VectorXd reconstruct(const Basis& basis, const VectorXd& coeffs, const VectorXd& mean);

/// R_W(B, z) = (z - r(z))^T W^{-1} (z - r(z)), r(z) the W-projection onto span(B).
double recon_error(const MatrixXd& b, const Weight& w, const VectorXd& z);
inline double recon_error(const Basis& b, const Weight& w, const VectorXd& z) {
  return recon_error(b.vectors, w, z);
}

/// Smallest q whose leading singular values capture `fraction` of the variance.
Index components_for_fraction(const Basis& basis, double fraction = 0.95);

inline constexpr double kDefaultMinSignal = 0.001;

struct RotationOptions {
  Index n_keep = 1;
  /// Minimum fraction of total ensemble variance on each retained vector.
  double min_signal = kDefaultMinSignal;
  /// When non-empty, the objective compares z against these rows of the
  /// basis only (z and W are then over the selected rows).
  std::vector<Index> rows;
};

/// Result of a rotation plus diagnostics.
struct Rotation {
  Basis basis;
  double error = 0.0;            ///< R_W of the rotated basis at rank n_keep
  double truncated_error = 0.0;  ///< R_W of the truncated SVD basis at rank n_keep
  bool fell_back_to_svd = false;
};

/// Greedy sequential rotation of an SVD basis towards a target z.
///
/// Each new vector is the combination of SVD directions, W-orthogonal to the
/// accepted ones on the compared rows, that most reduces R_W of z subject to
/// carrying at least `min_signal` of the ensemble variance. Once z is fully
/// explained, remaining vectors maximize ensemble variance instead. The
/// result is never worse than the truncated SVD basis at equal rank.
Rotation optimal_rotation(const Basis& full, const Weight& w, const VectorXd& z, const RotationOptions& options);

}  // namespace hmbound::basis
