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

#include <Eigen/Dense>

#include "hmbound/error.hpp"

namespace hmbound {

using Index = Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// A spatio-temporal field stored as vec(M), where M is the
/// n_time x n_space matrix whose column s is the time series at location s.
/// Under this layout Cov(vec(M)) = Sigma_s (x) Sigma_t.
class FieldVector {
 public:
  FieldVector() = default;
  FieldVector(Index n_space, Index n_time)
      : n_space_(n_space), n_time_(n_time), values_(VectorXd::Zero(n_space * n_time)) {}
  FieldVector(Index n_space, Index n_time, VectorXd values)
      : n_space_(n_space), n_time_(n_time), values_(std::move(values)) {
    if (values_.size() != n_space_ * n_time_) {
      throw ShapeError("FieldVector: " + std::to_string(values_.size()) +
                       " values do not match " + std::to_string(n_space_) + " locations x " +
                       std::to_string(n_time_) + " times");
    }
  }
  /// Builds from the n_time x n_space matrix form.
  static FieldVector from_matrix(const MatrixXd& m) {
    return FieldVector(m.cols(), m.rows(), Eigen::Map<const VectorXd>(m.data(), m.size()));
  }

  static constexpr Index flat_index(Index location, Index time, Index n_time) {
    return location * n_time + time;
  }

  Index n_space() const { return n_space_; }
  Index n_time() const { return n_time_; }
  Index size() const { return values_.size(); }

  double operator()(Index location, Index time) const {
    return values_[flat_index(location, time, n_time_)];
  }
  double& operator()(Index location, Index time) {
    return values_[flat_index(location, time, n_time_)];
  }

  const VectorXd& values() const { return values_; }
  VectorXd& values() { return values_; }

  Eigen::Map<const MatrixXd> as_matrix() const {
    return Eigen::Map<const MatrixXd>(values_.data(), n_time_, n_space_);
  }
  Eigen::Map<MatrixXd> as_matrix() { return Eigen::Map<MatrixXd>(values_.data(), n_time_, n_space_); }

  bool all_finite() const { return values_.allFinite(); }

  void require_shape(Index n_space, Index n_time, const char* what) const {
    if (n_space_ != n_space || n_time_ != n_time) {
      throw ShapeError(std::string(what) + ": expected " + std::to_string(n_space) + "x" +
                       std::to_string(n_time) + " field, got " + std::to_string(n_space_) + "x" +
                       std::to_string(n_time_));
    }
  }

 private:
  Index n_space_ = 0;
  Index n_time_ = 0;
  VectorXd values_;
};

}  // namespace hmbound
