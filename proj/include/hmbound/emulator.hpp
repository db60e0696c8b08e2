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
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "hmbound/field.hpp"

namespace hmbound::gp {

enum class MeanSpec { kConstant, kLinear };

struct FitOptions {
  MeanSpec mean = MeanSpec::kLinear;
  int restarts = 10;
  std::uint64_t seed = 0;
  int max_iter = 200;
  /// Smallest nugget as a fraction of the signal variance.
  double min_nugget = 1e-8;
  /// Input box used for normalization; empty means the design's min/max.
  VectorXd input_lo;
  VectorXd input_hi;
};

/// Squared-exponential kernel hyperparameters in normalized input units.
struct Hyperparameters {
  VectorXd length_scales;
  double signal_variance = 1.0;
  /// Nugget as a fraction of the signal variance.
  double nugget = 1e-8;
  double nugget_variance() const { return signal_variance * nugget; }
};

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
  bool extrapolated = false;
};

struct LooResult {
  VectorXd mean;
  VectorXd variance;
  VectorXd standardized;  ///< (target - mean) / sd
  double fraction_within(double bound) const;
};

/// Gaussian-process regression with a squared-exponential kernel, nugget and
/// a constant or linear mean; regression coefficients and signal variance
/// are profiled out. Immutable after construction.
class GpEmulator {
 public:
  GpEmulator() = default;

  /// Maximizes the restricted marginal likelihood from `restarts` seeded
  /// starting points. Constant targets give a constant emulator and a
  /// warning.
  static GpEmulator fit(const MatrixXd& design, const VectorXd& targets, const FitOptions& options = {},
                        std::vector<std::string>* warnings = nullptr);

  /// Emulator with fixed hyperparameters (signal variance taken as given).
  static GpEmulator with_hyperparameters(const MatrixXd& design, const VectorXd& targets, const FitOptions& options,
                                         const Hyperparameters& hyper);

  Prediction predict(const VectorXd& x) const;
  /// Rows of `x` are input points. `variance` may be null.
  void predict_batch(const MatrixXd& x, VectorXd& mean, VectorXd* variance) const;

  /// Independent draws from the marginal posterior at x.
  VectorXd sample_posterior(const VectorXd& x, int m_samples, std::uint64_t seed) const;

  /// Closed-form leave-one-out predictions at fixed hyperparameters.
  LooResult loo() const;

  Index input_dim() const { return design_.cols(); }
  Index size() const { return design_.rows(); }
  const MatrixXd& design() const { return design_; }
  const VectorXd& targets() const { return y_; }
  const Hyperparameters& hyperparameters() const { return hyper_; }
  const VectorXd& beta() const { return beta_; }
  MeanSpec mean_spec() const { return mean_; }
  bool is_constant() const { return constant_; }
  double log_likelihood() const { return loglik_; }
  const VectorXd& input_lo() const { return lo_; }
  const VectorXd& input_hi() const { return hi_; }

  std::string to_json() const;
  static GpEmulator from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static GpEmulator load(const std::filesystem::path& path);
  /// LOO diagnostics as CSV: index,target,loo_mean,loo_sd,standardized.
  void write_loo_csv(const std::filesystem::path& path) const;

 private:
  MatrixXd normalize(const MatrixXd& x) const;
  MatrixXd regressors(const MatrixXd& xn) const;
  void setup(const MatrixXd& design, const VectorXd& targets, const FitOptions& options);
  void finalize(const Hyperparameters& hyper, bool estimate_variance);

  MatrixXd design_;
  VectorXd y_;
  VectorXd lo_, hi_, scale_;
  std::vector<Index> active_;  ///< non-constant input dimensions
  MeanSpec mean_ = MeanSpec::kLinear;
  bool constant_ = false;
  Hyperparameters hyper_;
  double loglik_ = 0.0;

  MatrixXd xn_;  ///< normalized design, active dims only, scaled by 1/length-scale
  MatrixXd h_;
  VectorXd beta_;
  VectorXd alpha_;
  Eigen::LLT<MatrixXd> chol_r_;
  MatrixXd rinv_h_;
  Eigen::LLT<MatrixXd> chol_a_;
};

}  // namespace hmbound::gp
