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

#include "hmbound/field.hpp"
#include "hmbound/observations.hpp"

namespace hmbound::synth {

struct ParamSpec {
  std::string name;
  double lo = 0.0;
  double hi = 1.0;
};

/// Seven physics parameters of the toy ice model, in input order.
std::vector<ParamSpec> default_params();

/// Desk-scale stand-in for an ice sheet model: thickness grows by
/// accumulation, is lost to temperature-driven melt and a basal term, and
/// spreads by diffusion with zero-flux edges.
struct ToySimulatorConfig {
  Index nx = 20;
  Index ny = 15;
  Index n_time = 30;
  std::vector<ParamSpec> params = default_params();
  double cell_area = 1e-3;

  Index n_space() const { return nx * ny; }
  Index n_params() const { return static_cast<Index>(params.size()); }
  void validate() const;
};

/// Thickness after each step as an n_space x n_time matrix (cell index
/// y * nx + x). T is the boundary temperature on the same grid.
///
/// Per step, with Te = T - lapse * H and u = sensitivity * (Te - threshold):
///   H <- max(0, H + acc * logistic(-u) - melt * softplus(u) + D * lap(H) - basal)
/// For D < 1/4 the step is order preserving in H and non-increasing in T,
/// so warming never adds ice.
MatrixXd toy_simulate(const ToySimulatorConfig& cfg, const VectorXd& x, const FieldVector& temperature);

double ice_volume(const VectorXd& thickness, double cell_area);

/// Binarized thickness over the cells of `mask`.
Eigen::VectorXi extent_region(const VectorXd& thickness, const std::vector<Index>& mask, double threshold = 10.0);

/// Cells with x0 <= x < x1 and y0 <= y < y1.
std::vector<Index> rect_region(Index nx, Index ny, Index x0, Index x1, Index y0, Index y1);

// ------------------------------------------------------------ synthetic data

/// Climate-model-like ensemble: a deglacial background plus member
/// amplitudes on four separable space-time modes and small cell noise.
struct SyntheticEnsemble {
  MatrixXd raw;       ///< (n_space * n_time) x members, FieldVector layout
  MatrixXd patterns;  ///< n_space x 4
  MatrixXd modes;     ///< n_time x 4
  VectorXd mode_sd;   ///< 4
  VectorXd background;
};

SyntheticEnsemble synthetic_ensemble(const ToySimulatorConfig& cfg, Index members, std::uint64_t seed,
                                     double cell_noise = 0.1);

/// A fresh draw from the ensemble's generating process.
FieldVector planted_field(const ToySimulatorConfig& cfg, const SyntheticEnsemble& ens, std::uint64_t seed,
                          double cell_noise = 0.1);

struct SparsityConfig {
  Index n_sites = 12;
  double fraction = 0.4;  ///< observed share of the sites' (site, time) entries
  double sd_lo = 0.4;
  double sd_hi = 1.0;
};

/// Observations of `truth` at random sites: every site gets at least one
/// entry and the total is round(fraction * n_sites * n_time). Each site has
/// its own error SD drawn in [sd_lo, sd_hi]; sd_hi == 0 gives exact values.
ObservationSet sparse_observations(const FieldVector& truth, const SparsityConfig& sparsity, std::uint64_t seed);

/// Same sites, times and error SDs as `mask`, with values redrawn as
/// truth + N(0, sd^2).
ObservationSet observe_like(const ObservationSet& mask, const FieldVector& truth, std::uint64_t seed);

/// x* drawn uniformly from the middle 80% of every parameter range.
VectorXd sample_parameters(const ToySimulatorConfig& cfg, std::uint64_t seed);

/// A named model output: a scalar volume or a binary region, at one step.
struct ToyOutput {
  std::string id;
  bool binary = false;
  Index time = 0;
  std::vector<Index> cells;  ///< region cells (binary only)
};

/// Values of `out` for a run: 1 value (volume) or the region thicknesses.
VectorXd output_values(const ToySimulatorConfig& cfg, const ToyOutput& out, const MatrixXd& thickness);

/// Observed values for the truth run: volumes plus N(0, variance) noise,
/// binary maps without noise.
VectorXd observed_output(const ToySimulatorConfig& cfg, const ToyOutput& out, const MatrixXd& thickness,
                         double noise_variance, std::uint64_t seed, double threshold = 10.0);

}  // namespace hmbound::synth
