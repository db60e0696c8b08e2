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
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hmbound/boundary.hpp"
#include "hmbound/emulator.hpp"
#include "hmbound/synthetic.hpp"
#include "hmbound/waves.hpp"

namespace hmbound::pipeline {

namespace fs = std::filesystem;

/// One configured output: how to compute it from a toy run and how it
/// enters history matching.
struct OutputDef {
  hm::OutputSpec spec;  ///< obs is filled from the truth or the config
  synth::ToyOutput toy;
  bool has_obs = false;
};

struct WaveDef {
  int wave = 1;
  hm::Combine combine = hm::Combine::kAll;
  int j = 1;
};

struct ExpertDef {
  bool enabled = false;
  Index period = 0;
  std::string pattern = "gradient_y";
  double lo = -1.0;
  double hi = 1.0;
};

/// Pipeline configuration, read from JSON (schema in docs/).
struct PipelineConfig {
  fs::path base_dir;
  std::uint64_t seed = 1;
  synth::ToySimulatorConfig sim;

  bool synthetic = true;
  Index ensemble_members = 12;
  double cell_noise = 0.1;
  synth::SparsityConfig sparsity;
  fs::path ensemble_csv;
  fs::path observations_csv;

  std::vector<Index> period_boundaries{10, 20};
  Index n_t = 2;
  Index n_s = 2;
  Index n_anchors = 2;
  Index n_holdout = 2;
  double space_length_scale = 4.0;
  double time_length_scale = 5.0;
  double time_variance = 1.0;
  bool smoothing = true;
  ExpertDef expert;
  double coefficient_bound_scale = 1.5;

  int prior_j = 2;
  Index prior_samples = 200000;
  Index prior_pool = 4000;
  /// "auto" (rejection, falling back to hit-and-run when it yields fewer
  /// than prior_pool draws), "rejection" or "hit_and_run".
  std::string prior_sampler = "auto";
  Index prior_burn_in = 1000;
  Index prior_thin = 10;

  Index n_points = 150;
  double frac_best = 0.2;
  Index mc_samples = 100000;
  gp::FitOptions emulator;

  std::vector<OutputDef> outputs;
  std::vector<WaveDef> waves;

  static PipelineConfig load(const fs::path& path);
  static PipelineConfig parse(const std::string& json_text, const fs::path& base_dir = {});
  /// Seed for a named stochastic stage, derived from the master seed.
  std::uint64_t stage_seed(const std::string& stage) const;
  const WaveDef& wave(int k) const;
  void validate() const;
};

/// Ground truth of a synthetic problem.
struct Truth {
  VectorXd x;
  VectorXd c;
  std::vector<std::string> ids;
  std::vector<VectorXd> observed;  ///< per output, as used for matching
  std::vector<VectorXd> exact;     ///< per output, noise free
  VectorXd joined() const;
};

/// Staged pipeline over an output directory. Each stage reads what earlier
/// stages wrote, so stages may run in separate processes.
class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, fs::path out);

  /// Writes data/ (ensemble, fitting observations) and model_temporal/.
  void fit_temporal();
  /// Writes model/ with spatial and expert vectors and coefficient bounds.
  void fit_spatial();
  /// Synthetic problems only: x*, c*, boundary observations drawn from
  /// h(c*) and the observed outputs (truth.json).
  void make_truth();
  /// Accepted coefficient draws and diagnostics in prior_space/.
  void prior_space();
  /// Design for `wave` in wave_<k>/design.csv.
  void design(int wave);
  /// Toy runs for wave_<k>/design.csv.
  void simulate(int wave);
  /// Emulation and matching for `wave`; writes the report, the updated state
  /// and (when a later wave is configured) the next design.
  hm::WaveReport wave(int wave);
  /// Summary across waves plus plots; returns the JSON text.
  std::string report();
  /// Every stage in order.
  std::string run_all();

  const PipelineConfig& config() const { return cfg_; }
  const fs::path& out() const { return out_; }

  // Loaded artifacts (lazily).
  const MatrixXd& ensemble();
  /// Observations the basis is fitted to.
  const ObservationSet& fit_observations();
  /// Observations that define C and condition generated boundaries. For
  /// synthetic data the truth stage draws them from h(c*); for file data
  /// they equal the fitting observations.
  const ObservationSet& observations();
  const bc::BoundaryModel& model();
  bc::GenerationInputs generation_inputs();
  std::vector<hm::OutputSpec> output_specs();
  std::optional<Truth> truth();
  hm::Box box();

 private:
  fs::path wave_dir(int k) const;
  hm::WaveState& state();
  void write_next_design(int wave);

  PipelineConfig cfg_;
  fs::path out_;
  std::optional<MatrixXd> ensemble_;
  std::optional<ObservationSet> fit_obs_;
  std::optional<ObservationSet> obs_;
  std::optional<bc::BoundaryModel> model_;
  std::unique_ptr<hm::WaveState> state_;
};

/// Toy-model outputs for every design row: per output id an N x ell matrix,
/// plus the N x n_time volume series.
struct SimulationResult {
  std::vector<std::string> ids;
  std::vector<MatrixXd> values;
  MatrixXd volume_series;
};

SimulationResult simulate_design(const PipelineConfig& cfg, const bc::BoundaryModel& model,
                                 const ObservationSet& obs, const bc::GenerationInputs& inputs,
                                 const MatrixXd& design);

/// Least-squares coefficients of the observations (error-variance weighted),
/// clamped to the model bounds.
VectorXd best_fit_coefficients(const bc::BoundaryModel& model, const ObservationSet& obs);

// ------------------------------------------------------------ plots

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  std::string colour = "#1f77b4";
  bool dashed = false;
};

struct Band {
  std::vector<double> x;
  std::vector<double> lo;
  std::vector<double> hi;
  std::string colour = "#1f77b4";
  double opacity = 0.25;
};

/// Static SVG line chart with optional shaded bands and log y axis.
std::string svg_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                      const std::vector<Band>& bands, const std::vector<Series>& series, bool log_y = false);

}  // namespace hmbound::pipeline
