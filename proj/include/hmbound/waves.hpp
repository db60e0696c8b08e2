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
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "hmbound/boundary.hpp"
#include "hmbound/emulator.hpp"
#include "hmbound/history_match.hpp"
#include "hmbound/observations.hpp"

namespace hmbound::hm {

enum class OutputKind { kScalar, kBinaryRegion };

OutputKind parse_output_kind(const std::string& s);
std::string to_string(OutputKind k);

/// One observed model output and how it constrains the input space.
struct OutputSpec {
  std::string id;
  OutputKind kind = OutputKind::kScalar;
  std::vector<int> waves;
  Index ell = 1;
  VectorXd obs;        ///< z (scalar) or z^b in {0,1} (binary region)
  VectorXd sigma_e;    ///< observation error variances (scalar only)
  VectorXd sigma_eta;  ///< discrepancy variances; empty means zero
  std::string bound_expr = "3^2";
  BinarySummary summary = BinarySummary::kProbability;
  double threshold = kDefaultIceThreshold;
  int m_samples = 100;
  Index basis_rank = 3;  ///< emulated coefficients for a binary region

  double bound() const { return evaluate_bound(bound_expr, ell, "output " + id); }
  bool in_wave(int wave) const;
  /// Throws ConfigError on a violated invariant.
  void validate() const;
};

/// Score of one point against one constraint.
struct PointScore {
  double impl = 0.0;    ///< raw implausibility (binary: summary of counts)
  double scaled = 0.0;  ///< on the common scale where 3 is the cut-off
  bool keep = true;
};

using Scorer = std::function<PointScore(const VectorXd& x)>;

struct Term {
  std::string id;
  Scorer score;
};

enum class Combine { kAll, kJthMax };

/// The constraint added by one wave: every term for kAll, or the j-th
/// largest scaled implausibility below 3 for kJthMax.
struct WavePredicate {
  int wave = 0;
  Combine combine = Combine::kAll;
  int j = 1;
  std::vector<Term> terms;

  bool keep(const VectorXd& x) const;
  /// Evaluates every term (no short-circuit).
  bool keep(const VectorXd& x, std::vector<PointScore>& scores) const;
};

/// Chained membership over the original space: the box, optionally with
/// the coefficient block restricted to a pool of accepted coefficient draws.
class NroySpace {
 public:
  NroySpace() = default;
  explicit NroySpace(Box box) : box_(std::move(box)) {}

  const Box& box() const { return box_; }
  /// Coefficient draws (rows) occupying columns [offset, offset + cols).
  void set_coefficient_pool(MatrixXd pool, Index offset);
  const MatrixXd& coefficient_pool() const { return pool_; }
  Index pool_offset() const { return pool_offset_; }
  /// One uniform draw from the original space.
  void draw(std::mt19937_64& rng, VectorXd& x) const;
  void push(WavePredicate p) { waves_.push_back(std::move(p)); }
  const std::vector<WavePredicate>& waves() const { return waves_; }
  Index depth() const { return static_cast<Index>(waves_.size()); }

  /// Member of the box and of the first `depth` predicates (all when < 0).
  bool contains(const VectorXd& x, Index depth = -1) const;

 private:
  Box box_;
  MatrixXd pool_;
  Index pool_offset_ = 0;
  std::vector<WavePredicate> waves_;
};

// ------------------------------------------------------------ fitted outputs

/// Seed derived from a base seed and the coordinates of a point, so a
/// point's stochastic score never depends on evaluation order.
std::uint64_t point_seed(std::uint64_t base, const VectorXd& x);

/// Emulators for one output spec.
struct FittedOutput {
  OutputSpec spec;
  std::vector<gp::GpEmulator> scalar;     ///< one per component (scalar kind)
  std::optional<RegionEmulator> region;   ///< binary kind
  std::uint64_t seed = 0;                 ///< base seed for binary draws
  double loo_within_3 = 1.0;              ///< worst LOO coverage over emulators

  /// Counts (binary) at x.
  std::vector<int> counts(const VectorXd& x) const;
  PointScore score(const VectorXd& x) const;
  Term term() const;
};

/// Region basis: SVD of the thickness fields rotated towards the observed
/// binary map, then one GP per retained coefficient.
FittedOutput fit_output(const OutputSpec& spec, const MatrixXd& design, const MatrixXd& values,
                        const gp::FitOptions& fit, std::uint64_t seed, std::vector<std::string>* warnings = nullptr);

// ------------------------------------------------------------ coefficient space

/// Observation-only constraint on boundary coefficients: per-location
/// implausibility of h(c) with zero discrepancy and emulator variance.
struct CoefficientPredicate {
  Index offset = 0;  ///< position of c within a joined (x, c) point
  int j = 1;
  MatrixXd basis_obs;                    ///< observed entries x n_coefficients
  VectorXd mu_obs;
  VectorXd z;
  VectorXd var;
  std::vector<std::vector<Index>> groups;  ///< entry rows per observed location
  VectorXd chi2;                           ///< chi2_{|group|, 0.995}

  static CoefficientPredicate build(const bc::BoundaryModel& model, const ObservationSet& obs, int j,
                                    Index offset = 0);
  /// Scaled implausibility per observed location.
  VectorXd scaled(const VectorXd& c) const;
  PointScore score(const VectorXd& x) const;
  Term term() const;
};

struct PriorSpaceResult {
  MatrixXd accepted;  ///< rows are accepted coefficient vectors
  Index n_samples = 0;
  double acceptance_rate = 0.0;
  /// Per observed location: 5%, 50% and 95% quantiles of the scaled
  /// implausibility over all draws (rows = locations).
  MatrixXd quantiles;
  std::vector<Index> locations;
  std::vector<std::string> warnings;
};

PriorSpaceResult prior_coeff_space(const bc::BoundaryModel& model, const ObservationSet& obs, const Box& prior_bounds,
                                   int j, Index n_samples, std::uint64_t seed);

/// Draws uniformly over C within the prior bounds by hit-and-run with a
/// slice-sampling line search. Same target as prior_coeff_space, for spaces
/// too thin for rejection sampling. `start` must lie in C. Directions are
/// Gaussian with the covariance of the weighted least-squares estimate.
struct ChainOptions {
  Index n_draws = 1000;
  Index burn_in = 500;
  Index thin = 5;
  double step = 1.0;   ///< initial bracket width in direction units
  int max_steps = 100;  ///< stepping-out limit per side
  std::uint64_t seed = 0;
};

MatrixXd sample_coefficient_space(const CoefficientPredicate& pred, const Box& prior_bounds, const VectorXd& start,
                                  const ChainOptions& options);

// ------------------------------------------------------------ resampling

struct ResampleOptions {
  Index n_points = 100;
  double frac_best = 0.0;
  std::uint64_t seed = 0;
  Index pool_target = 0;        ///< candidates wanted; 0 means 10 * n_points
  Index max_draws = 2'000'000;  ///< rejection-sampling budget
  Index batch = 20'000;
};

struct ResampleResult {
  MatrixXd points;
  Index pool_size = 0;
  Index draws = 0;
  std::vector<std::string> warnings;
};

/// Candidates are drawn uniformly in the box and kept when inside the space.
/// The `frac_best` share goes round-robin to the lowest implausibility of
/// each term of the last wave; the rest is a greedy maximin selection.
/// Seed candidates (already known members, e.g. from Monte Carlo) may be
/// passed to save draws.
ResampleResult nroy_resample(const NroySpace& space, const ResampleOptions& options, const MatrixXd* seed_pool = nullptr);

// ------------------------------------------------------------ waves

/// Monte Carlo estimate of the NROY volume fraction with one fixed sample
/// reused across waves.
class VolumeTracker {
 public:
  VolumeTracker() = default;
  VolumeTracker(const NroySpace& space, Index n_samples, std::uint64_t seed);

  /// Applies one more predicate to the current members. When `rule_out`
  /// is given it receives, per term, the fraction of the first
  /// `rule_out_sample` current members that the term alone rules out.
  double apply(const WavePredicate& p, std::vector<double>* rule_out = nullptr, Index rule_out_sample = 2000);

  double fraction() const;
  double standard_error() const;
  Index n_samples() const { return samples_.rows(); }
  Index n_members() const { return static_cast<Index>(members_.size()); }
  /// Current members as rows.
  MatrixXd member_points(Index max_rows = -1) const;
  const MatrixXd& samples() const { return samples_; }
  const std::vector<Index>& members() const { return members_; }

 private:
  MatrixXd samples_;
  std::vector<Index> members_;
};

struct WaveConfig {
  int wave = 1;
  Combine combine = Combine::kAll;
  int j = 1;
  gp::FitOptions fit;
  std::uint64_t seed = 0;
};

struct SpecReport {
  std::string id;
  OutputKind kind = OutputKind::kScalar;
  double bound = 0.0;
  double rule_out_rate = 0.0;
  double loo_within_3 = 1.0;
  double bimodal_fraction = 0.0;
};

struct WaveReport {
  int wave = 0;
  double parent_fraction = 1.0;
  double fraction = 1.0;
  double standard_error = 0.0;
  Index design_size = 0;
  std::vector<SpecReport> specs;
  std::vector<std::string> warnings;

  std::string to_json() const;
};

/// Simulator results for one wave: design rows and, per output id, an
/// N x ell matrix (scalar values or region thickness fields).
struct WaveData {
  MatrixXd design;
  std::map<std::string, MatrixXd> outputs;
};

struct WaveState {
  NroySpace space;
  VolumeTracker tracker;
  std::vector<WaveReport> reports;
  std::vector<std::vector<FittedOutput>> fitted;  ///< per pushed predicate
  std::shared_ptr<CoefficientPredicate> coefficients;

  WaveState() = default;
  /// `base` carries the box and optional coefficient pool, no predicates.
  WaveState(NroySpace base, Index mc_samples, std::uint64_t mc_seed);

  /// Adds the observation-only coefficient constraint as wave 0.
  void add_coefficient_space(const CoefficientPredicate& pred);
  int next_wave() const { return reports.empty() ? 1 : reports.back().wave + 1; }
  double fraction() const { return tracker.fraction(); }
};

/// Fits emulators for the specs of `cfg.wave`, chains their predicate onto
/// the space and re-estimates the volume fraction.
WaveReport run_wave(WaveState& state, const WaveData& data, const std::vector<OutputSpec>& specs,
                    const WaveConfig& cfg);

/// Serialization of the fitted state (box, coefficient constraint, wave
/// predicates and their emulators). Monte Carlo samples are regenerated
/// from (mc_samples, mc_seed) on load and replayed through the predicates.
void save_state(const WaveState& state, const std::filesystem::path& dir, Index mc_samples, std::uint64_t mc_seed);
WaveState load_state(const std::filesystem::path& dir);

}  // namespace hmbound::hm
