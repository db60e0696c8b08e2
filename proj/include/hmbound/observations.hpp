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
#include <vector>

#include "hmbound/field.hpp"

namespace hmbound {

struct Observation {
  Index location = 0;
  Index time = 0;
  double value = 0.0;
  double error_sd = 0.0;
};

/// Sparse spatio-temporal observations of a field on an n_space x n_time grid.
///
/// Entries are kept sorted by (location, time) and are unique. `locations()`
/// lists the declared locations, which may include locations without any
/// observed entry; most consumers want `restricted_to_observed()`.
class ObservationSet {
 public:
  ObservationSet() = default;
  ObservationSet(Index n_space, Index n_time, std::vector<Observation> entries,
                 std::vector<Index> declared_locations = {});

  Index n_space() const { return n_space_; }
  Index n_time() const { return n_time_; }
  const std::vector<Observation>& entries() const { return entries_; }
  const std::vector<Index>& locations() const { return locations_; }
  bool empty() const { return entries_.empty(); }

  /// Declared locations carrying at least one entry.
  std::vector<Index> observed_locations() const;
  ObservationSet restricted_to_observed() const;
  ObservationSet restricted_to(const std::vector<Index>& locations) const;
  /// Entries with begin <= time < end; the grid and time indices are unchanged.
  ObservationSet time_window(Index begin, Index end) const;
  /// Number of observed entries at `location`.
  Index count_at(Index location) const;

  /// n_time x locations().size() matrix of values, NaN where missing.
  MatrixXd value_matrix() const;
  /// Same shape; error variances, NaN where missing.
  MatrixXd variance_matrix() const;

  /// Diagonal observation-error variance per time index: the mean error
  /// variance over entries at that time, or the overall mean where a time
  /// has no entry.
  VectorXd time_error_variance() const;

  /// Averages consecutive blocks of `factor` time steps. Values are averaged
  /// within a block and error variances combine as sum(var)/count^2.
  ObservationSet block_average(Index factor) const;

  /// Per-location dating uncertainty, carried as metadata only.
  std::vector<double> dating_sd;

 private:
  Index n_space_ = 0;
  Index n_time_ = 0;
  std::vector<Index> locations_;
  std::vector<Observation> entries_;
};

ObservationSet read_observations_csv(const std::filesystem::path& path, Index n_space, Index n_time);
void write_observations_csv(const std::filesystem::path& path, const ObservationSet& obs);

/// Block-averages the time axis of an ensemble whose columns are FieldVectors.
MatrixXd block_average_ensemble(const MatrixXd& ensemble, Index n_space, Index n_time, Index factor);

}  // namespace hmbound
