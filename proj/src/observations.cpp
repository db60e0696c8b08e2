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

#include "hmbound/observations.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "hmbound/io.hpp"

namespace hmbound {

ObservationSet::ObservationSet(Index n_space, Index n_time, std::vector<Observation> entries,
                               std::vector<Index> declared_locations)
    : n_space_(n_space), n_time_(n_time), entries_(std::move(entries)) {
  if (n_space <= 0 || n_time <= 0) throw ShapeError("ObservationSet: empty grid");
  std::set<Index> locs(declared_locations.begin(), declared_locations.end());
  for (const auto& e : entries_) {
    if (e.location < 0 || e.location >= n_space || e.time < 0 || e.time >= n_time) {
      throw ShapeError("ObservationSet: entry (" + std::to_string(e.location) + ", " +
                       std::to_string(e.time) + ") outside the grid");
    }
    if (!std::isfinite(e.value) || !std::isfinite(e.error_sd)) {
      throw DataError("ObservationSet: non-finite observation at location " +
                      std::to_string(e.location) + ", time " + std::to_string(e.time));
    }
    if (e.error_sd < 0) throw DataError("ObservationSet: negative error sd");
    locs.insert(e.location);
  }
  for (Index l : locs) {
    if (l < 0 || l >= n_space) throw ShapeError("ObservationSet: declared location outside the grid");
  }
  locations_.assign(locs.begin(), locs.end());
  std::sort(entries_.begin(), entries_.end(), [](const Observation& a, const Observation& b) {
    return a.location != b.location ? a.location < b.location : a.time < b.time;
  });
  for (std::size_t i = 1; i < entries_.size(); ++i) {
    if (entries_[i].location == entries_[i - 1].location && entries_[i].time == entries_[i - 1].time) {
      throw DataError("ObservationSet: duplicate entry at location " +
                      std::to_string(entries_[i].location) + ", time " + std::to_string(entries_[i].time));
    }
  }
}

std::vector<Index> ObservationSet::observed_locations() const {
  std::vector<Index> out;
  for (const auto& e : entries_) {
    if (out.empty() || out.back() != e.location) out.push_back(e.location);
  }
  return out;
}

ObservationSet ObservationSet::restricted_to_observed() const {
  return restricted_to(observed_locations());
}

ObservationSet ObservationSet::restricted_to(const std::vector<Index>& locations) const {
  std::set<Index> keep(locations.begin(), locations.end());
  std::vector<Observation> e;
  for (const auto& o : entries_) {
    if (keep.count(o.location)) e.push_back(o);
  }
  ObservationSet out(n_space_, n_time_, std::move(e), locations);
  return out;
}

ObservationSet ObservationSet::time_window(Index begin, Index end) const {
  std::vector<Observation> e;
  for (const auto& o : entries_) {
    if (o.time >= begin && o.time < end) e.push_back(o);
  }
  return ObservationSet(n_space_, n_time_, std::move(e), locations_);
}

Index ObservationSet::count_at(Index location) const {
  return std::count_if(entries_.begin(), entries_.end(),
                       [&](const Observation& o) { return o.location == location; });
}

MatrixXd ObservationSet::value_matrix() const {
  MatrixXd m = MatrixXd::Constant(n_time_, static_cast<Index>(locations_.size()),
                                  std::numeric_limits<double>::quiet_NaN());
  for (const auto& o : entries_) {
    auto it = std::lower_bound(locations_.begin(), locations_.end(), o.location);
    m(o.time, it - locations_.begin()) = o.value;
  }
  return m;
}

MatrixXd ObservationSet::variance_matrix() const {
  MatrixXd m = MatrixXd::Constant(n_time_, static_cast<Index>(locations_.size()),
                                  std::numeric_limits<double>::quiet_NaN());
  for (const auto& o : entries_) {
    auto it = std::lower_bound(locations_.begin(), locations_.end(), o.location);
    m(o.time, it - locations_.begin()) = o.error_sd * o.error_sd;
  }
  return m;
}

VectorXd ObservationSet::time_error_variance() const {
  if (entries_.empty()) throw DataError("ObservationSet: no entries to derive error variances from");
  VectorXd sum = VectorXd::Zero(n_time_);
  VectorXd count = VectorXd::Zero(n_time_);
  double total = 0.0;
  for (const auto& o : entries_) {
    sum[o.time] += o.error_sd * o.error_sd;
    count[o.time] += 1.0;
    total += o.error_sd * o.error_sd;
  }
  const double overall = total / static_cast<double>(entries_.size());
  VectorXd out(n_time_);
  for (Index t = 0; t < n_time_; ++t) out[t] = count[t] > 0 ? sum[t] / count[t] : overall;
  return out;
}

ObservationSet ObservationSet::block_average(Index factor) const {
  if (factor < 1) throw ConfigError("block_average: factor must be >= 1");
  if (n_time_ % factor != 0) {
    throw ShapeError("block_average: " + std::to_string(n_time_) + " time steps not divisible by " +
                     std::to_string(factor));
  }
  struct Acc {
    double value = 0, var = 0;
    int n = 0;
  };
  std::map<std::pair<Index, Index>, Acc> acc;
  for (const auto& o : entries_) {
    auto& a = acc[{o.location, o.time / factor}];
    a.value += o.value;
    a.var += o.error_sd * o.error_sd;
    ++a.n;
  }
  std::vector<Observation> e;
  for (const auto& [key, a] : acc) {
    e.push_back({key.first, key.second, a.value / a.n, std::sqrt(a.var) / a.n});
  }
  ObservationSet out(n_space_, n_time_ / factor, std::move(e), locations_);
  out.dating_sd = dating_sd;
  return out;
}

ObservationSet read_observations_csv(const std::filesystem::path& path, Index n_space, Index n_time) {
  std::istringstream in(io::read_text(path));
  std::string line;
  std::getline(in, line);
  std::vector<Observation> entries;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::istringstream ls(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 4) {
      throw DataError(path.string() + ":" + std::to_string(lineno) +
                      ": expected location_id,time_index,value,error_sd");
    }
    try {
      entries.push_back({std::stol(cells[0]), std::stol(cells[1]), std::stod(cells[2]), std::stod(cells[3])});
    } catch (const std::exception&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return ObservationSet(n_space, n_time, std::move(entries));
}

void write_observations_csv(const std::filesystem::path& path, const ObservationSet& obs) {
  std::string out = "location_id,time_index,value,error_sd\n";
  for (const auto& o : obs.entries()) {
    out += std::to_string(o.location) + "," + std::to_string(o.time) + "," + io::format_double(o.value) +
           "," + io::format_double(o.error_sd) + "\n";
  }
  io::write_text(path, out);
}

MatrixXd block_average_ensemble(const MatrixXd& ensemble, Index n_space, Index n_time, Index factor) {
  if (factor < 1) throw ConfigError("block_average: factor must be >= 1");
  if (ensemble.rows() != n_space * n_time) throw ShapeError("block_average: ensemble rows do not match grid");
  if (n_time % factor != 0) throw ShapeError("block_average: time steps not divisible by factor");
  const Index nt = n_time / factor;
  MatrixXd out = MatrixXd::Zero(n_space * nt, ensemble.cols());
  for (Index s = 0; s < n_space; ++s) {
    for (Index t = 0; t < n_time; ++t) {
      out.row(s * nt + t / factor) += ensemble.row(s * n_time + t) / static_cast<double>(factor);
    }
  }
  return out;
}

}  // namespace hmbound
