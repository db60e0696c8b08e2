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

#include "hmbound/field.hpp"

namespace hmbound::io {

/// Matrix CSV: first line "rows,cols", then one row-major line per row.
MatrixXd read_matrix_csv(const std::filesystem::path& path);
void write_matrix_csv(const std::filesystem::path& path, const MatrixXd& m);

/// Field CSV: header "location,time,value" then one triple per entry. Every
/// (location, time) of the grid must appear exactly once when reading.
FieldVector read_field_csv(const std::filesystem::path& path, Index n_space, Index n_time);
void write_field_csv(const std::filesystem::path& path, const FieldVector& field);

/// Shortest round-trip decimal representation of a double.
std::string format_double(double v);

/// FNV-1a over the raw bytes of the values, as 16 hex digits.
std::string content_hash(const double* data, std::size_t n);
inline std::string content_hash(const MatrixXd& m) {
  return content_hash(m.data(), static_cast<std::size_t>(m.size()));
}
inline std::string content_hash(const VectorXd& v) {
  return content_hash(v.data(), static_cast<std::size_t>(v.size()));
}

std::string read_text(const std::filesystem::path& path);
/// Writes via a temporary sibling then renames.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace hmbound::io
