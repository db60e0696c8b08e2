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

#include "hmbound/io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <vector>

namespace hmbound::io {
namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t start = cell.find_first_not_of(' ');
    out.push_back(start == std::string::npos ? std::string() : cell.substr(start));
  }
  return out;
}

double parse_double(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    // from_chars rejects "nan"/"inf" spellings on some toolchains
    if (s == "nan" || s == "NaN") return std::numeric_limits<double>::quiet_NaN();
    throw DataError(path.string() + ":" + std::to_string(line) + ": not a number '" + s + "'");
  }
  return v;
}

long parse_index(const std::string& s, const std::filesystem::path& path, std::size_t line) {
  long v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError(path.string() + ":" + std::to_string(line) + ": not an integer '" + s + "'");
  }
  return v;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return in;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

MatrixXd read_matrix_csv(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty matrix file");
  auto header = split_csv(line);
  if (header.size() != 2) throw DataError(path.string() + ": header must be 'rows,cols'");
  const long rows = parse_index(header[0], path, 1);
  const long cols = parse_index(header[1], path, 1);
  if (rows < 0 || cols < 0) throw DataError(path.string() + ": negative dimension");
  MatrixXd m(rows, cols);
  for (long r = 0; r < rows; ++r) {
    if (!std::getline(in, line)) {
      throw DataError(path.string() + ": expected " + std::to_string(rows) + " rows, got " +
                      std::to_string(r));
    }
    auto cells = split_csv(line);
    if (static_cast<long>(cells.size()) != cols) {
      throw DataError(path.string() + ":" + std::to_string(r + 2) + ": expected " +
                      std::to_string(cols) + " columns");
    }
    for (long c = 0; c < cols; ++c) m(r, c) = parse_double(cells[c], path, r + 2);
  }
  return m;
}

void write_matrix_csv(const std::filesystem::path& path, const MatrixXd& m) {
  std::string out = std::to_string(m.rows()) + "," + std::to_string(m.cols()) + "\n";
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += format_double(m(r, c));
    }
    out += '\n';
  }
  write_text(path, out);
}

FieldVector read_field_csv(const std::filesystem::path& path, Index n_space, Index n_time) {
  auto in = open_input(path);
  std::string line;
  std::getline(in, line);
  FieldVector field(n_space, n_time);
  std::vector<char> seen(static_cast<std::size_t>(n_space * n_time), 0);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() != 3) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 3 fields");
    const long s = parse_index(cells[0], path, lineno);
    const long t = parse_index(cells[1], path, lineno);
    if (s < 0 || s >= n_space || t < 0 || t >= n_time) {
      throw ShapeError(path.string() + ":" + std::to_string(lineno) + ": (location, time) out of range");
    }
    const Index k = FieldVector::flat_index(s, t, n_time);
    if (seen[k]) throw DataError(path.string() + ":" + std::to_string(lineno) + ": duplicate entry");
    seen[k] = 1;
    field.values()[k] = parse_double(cells[2], path, lineno);
  }
  for (char c : seen) {
    if (!c) throw DataError(path.string() + ": field is incomplete");
  }
  return field;
}

void write_field_csv(const std::filesystem::path& path, const FieldVector& field) {
  std::string out = "location,time,value\n";
  for (Index s = 0; s < field.n_space(); ++s) {
    for (Index t = 0; t < field.n_time(); ++t) {
      out += std::to_string(s) + "," + std::to_string(t) + "," + format_double(field(s, t)) + "\n";
    }
  }
  write_text(path, out);
}

std::string content_hash(const double* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n * sizeof(double); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_text(const std::filesystem::path& path) {
  auto in = open_input(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace hmbound::io
