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

#include "hmbound/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "hmbound/io.hpp"
#include "hmbound/kron_gauss.hpp"

namespace hmbound::pipeline {

using json = nlohmann::json;

namespace {

std::uint64_t mix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Typed access with ConfigError naming the key.
template <typename T>
T get(const json& j, const std::string& key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

template <typename T>
T require(const json& j, const std::string& key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + ": key '" + key + "' has the wrong type");
  }
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() || base.empty() ? p : base / p; }

json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd json_vec(const json& j) {
  if (j.is_number()) return VectorXd::Constant(1, j.get<double>());
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

void write_json(const fs::path& path, const json& j) { io::write_text(path, j.dump(2) + "\n"); }

json read_json(const fs::path& path) {
  const std::string text = io::read_text(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

VectorXd expert_pattern(const synth::ToySimulatorConfig& sim, const std::string& name) {
  VectorXd p(sim.n_space());
  for (Index j = 0; j < sim.ny; ++j) {
    for (Index i = 0; i < sim.nx; ++i) {
      const double x = sim.nx > 1 ? static_cast<double>(i) / static_cast<double>(sim.nx - 1) : 0.5;
      const double y = sim.ny > 1 ? static_cast<double>(j) / static_cast<double>(sim.ny - 1) : 0.5;
      double v;
      if (name == "gradient_y") v = y - 0.5;
      else if (name == "gradient_x") v = x - 0.5;
      else if (name == "uniform") v = 1.0;
      else throw ConfigError("unknown expert pattern '" + name + "' (gradient_x, gradient_y or uniform)");
      p[j * sim.nx + i] = v;
    }
  }
  return p;
}

}  // namespace

// ------------------------------------------------------------ config

PipelineConfig PipelineConfig::load(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("config file not found: " + path.string());
  return parse(io::read_text(path), path.parent_path());
}

PipelineConfig PipelineConfig::parse(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (get<std::string>(j, "format", "") != "hmbound.pipeline.v1") {
    throw ConfigError("config: 'format' must be \"hmbound.pipeline.v1\"");
  }
  PipelineConfig c;
  c.base_dir = base_dir;
  if (!j.contains("seed")) throw ConfigError("config: missing key 'seed'");
  c.seed = require<std::uint64_t>(j, "seed", "config");

  const json grid = get<json>(j, "grid", json::object());
  c.sim.nx = get<Index>(grid, "nx", c.sim.nx);
  c.sim.ny = get<Index>(grid, "ny", c.sim.ny);
  c.sim.n_time = get<Index>(grid, "n_time", c.sim.n_time);
  c.sim.cell_area = get<double>(j, "cell_area", c.sim.cell_area);
  if (j.contains("params")) {
    c.sim.params.clear();
    for (const auto& p : j["params"]) {
      c.sim.params.push_back({require<std::string>(p, "name", "params"), require<double>(p, "lo", "params"),
                              require<double>(p, "hi", "params")});
    }
  }

  const json data = get<json>(j, "data", json::object());
  const std::string source = get<std::string>(data, "source", "synthetic");
  if (source == "synthetic") {
    c.synthetic = true;
  } else if (source == "files") {
    c.synthetic = false;
    c.ensemble_csv = resolve(base_dir, require<std::string>(data, "ensemble_csv", "data"));
    c.observations_csv = resolve(base_dir, require<std::string>(data, "observations_csv", "data"));
  } else {
    throw ConfigError("data.source must be 'synthetic' or 'files'");
  }
  c.ensemble_members = get<Index>(data, "ensemble_members", c.ensemble_members);
  c.cell_noise = get<double>(data, "cell_noise", c.cell_noise);
  const json sp = get<json>(data, "sparsity", json::object());
  c.sparsity.n_sites = get<Index>(sp, "n_sites", c.sparsity.n_sites);
  c.sparsity.fraction = get<double>(sp, "fraction", c.sparsity.fraction);
  c.sparsity.sd_lo = get<double>(sp, "sd_lo", c.sparsity.sd_lo);
  c.sparsity.sd_hi = get<double>(sp, "sd_hi", c.sparsity.sd_hi);

  const json bm = get<json>(j, "boundary_model", json::object());
  c.period_boundaries = get<std::vector<Index>>(bm, "period_boundaries", c.period_boundaries);
  c.n_t = get<Index>(bm, "n_t", c.n_t);
  c.n_s = get<Index>(bm, "n_s", c.n_s);
  c.n_anchors = get<Index>(bm, "n_anchors", c.n_anchors);
  c.n_holdout = get<Index>(bm, "n_holdout", c.n_holdout);
  c.space_length_scale = get<double>(bm, "space_length_scale", c.space_length_scale);
  c.time_length_scale = get<double>(bm, "time_length_scale", c.time_length_scale);
  c.time_variance = get<double>(bm, "time_variance", c.time_variance);
  c.smoothing = get<bool>(bm, "smoothing", c.smoothing);
  c.coefficient_bound_scale = get<double>(bm, "coefficient_bound_scale", c.coefficient_bound_scale);
  if (bm.contains("expert")) {
    const json& e = bm["expert"];
    c.expert.enabled = true;
    c.expert.period = require<Index>(e, "period", "expert");
    c.expert.pattern = get<std::string>(e, "pattern", c.expert.pattern);
    c.expert.lo = get<double>(e, "lo", c.expert.lo);
    c.expert.hi = get<double>(e, "hi", c.expert.hi);
  }

  const json ps = get<json>(j, "prior_space", json::object());
  c.prior_j = get<int>(ps, "j", c.prior_j);
  c.prior_samples = get<Index>(ps, "n_samples", c.prior_samples);
  c.prior_pool = get<Index>(ps, "pool", c.prior_pool);
  c.prior_sampler = get<std::string>(ps, "sampler", c.prior_sampler);
  c.prior_burn_in = get<Index>(ps, "burn_in", c.prior_burn_in);
  c.prior_thin = get<Index>(ps, "thin", c.prior_thin);

  const json de = get<json>(j, "design", json::object());
  c.n_points = get<Index>(de, "n_points", c.n_points);
  c.frac_best = get<double>(de, "frac_best", c.frac_best);
  c.mc_samples = get<Index>(j, "monte_carlo_samples", c.mc_samples);

  const json em = get<json>(j, "emulator", json::object());
  const std::string mean = get<std::string>(em, "mean", "linear");
  if (mean != "linear" && mean != "constant") throw ConfigError("emulator.mean must be 'linear' or 'constant'");
  c.emulator.mean = mean == "linear" ? gp::MeanSpec::kLinear : gp::MeanSpec::kConstant;
  c.emulator.restarts = get<int>(em, "restarts", c.emulator.restarts);
  c.emulator.max_iter = get<int>(em, "max_iter", c.emulator.max_iter);
  c.emulator.min_nugget = get<double>(em, "min_nugget", c.emulator.min_nugget);

  const double threshold = get<double>(j, "ice_threshold", hm::kDefaultIceThreshold);
  const int m_samples = get<int>(j, "binary_samples", 100);
  if (!j.contains("outputs") || !j["outputs"].is_array() || j["outputs"].empty()) {
    throw ConfigError("config: 'outputs' must be a non-empty list");
  }
  for (const auto& o : j["outputs"]) {
    OutputDef d;
    const std::string id = require<std::string>(o, "id", "output");
    const std::string where = "output " + id;
    d.spec.id = id;
    d.toy.id = id;
    d.spec.kind = hm::parse_output_kind(require<std::string>(o, "kind", where));
    d.toy.binary = d.spec.kind == hm::OutputKind::kBinaryRegion;
    d.toy.time = require<Index>(o, "time", where);
    d.spec.waves = require<std::vector<int>>(o, "waves", where);
    d.spec.bound_expr = require<std::string>(o, "bound", where);
    d.spec.threshold = threshold;
    d.spec.m_samples = get<int>(o, "m_samples", m_samples);
    d.spec.basis_rank = get<Index>(o, "basis_rank", 3);
    if (d.toy.binary) {
      const auto r = require<std::vector<Index>>(o, "region", where);
      if (r.size() != 4) throw ConfigError(where + ": region must be [x0, x1, y0, y1]");
      d.toy.cells = synth::rect_region(c.sim.nx, c.sim.ny, r[0], r[1], r[2], r[3]);
      if (d.toy.cells.empty()) throw ConfigError(where + ": region selects no cells");
      d.spec.ell = static_cast<Index>(d.toy.cells.size());
      d.spec.summary = hm::parse_binary_summary(get<std::string>(o, "summary", "probability"));
    } else {
      d.spec.ell = 1;
      d.spec.sigma_e = VectorXd::Constant(1, require<double>(o, "sigma_e", where));
      if (o.contains("sigma_eta")) d.spec.sigma_eta = VectorXd::Constant(1, require<double>(o, "sigma_eta", where));
    }
    if (o.contains("obs")) {
      d.spec.obs = json_vec(o["obs"]);
      d.has_obs = true;
    } else {
      d.spec.obs = VectorXd::Zero(d.spec.ell);
    }
    d.spec.validate();
    c.outputs.push_back(std::move(d));
  }
  if (!j.contains("waves") || !j["waves"].is_array() || j["waves"].empty()) {
    throw ConfigError("config: 'waves' must be a non-empty list");
  }
  for (const auto& w : j["waves"]) {
    WaveDef d;
    d.wave = require<int>(w, "wave", "wave");
    const std::string comb = get<std::string>(w, "combine", "all");
    if (comb == "all") d.combine = hm::Combine::kAll;
    else if (comb == "jth_max") d.combine = hm::Combine::kJthMax;
    else throw ConfigError("wave " + std::to_string(d.wave) + ": combine must be 'all' or 'jth_max'");
    d.j = get<int>(w, "j", 1);
    c.waves.push_back(d);
  }
  c.validate();
  return c;
}

void PipelineConfig::validate() const {
  sim.validate();
  if (ensemble_members < 2) throw ConfigError("data.ensemble_members must be >= 2");
  if (n_t < 1 || n_s < 0) throw ConfigError("boundary_model: n_t must be >= 1 and n_s >= 0");
  if (n_anchors < 1) throw ConfigError("boundary_model.n_anchors must be >= 1");
  if (n_holdout < 0 || n_holdout >= sparsity.n_sites) throw ConfigError("boundary_model.n_holdout must leave fit sites");
  if (!(coefficient_bound_scale > 0.0)) throw ConfigError("boundary_model.coefficient_bound_scale must be positive");
  if (prior_j < 1 || prior_samples < 1 || prior_pool < 1) throw ConfigError("prior_space: j, n_samples and pool must be >= 1");
  if (prior_sampler != "auto" && prior_sampler != "rejection" && prior_sampler != "hit_and_run") {
    throw ConfigError("prior_space.sampler must be 'auto', 'rejection' or 'hit_and_run'");
  }
  if (prior_burn_in < 0 || prior_thin < 1) throw ConfigError("prior_space: burn_in must be >= 0 and thin >= 1");
  if (n_points < 2) throw ConfigError("design.n_points must be >= 2");
  if (frac_best < 0.0 || frac_best > 1.0) throw ConfigError("design.frac_best must be in [0, 1]");
  if (mc_samples < 1) throw ConfigError("monte_carlo_samples must be >= 1");
  for (std::size_t k = 0; k < waves.size(); ++k) {
    if (waves[k].wave != static_cast<int>(k) + 1) throw ConfigError("waves must be numbered 1, 2, ... in order");
    Index n = 0;
    for (const auto& o : outputs) n += o.spec.in_wave(waves[k].wave);
    if (n == 0) throw ConfigError("wave " + std::to_string(waves[k].wave) + " has no outputs");
    if (waves[k].combine == hm::Combine::kJthMax && (waves[k].j < 1 || waves[k].j > n)) {
      throw ConfigError("wave " + std::to_string(waves[k].wave) + ": j outside 1.." + std::to_string(n));
    }
  }
  std::set<std::string> ids;
  for (const auto& o : outputs) {
    if (!ids.insert(o.spec.id).second) throw ConfigError("duplicate output id " + o.spec.id);
    if (o.toy.time < 0 || o.toy.time >= sim.n_time) throw ConfigError("output " + o.spec.id + ": time outside the run");
    for (int w : o.spec.waves) {
      if (w < 1 || w > static_cast<int>(waves.size())) {
        throw ConfigError("output " + o.spec.id + " references wave " + std::to_string(w) + " which is not configured");
      }
    }
    if (!synthetic && !o.has_obs) throw ConfigError("output " + o.spec.id + ": 'obs' is required for file data");
  }
}

std::uint64_t PipelineConfig::stage_seed(const std::string& stage) const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : stage) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return mix(seed ^ h);
}

const WaveDef& PipelineConfig::wave(int k) const {
  if (k < 1 || k > static_cast<int>(waves.size())) throw ConfigError("wave " + std::to_string(k) + " is not configured");
  return waves[static_cast<std::size_t>(k - 1)];
}

VectorXd Truth::joined() const {
  VectorXd v(x.size() + c.size());
  v << x, c;
  return v;
}

// ------------------------------------------------------------ helpers

VectorXd best_fit_coefficients(const bc::BoundaryModel& model, const ObservationSet& obs) {
  std::vector<Index> rows;
  VectorXd z(static_cast<Index>(obs.entries().size())), w(z.size());
  Index i = 0;
  for (const auto& e : obs.entries()) {
    rows.push_back(FieldVector::flat_index(e.location, e.time, model.n_time()));
    z[i] = e.value - model.mu().values()[rows.back()];
    w[i] = e.error_sd > 0.0 ? 1.0 / (e.error_sd * e.error_sd) : 1.0;
    ++i;
  }
  const MatrixXd b = model.basis_rows(rows);
  const MatrixXd bw = b.transpose() * w.asDiagonal();
  VectorXd c = (bw * b).ldlt().solve(bw * z);
  for (Index k = 0; k < c.size(); ++k) {
    const auto& bd = model.bounds()[static_cast<std::size_t>(k)];
    c[k] = std::clamp(c[k], bd.lo, bd.hi);
  }
  return c;
}

namespace {

// T(c) = offset + slope * c; exact because every step of the generator is
// affine in c when imputation uses the conditional mean.
struct AffineBoundary {
  VectorXd offset;
  MatrixXd slope;
};

AffineBoundary affine_boundary(const bc::BoundaryModel& model, const ObservationSet& obs,
                               bc::GenerationInputs inputs) {
  inputs.bounds_mode = bc::BoundsMode::kWarn;
  inputs.impute.mode = kron::ImputeMode::kMean;
  const Index nc = model.n_coefficients();
  AffineBoundary a;
  std::vector<std::string> ignore;
  a.offset = bc::generate_boundary(model, VectorXd::Zero(nc), obs, inputs).values();
  a.slope.resize(a.offset.size(), nc);
  for (Index k = 0; k < nc; ++k) {
    VectorXd e = VectorXd::Zero(nc);
    e[k] = 1.0;
    a.slope.col(k) = bc::generate_boundary(model, e, obs, inputs).values() - a.offset;
  }
  return a;
}

}  // namespace

SimulationResult simulate_design(const PipelineConfig& cfg, const bc::BoundaryModel& model,
                                 const ObservationSet& obs, const bc::GenerationInputs& inputs,
                                 const MatrixXd& design) {
  const Index np = cfg.sim.n_params();
  const Index nc = model.n_coefficients();
  if (design.cols() != np + nc) {
    throw ShapeError("design has " + std::to_string(design.cols()) + " columns, expected " + std::to_string(np + nc));
  }
  const AffineBoundary ab = affine_boundary(model, obs, inputs);
  SimulationResult r;
  for (const auto& o : cfg.outputs) {
    r.ids.push_back(o.spec.id);
    r.values.emplace_back(design.rows(), o.spec.ell);
  }
  r.volume_series.resize(design.rows(), cfg.sim.n_time);
  for (Index i = 0; i < design.rows(); ++i) {
    const VectorXd x = design.row(i).head(np).transpose();
    const VectorXd c = design.row(i).tail(nc).transpose();
    for (Index k = 0; k < nc; ++k) {
      const auto& b = model.bounds()[static_cast<std::size_t>(k)];
      if (c[k] < b.lo || c[k] > b.hi) {
        throw BoundsError("design row " + std::to_string(i) + ": coefficient " + std::to_string(k) + " outside its bounds");
      }
    }
    const FieldVector t(model.n_space(), model.n_time(), ab.offset + ab.slope * c);
    const MatrixXd h = synth::toy_simulate(cfg.sim, x, t);
    for (std::size_t k = 0; k < cfg.outputs.size(); ++k) {
      r.values[k].row(i) = synth::output_values(cfg.sim, cfg.outputs[k].toy, h).transpose();
    }
    for (Index t2 = 0; t2 < cfg.sim.n_time; ++t2) r.volume_series(i, t2) = synth::ice_volume(h.col(t2), cfg.sim.cell_area);
  }
  return r;
}

// ------------------------------------------------------------ pipeline

Pipeline::Pipeline(PipelineConfig cfg, fs::path out) : cfg_(std::move(cfg)), out_(std::move(out)) {
  fs::create_directories(out_);
}

fs::path Pipeline::wave_dir(int k) const { return out_ / ("wave_" + std::to_string(k)); }

const MatrixXd& Pipeline::ensemble() {
  if (!ensemble_) ensemble_ = io::read_matrix_csv(out_ / "data" / "ensemble.csv");
  return *ensemble_;
}

const ObservationSet& Pipeline::fit_observations() {
  if (!fit_obs_) {
    fit_obs_ = read_observations_csv(out_ / "data" / "fit_observations.csv", cfg_.sim.n_space(), cfg_.sim.n_time);
  }
  return *fit_obs_;
}

const ObservationSet& Pipeline::observations() {
  if (!obs_) {
    const fs::path p = out_ / "data" / "observations.csv";
    if (cfg_.synthetic && !fs::exists(p)) throw PreconditionError("no boundary observations yet; run the truth stage first");
    obs_ = read_observations_csv(p, cfg_.sim.n_space(), cfg_.sim.n_time);
  }
  return *obs_;
}

const bc::BoundaryModel& Pipeline::model() {
  if (!model_) model_ = bc::load_model(out_ / "model");
  return *model_;
}

namespace {
bc::GenerationInputs covariances(const PipelineConfig& cfg, const ObservationSet& obs) {
  bc::GenerationInputs in;
  in.sigma_s = bc::squared_exponential_space_cov(bc::grid_coordinates(cfg.sim.nx, cfg.sim.ny), cfg.space_length_scale);
  in.sigma_t = bc::squared_exponential_time_cov(cfg.sim.n_time, cfg.time_length_scale, cfg.time_variance);
  in.sigma_t_obs = obs.time_error_variance().asDiagonal();
  return in;
}
}  // namespace

bc::GenerationInputs Pipeline::generation_inputs() {
  bc::GenerationInputs in = covariances(cfg_, observations());
  if (cfg_.smoothing && (model_ || fs::exists(out_ / "model"))) in.smoothing = bc::default_smoothing(model());
  return in;
}

hm::Box Pipeline::box() {
  const auto& m = model();
  const Index np = cfg_.sim.n_params(), nc = m.n_coefficients();
  hm::Box b{VectorXd(np + nc), VectorXd(np + nc)};
  for (Index k = 0; k < np; ++k) {
    b.lo[k] = cfg_.sim.params[static_cast<std::size_t>(k)].lo;
    b.hi[k] = cfg_.sim.params[static_cast<std::size_t>(k)].hi;
  }
  for (Index k = 0; k < nc; ++k) {
    b.lo[np + k] = m.bounds()[static_cast<std::size_t>(k)].lo;
    b.hi[np + k] = m.bounds()[static_cast<std::size_t>(k)].hi;
  }
  return b;
}

void Pipeline::fit_temporal() {
  const Index ns = cfg_.sim.n_space(), nt = cfg_.sim.n_time;
  fs::create_directories(out_ / "data");
  model_.reset();
  state_.reset();
  obs_.reset();
  if (cfg_.synthetic) {
    const auto ens = synth::synthetic_ensemble(cfg_.sim, cfg_.ensemble_members, cfg_.stage_seed("ensemble"), cfg_.cell_noise);
    const FieldVector planted = synth::planted_field(cfg_.sim, ens, cfg_.stage_seed("planted"), cfg_.cell_noise);
    ensemble_ = ens.raw;
    fit_obs_ = synth::sparse_observations(planted, cfg_.sparsity, cfg_.stage_seed("observations"));
    io::write_field_csv(out_ / "data" / "planted.csv", planted);
    fs::remove(out_ / "data" / "observations.csv");
  } else {
    for (const auto& p : {cfg_.observations_csv, cfg_.ensemble_csv}) {
      if (!fs::exists(p)) throw IoError("input file not found: " + p.string());
    }
    ensemble_ = io::read_matrix_csv(cfg_.ensemble_csv);
    if (ensemble_->rows() != ns * nt) {
      throw ShapeError("ensemble has " + std::to_string(ensemble_->rows()) + " rows, grid needs " + std::to_string(ns * nt));
    }
    fit_obs_ = read_observations_csv(cfg_.observations_csv, ns, nt);
    obs_ = fit_obs_;
    write_observations_csv(out_ / "data" / "observations.csv", *obs_);
  }
  io::write_matrix_csv(out_ / "data" / "ensemble.csv", *ensemble_);
  write_observations_csv(out_ / "data" / "fit_observations.csv", *fit_obs_);

  const auto ens = basis::CentredEnsemble::from_raw(*ensemble_);
  bc::BoundaryModel m(FieldVector(ns, nt, ens.mean()), bc::make_periods(nt, cfg_.period_boundaries));
  m.ensemble_hash = ens.hash();
  const auto inputs = covariances(cfg_, *fit_obs_);

  // Anchors: the best-observed sites, imputed to complete series.
  const ObservationSet o = fit_obs_->restricted_to_observed();
  std::vector<Index> locs = o.observed_locations();
  if (static_cast<Index>(locs.size()) < cfg_.n_anchors) throw DataError("fewer observed sites than anchors");
  std::vector<Index> order(locs.size());
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
    return o.count_at(locs[static_cast<std::size_t>(a)]) > o.count_at(locs[static_cast<std::size_t>(b)]);
  });
  order.resize(static_cast<std::size_t>(cfg_.n_anchors));
  std::sort(order.begin(), order.end());
  std::vector<Index> anchors;
  for (Index k : order) anchors.push_back(locs[static_cast<std::size_t>(k)]);
  const kron::KroneckerCov marginal(kron::submatrix(inputs.sigma_s, locs, locs), inputs.sigma_t + inputs.sigma_t_obs);
  const FieldVector z = kron::impute_missing(o, m.mu(), marginal);
  const FieldVector anchor_series = kron::restrict_locations(z, order);

  json report = {{"anchors", anchors}, {"periods", json::array()}};
  for (Index p = 0; p < static_cast<Index>(m.periods().size()); ++p) {
    const bc::Period per = m.periods()[static_cast<std::size_t>(p)];
    const auto w = bc::temporal_fit_weight(inputs.sigma_s, anchors, inputs.sigma_t_obs, per);
    const auto fit = bc::fit_temporal_basis(ens, ns, nt, anchor_series, anchors, per, p, w, cfg_.n_t);
    for (auto& v : bc::lift_temporal(ens, ns, nt, fit, m.periods())) m.add_temporal({p, std::move(v)});
    m.lift_matrices.push_back(fit.lift_matrix);
    m.lift_periods.push_back(p);
    report["periods"].push_back({{"period", p}, {"error", fit.error}, {"truncated_error", fit.truncated_error}});
  }
  bc::save_model(m, out_ / "model_temporal");
  write_json(out_ / "model_temporal" / "fit_report.json", report);
}

void Pipeline::fit_spatial() {
  const Index ns = cfg_.sim.n_space(), nt = cfg_.sim.n_time;
  bc::BoundaryModel m = bc::load_model(out_ / "model_temporal");
  const auto ens = basis::CentredEnsemble::from_raw(ensemble());
  if (ens.hash() != m.ensemble_hash) throw ConsistencyError("model_temporal was fitted to a different ensemble");
  const ObservationSet& obs = fit_observations();
  const auto inputs = covariances(cfg_, obs);

  // Holdout sites need data in every period; fit sites are used in the
  // periods where they have data.
  const std::vector<bc::Period>& periods = m.periods();
  auto observed_in = [&](Index site, const bc::Period& p) {
    for (const auto& e : obs.entries()) {
      if (e.location == site && p.contains(e.time)) return true;
    }
    return false;
  };
  std::vector<Index> sites = obs.restricted_to_observed().observed_locations();
  std::vector<Index> eligible;
  for (Index s : sites) {
    if (std::all_of(periods.begin(), periods.end(), [&](const bc::Period& p) { return observed_in(s, p); })) {
      eligible.push_back(s);
    }
  }
  if (static_cast<Index>(eligible.size()) < cfg_.n_holdout) {
    throw DataError("only " + std::to_string(eligible.size()) + " sites are observed in every period; n_holdout is " +
                    std::to_string(cfg_.n_holdout));
  }
  std::mt19937_64 rng(cfg_.stage_seed("holdout"));
  std::shuffle(eligible.begin(), eligible.end(), rng);
  std::vector<Index> holdout(eligible.begin(), eligible.begin() + cfg_.n_holdout);
  std::sort(holdout.begin(), holdout.end());
  std::vector<Index> fit_sites;
  std::set_difference(sites.begin(), sites.end(), holdout.begin(), holdout.end(), std::back_inserter(fit_sites));

  json report = {{"fit_locations", fit_sites}, {"holdout_locations", holdout}, {"periods", json::array()}};
  const std::vector<bc::TemporalVector> temporal = m.temporal();
  for (Index p = 0; p < static_cast<Index>(periods.size()); ++p) {
    const bc::Period& per = periods[static_cast<std::size_t>(p)];
    std::vector<FieldVector> tv;
    for (const auto& t : temporal) {
      if (t.period == p) tv.push_back(t.field);
    }
    if (cfg_.n_s == 0) continue;
    std::vector<Index> fit_here;
    for (Index s : fit_sites) {
      if (observed_in(s, per)) fit_here.push_back(s);
    }
    const auto sf = bc::fit_spatial_basis(ens, ns, nt, obs, tv, per, p, fit_here, holdout, inputs.sigma_s, cfg_.n_s);
    for (const auto& pat : sf.patterns) m.add_spatial({p, pat, false});
    report["periods"].push_back({{"period", p},
                                 {"fit_locations", fit_here.size()},
                                 {"fit_error", sf.fit_error},
                                 {"holdout_error_before", sf.holdout_error_before},
                                 {"holdout_error", sf.holdout_error}});
  }
  if (cfg_.expert.enabled) {
    m = bc::append_expert_vector(m, expert_pattern(cfg_.sim, cfg_.expert.pattern), cfg_.expert.period,
                                 {cfg_.expert.lo, cfg_.expert.hi});
  }

  // Bounds from the spread of the ensemble members' own coefficients.
  const MatrixXd b = m.basis_matrix();
  const MatrixXd member_coef = b.colPivHouseholderQr().solve(ens.data());
  std::vector<bc::CoefficientBounds> bounds = m.bounds();
  const Index nt_vec = m.n_temporal();
  for (Index k = 0; k < m.n_coefficients(); ++k) {
    const bool expert = k >= nt_vec && m.spatial()[static_cast<std::size_t>(k - nt_vec)].expert;
    if (expert) continue;
    const double r = member_coef.row(k).cwiseAbs().maxCoeff();
    const double half = r > 0.0 ? cfg_.coefficient_bound_scale * r : 1.0;
    bounds[static_cast<std::size_t>(k)] = {-half, half};
  }
  m.set_bounds(bounds);
  m.check_invariants();
  bc::save_model(m, out_ / "model");
  report["n_coefficients"] = m.n_coefficients();
  report["coefficient_names"] = m.coefficient_names();
  write_json(out_ / "model" / "fit_report.json", report);
  model_ = std::move(m);
}

void Pipeline::make_truth() {
  if (!cfg_.synthetic) throw ConfigError("truth is only defined for synthetic data");
  const auto& m = model();
  Truth t;
  t.x = synth::sample_parameters(cfg_.sim, cfg_.stage_seed("truth_x"));
  t.c = best_fit_coefficients(m, fit_observations());
  // Boundary observations of the truth on the same sparse mask.
  obs_ = synth::observe_like(fit_observations(), bc::mean_function(m, t.c), cfg_.stage_seed("observations/truth"));
  write_observations_csv(out_ / "data" / "observations.csv", *obs_);
  const ObservationSet& obs = *obs_;
  const auto in = generation_inputs();
  const FieldVector boundary = bc::generate_boundary(m, t.c, obs, in);
  const MatrixXd h = synth::toy_simulate(cfg_.sim, t.x, boundary);
  json outs = json::object();
  for (const auto& o : cfg_.outputs) {
    const VectorXd exact = synth::output_values(cfg_.sim, o.toy, h);
    const double var = o.spec.kind == hm::OutputKind::kScalar ? o.spec.sigma_e[0] : 0.0;
    const VectorXd observed = synth::observed_output(cfg_.sim, o.toy, h, var, cfg_.stage_seed("noise/" + o.spec.id),
                                                     o.spec.threshold);
    outs[o.spec.id] = {{"observed", vec_json(observed)}, {"exact", o.spec.kind == hm::OutputKind::kScalar ? json(vec_json(exact)) : json(vec_json(synth::extent_region(h.col(o.toy.time), o.toy.cells, o.spec.threshold).cast<double>()))}};
  }
  json volumes = json::array();
  for (Index s = 0; s < h.cols(); ++s) volumes.push_back(synth::ice_volume(h.col(s), cfg_.sim.cell_area));
  write_json(out_ / "truth.json", {{"x", vec_json(t.x)}, {"c", vec_json(t.c)}, {"outputs", outs}, {"volume_series", volumes}});
}

std::optional<Truth> Pipeline::truth() {
  const fs::path p = out_ / "truth.json";
  if (!fs::exists(p)) return std::nullopt;
  const json j = read_json(p);
  Truth t;
  t.x = json_vec(j.at("x"));
  t.c = json_vec(j.at("c"));
  for (auto it = j.at("outputs").begin(); it != j.at("outputs").end(); ++it) {
    t.ids.push_back(it.key());
    t.observed.push_back(json_vec(it.value().at("observed")));
    t.exact.push_back(json_vec(it.value().at("exact")));
  }
  return t;
}

std::vector<hm::OutputSpec> Pipeline::output_specs() {
  std::optional<Truth> t;
  std::vector<hm::OutputSpec> specs;
  for (const auto& o : cfg_.outputs) {
    hm::OutputSpec s = o.spec;
    if (!o.has_obs) {
      if (!t) t = truth();
      if (!t) throw PreconditionError("output " + s.id + " has no observation; run the truth stage first");
      const auto it = std::find(t->ids.begin(), t->ids.end(), s.id);
      if (it == t->ids.end()) throw DataError("truth.json has no entry for output " + s.id);
      s.obs = t->observed[static_cast<std::size_t>(it - t->ids.begin())];
    }
    s.validate();
    specs.push_back(std::move(s));
  }
  return specs;
}

void Pipeline::prior_space() {
  const auto& m = model();
  const Index nc = m.n_coefficients();
  const hm::Box full = box();
  const hm::Box cbox{full.lo.tail(nc), full.hi.tail(nc)};
  const ObservationSet& obs = observations();
  const auto res = hm::prior_coeff_space(m, obs, cbox, cfg_.prior_j, cfg_.prior_samples, cfg_.stage_seed("prior_space"));
  const auto pred = hm::CoefficientPredicate::build(m, obs.restricted_to_observed(), cfg_.prior_j, 0);
  json q = json::array();
  for (Index g = 0; g < res.quantiles.rows(); ++g) {
    q.push_back({{"location", res.locations[static_cast<std::size_t>(g)]},
                 {"q05", res.quantiles(g, 0)},
                 {"q50", res.quantiles(g, 1)},
                 {"q95", res.quantiles(g, 2)}});
  }
  json summary = {{"n_samples", res.n_samples}, {"n_accepted", res.accepted.rows()}, {"acceptance_rate", res.acceptance_rate},
                  {"j", cfg_.prior_j},          {"scaled_quantiles", q},          {"warnings", res.warnings}};

  MatrixXd pool;
  const bool chain = cfg_.prior_sampler == "hit_and_run" ||
                     (cfg_.prior_sampler == "auto" && res.accepted.rows() < cfg_.prior_pool);
  if (!chain) {
    pool = res.accepted.topRows(std::min(res.accepted.rows(), cfg_.prior_pool));
    summary["sampler"] = "rejection";
  } else {
    // Start from the weighted least-squares fit, or any accepted draw.
    VectorXd start = best_fit_coefficients(m, obs);
    if (!pred.score(start).keep) {
      if (res.accepted.rows() == 0) {
        summary["sampler"] = "none";
        fs::create_directories(out_ / "prior_space");
        write_json(out_ / "prior_space" / "summary.json", summary);
        io::write_matrix_csv(out_ / "prior_space" / "accepted.csv", MatrixXd(0, nc));
        throw EmptyNroyError((res.warnings.empty() ? std::string("prior coefficient space is empty") : res.warnings.front()) +
                             "; the least-squares fit is also outside C");
      }
      start = res.accepted.row(0).transpose();
    }
    hm::ChainOptions co;
    co.n_draws = cfg_.prior_pool;
    co.burn_in = cfg_.prior_burn_in;
    co.thin = cfg_.prior_thin;
    co.seed = cfg_.stage_seed("prior_space/chain");
    pool = hm::sample_coefficient_space(pred, cbox, start, co);
    summary["sampler"] = "hit_and_run";
    summary["chain"] = {{"burn_in", co.burn_in}, {"thin", co.thin}};
  }
  summary["pool"] = pool.rows();
  if (auto t = truth()) summary["truth_in_C"] = pred.score(t->c).keep;
  fs::create_directories(out_ / "prior_space");
  io::write_matrix_csv(out_ / "prior_space" / "accepted.csv", pool);
  write_json(out_ / "prior_space" / "summary.json", summary);
  if (pool.rows() == 0) throw EmptyNroyError(res.warnings.empty() ? "prior coefficient space is empty" : res.warnings.front());
}

void Pipeline::design(int k) {
  cfg_.wave(k);
  if (k > 1) {
    write_next_design(k - 1);
    return;
  }
  const auto& m = model();
  const Index np = cfg_.sim.n_params(), nc = m.n_coefficients();
  const MatrixXd pool = io::read_matrix_csv(out_ / "prior_space" / "accepted.csv");
  if (pool.rows() == 0) throw EmptyNroyError("prior coefficient space is empty");
  const hm::Box full = box();
  std::vector<std::string> warnings;
  const hm::Box xbox{full.lo.head(np), full.hi.head(np)};
  const MatrixXd xs = hm::lhs_design(xbox, cfg_.n_points, cfg_.stage_seed("design/1/x"), 20, &warnings);
  // Space-filling choice of coefficient vectors from the accepted pool.
  const hm::Box cbox{full.lo.tail(nc), full.hi.tail(nc)};
  std::vector<Index> rows = hm::maximin_select(cbox.to_unit(pool), MatrixXd(0, nc), cfg_.n_points);
  std::mt19937_64 rng(cfg_.stage_seed("design/1/c"));
  std::uniform_int_distribution<Index> pick(0, pool.rows() - 1);
  while (static_cast<Index>(rows.size()) < cfg_.n_points) rows.push_back(pick(rng));
  std::shuffle(rows.begin(), rows.end(), rng);
  MatrixXd d(cfg_.n_points, np + nc);
  for (Index i = 0; i < cfg_.n_points; ++i) {
    d.row(i) << xs.row(i), pool.row(rows[static_cast<std::size_t>(i)]);
  }
  fs::create_directories(wave_dir(1));
  io::write_matrix_csv(wave_dir(1) / "design.csv", d);
  write_json(wave_dir(1) / "design.json", {{"wave", 1}, {"n_points", d.rows()}, {"warnings", warnings}});
}

void Pipeline::simulate(int k) {
  const MatrixXd design = io::read_matrix_csv(wave_dir(k) / "design.csv");
  const auto r = simulate_design(cfg_, model(), observations(), generation_inputs(), design);
  json runs = json::array();
  for (Index i = 0; i < design.rows(); ++i) {
    runs.push_back({{"row", i}, {"hash", io::content_hash(VectorXd(design.row(i).transpose()))}});
  }
  for (std::size_t o = 0; o < r.ids.size(); ++o) io::write_matrix_csv(wave_dir(k) / ("output_" + r.ids[o] + ".csv"), r.values[o]);
  io::write_matrix_csv(wave_dir(k) / "volume_series.csv", r.volume_series);
  write_json(wave_dir(k) / "manifest.json", {{"wave", k}, {"outputs", r.ids}, {"runs", runs}});
}

hm::WaveState& Pipeline::state() {
  if (!state_) throw PreconditionError("no wave state loaded");
  return *state_;
}

hm::WaveReport Pipeline::wave(int k) {
  const WaveDef& def = cfg_.wave(k);
  const auto& m = model();
  const Index np = cfg_.sim.n_params();
  const bool have_prev = state_ && state_->reports.back().wave == k - 1;
  if (!have_prev) {
    if (k == 1) {
      hm::NroySpace base(box());
      base.set_coefficient_pool(io::read_matrix_csv(out_ / "prior_space" / "accepted.csv"), np);
      state_ = std::make_unique<hm::WaveState>(std::move(base), cfg_.mc_samples, cfg_.stage_seed("monte_carlo"));
      state_->add_coefficient_space(hm::CoefficientPredicate::build(m, observations(), cfg_.prior_j, np));
    } else {
      state_ = std::make_unique<hm::WaveState>(hm::load_state(out_ / ("state_" + std::to_string(k - 1))));
    }
  }
  hm::WaveData data;
  data.design = io::read_matrix_csv(wave_dir(k) / "design.csv");
  const auto specs = output_specs();
  for (const auto& s : specs) {
    if (s.in_wave(k)) data.outputs[s.id] = io::read_matrix_csv(wave_dir(k) / ("output_" + s.id + ".csv"));
  }
  hm::WaveConfig wc;
  wc.wave = k;
  wc.combine = def.combine;
  wc.j = def.j;
  wc.fit = cfg_.emulator;
  wc.seed = cfg_.stage_seed("wave/" + std::to_string(k));
  const hm::WaveReport rep = hm::run_wave(*state_, data, specs, wc);
  hm::save_state(*state_, out_ / ("state_" + std::to_string(k)), cfg_.mc_samples, cfg_.stage_seed("monte_carlo"));
  json rj = json::parse(rep.to_json());
  if (auto t = truth()) {
    const VectorXd tj = t->joined();
    json terms = json::object();
    for (const auto& f : state_->fitted.back()) {
      const auto s = f.score(tj);
      terms[f.spec.id] = {{"impl", s.impl}, {"scaled", s.scaled}, {"keep", s.keep}};
    }
    rj["truth"] = {{"in_nroy", state_->space.contains(tj)}, {"terms", terms}};
  }
  write_json(wave_dir(k) / "report.json", rj);
  for (const auto& f : state_->fitted.back()) {
    if (f.scalar.size() == 1) f.scalar[0].write_loo_csv(wave_dir(k) / ("loo_" + f.spec.id + ".csv"));
  }
  if (k < static_cast<int>(cfg_.waves.size())) write_next_design(k);
  return rep;
}

void Pipeline::write_next_design(int k) {
  if (!state_ || state_->reports.back().wave != k) {
    state_ = std::make_unique<hm::WaveState>(hm::load_state(out_ / ("state_" + std::to_string(k))));
  }
  hm::ResampleOptions o;
  o.n_points = cfg_.n_points;
  o.frac_best = cfg_.frac_best;
  o.seed = cfg_.stage_seed("design/" + std::to_string(k + 1));
  o.pool_target = 3 * cfg_.n_points;
  o.max_draws = 400000;
  const MatrixXd members = state_->tracker.member_points();
  const auto r = hm::nroy_resample(state_->space, o, &members);
  fs::create_directories(wave_dir(k + 1));
  io::write_matrix_csv(wave_dir(k + 1) / "design.csv", r.points);
  write_json(wave_dir(k + 1) / "design.json", {{"wave", k + 1},
                                               {"n_points", r.points.rows()},
                                               {"pool_size", r.pool_size},
                                               {"draws", r.draws},
                                               {"warnings", r.warnings}});
}

std::string Pipeline::report() {
  json waves = json::array();
  std::vector<double> fractions;
  std::vector<bool> truth_kept;
  for (const auto& w : cfg_.waves) {
    const fs::path p = wave_dir(w.wave) / "report.json";
    if (!fs::exists(p)) break;
    json r = read_json(p);
    fractions.push_back(r.at("nroy_fraction").get<double>());
    if (r.contains("truth")) truth_kept.push_back(r["truth"].at("in_nroy").get<bool>());
    waves.push_back(r);
  }
  if (waves.empty()) throw PreconditionError("no wave reports under " + out_.string());
  bool decreasing = true;
  double prev = 1.0;
  for (double f : fractions) {
    decreasing = decreasing && f < prev;
    prev = f;
  }
  json rep = {{"waves", waves}, {"nroy_fractions", fractions}, {"strictly_decreasing", decreasing}};
  if (fs::exists(out_ / "prior_space" / "summary.json")) rep["prior_space"] = read_json(out_ / "prior_space" / "summary.json");
  if (!truth_kept.empty()) {
    rep["truth_retained"] = std::all_of(truth_kept.begin(), truth_kept.end(), [](bool b) { return b; }) &&
                            truth_kept.size() == fractions.size();
  }
  write_json(out_ / "report.json", rep);

  std::string csv = "wave,nroy_fraction,standard_error,design_size\n";
  for (const auto& w : waves) {
    csv += std::to_string(w.at("wave").get<int>()) + "," + io::format_double(w.at("nroy_fraction").get<double>()) + "," +
           io::format_double(w.at("standard_error").get<double>()) + "," + std::to_string(w.at("design_size").get<Index>()) + "\n";
  }
  io::write_text(out_ / "summary.csv", csv);

  // Plots: NROY fraction per wave and volume fans per wave.
  Series fr{"NROY fraction", {}, {}, "#d62728"};
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    fr.x.push_back(static_cast<double>(i + 1));
    fr.y.push_back(std::max(fractions[i], 1e-6));
  }
  io::write_text(out_ / "nroy_fraction.svg", svg_chart("NROY fraction by wave", "wave", "fraction of X x C", {}, {fr}, true));

  static const char* colours[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b"};
  std::vector<Band> bands;
  std::vector<Series> lines;
  for (std::size_t w = 0; w < waves.size(); ++w) {
    const fs::path p = wave_dir(static_cast<int>(w) + 1) / "volume_series.csv";
    if (!fs::exists(p)) continue;
    const MatrixXd v = io::read_matrix_csv(p);
    Band b;
    b.colour = colours[w % 5];
    for (Index t = 0; t < v.cols(); ++t) {
      b.x.push_back(static_cast<double>(t));
      b.lo.push_back(v.col(t).minCoeff());
      b.hi.push_back(v.col(t).maxCoeff());
    }
    bands.push_back(b);
    Series med{"wave " + std::to_string(w + 1), b.x, {}, b.colour};
    for (Index t = 0; t < v.cols(); ++t) {
      std::vector<double> col(v.col(t).data(), v.col(t).data() + v.rows());
      std::nth_element(col.begin(), col.begin() + static_cast<std::ptrdiff_t>(col.size() / 2), col.end());
      med.y.push_back(col[col.size() / 2]);
    }
    lines.push_back(med);
  }
  if (fs::exists(out_ / "truth.json")) {
    const json t = read_json(out_ / "truth.json");
    Series s{"truth", {}, t.at("volume_series").get<std::vector<double>>(), "#000000", true};
    for (std::size_t i = 0; i < s.y.size(); ++i) s.x.push_back(static_cast<double>(i));
    lines.push_back(s);
  }
  if (!bands.empty()) io::write_text(out_ / "volume_fan.svg", svg_chart("Ice volume by wave", "time step", "volume", bands, lines));
  return rep.dump(2);
}

std::string Pipeline::run_all() {
  fit_temporal();
  fit_spatial();
  if (cfg_.synthetic) make_truth();
  prior_space();
  design(1);
  for (const auto& w : cfg_.waves) {
    simulate(w.wave);
    wave(w.wave);
  }
  return report();
}

// ------------------------------------------------------------ svg

namespace {
std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string label(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}
}  // namespace

std::string svg_chart(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                      const std::vector<Band>& bands, const std::vector<Series>& series, bool log_y) {
  const double w = 640, h = 400, l = 70, r = 20, t = 40, b = 50;
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  auto ty = [&](double y) { return log_y ? std::log10(std::max(y, 1e-300)) : y; };
  auto extend = [&](const std::vector<double>& xs, const std::vector<double>& ys) {
    for (double x : xs) x0 = std::min(x0, x), x1 = std::max(x1, x);
    for (double y : ys) y0 = std::min(y0, ty(y)), y1 = std::max(y1, ty(y));
  };
  for (const auto& bd : bands) extend(bd.x, bd.lo), extend(bd.x, bd.hi);
  for (const auto& s : series) extend(s.x, s.y);
  if (x0 > x1) x0 = 0, x1 = 1;
  if (y0 > y1) y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  const double pad = 0.05 * (y1 - y0);
  y0 = (!log_y && y0 >= 0.0) ? std::max(0.0, y0 - pad) : y0 - pad;
  y1 += pad;
  auto px = [&](double x) { return l + (x - x0) / (x1 - x0) * (w - l - r); };
  auto py = [&](double y) { return h - b - (ty(y) - y0) / (y1 - y0) * (h - t - b); };

  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"640\" height=\"400\" fill=\"white\"/>\n";
  s += "<text x=\"320\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + title + "</text>\n";
  s += "<line x1=\"" + num(l) + "\" y1=\"" + num(h - b) + "\" x2=\"" + num(w - r) + "\" y2=\"" + num(h - b) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + num(l) + "\" y1=\"" + num(t) + "\" x2=\"" + num(l) + "\" y2=\"" + num(h - b) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = x0 + (x1 - x0) * i / 4.0;
    const double yv = y0 + (y1 - y0) * i / 4.0;
    const double ylab = log_y ? std::pow(10.0, yv) : yv;
    s += "<text x=\"" + num(px(xv)) + "\" y=\"" + num(h - b + 18) + "\" text-anchor=\"middle\">" + label(xv) + "</text>\n";
    s += "<text x=\"" + num(l - 6) + "\" y=\"" + num(h - b - (yv - y0) / (y1 - y0) * (h - t - b) + 4) +
         "\" text-anchor=\"end\">" + label(ylab) + "</text>\n";
  }
  s += "<text x=\"" + num((l + w - r) / 2) + "\" y=\"" + num(h - 12) + "\" text-anchor=\"middle\">" + xlabel + "</text>\n";
  s += "<text x=\"16\" y=\"" + num((t + h - b) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " +
       num((t + h - b) / 2) + ")\">" + ylabel + "</text>\n";
  for (const auto& bd : bands) {
    std::string pts;
    for (std::size_t i = 0; i < bd.x.size(); ++i) pts += num(px(bd.x[i])) + "," + num(py(bd.hi[i])) + " ";
    for (std::size_t i = bd.x.size(); i-- > 0;) pts += num(px(bd.x[i])) + "," + num(py(bd.lo[i])) + " ";
    s += "<polygon points=\"" + pts + "\" fill=\"" + bd.colour + "\" fill-opacity=\"" + num(bd.opacity) + "\" stroke=\"none\"/>\n";
  }
  double ly = t + 8;
  for (const auto& se : series) {
    std::string pts;
    for (std::size_t i = 0; i < se.x.size() && i < se.y.size(); ++i) pts += num(px(se.x[i])) + "," + num(py(se.y[i])) + " ";
    s += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + se.colour + "\" stroke-width=\"2\"" +
         (se.dashed ? " stroke-dasharray=\"6,4\"" : "") + "/>\n";
    s += "<text x=\"" + num(w - r - 110) + "\" y=\"" + num(ly) + "\" fill=\"" + se.colour + "\">" + se.label + "</text>\n";
    ly += 16;
  }
  s += "</svg>\n";
  return s;
}

}  // namespace hmbound::pipeline
