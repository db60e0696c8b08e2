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

#include "hmbound/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace hmbound::synth {

namespace {
constexpr double kPi = 3.14159265358979323846;

double logistic(double u) { return 1.0 / (1.0 + std::exp(-u)); }
double softplus(double u) { return u > 30.0 ? u : std::log1p(std::exp(u)); }
}  // namespace

std::vector<ParamSpec> default_params() {
  return {{"accumulation", 4.0, 12.0}, {"melt", 4.0, 16.0},   {"threshold", -4.0, 0.0}, {"sensitivity", 0.5, 1.5},
          {"lapse", 0.0, 0.02},        {"diffusion", 0.02, 0.2}, {"basal", 0.0, 2.0}};
}

void ToySimulatorConfig::validate() const {
  if (nx < 1 || ny < 1 || nx * ny < 4) throw ConfigError("toy simulator: grid needs at least 4 cells");
  if (n_time < 1) throw ConfigError("toy simulator: need at least one step");
  if (params.size() != 7) throw ConfigError("toy simulator: expected 7 physics parameters");
  for (const auto& p : params) {
    if (!std::isfinite(p.lo) || !std::isfinite(p.hi) || p.lo > p.hi) {
      throw ConfigError("toy simulator: bad bounds for parameter " + p.name);
    }
  }
  if (params[5].hi >= 0.25) throw ConfigError("toy simulator: diffusion must stay below 0.25");
  if (!(cell_area > 0.0)) throw ConfigError("toy simulator: cell_area must be positive");
}

MatrixXd toy_simulate(const ToySimulatorConfig& cfg, const VectorXd& x, const FieldVector& temperature) {
  const Index ns = cfg.n_space();
  temperature.require_shape(ns, cfg.n_time, "toy_simulate");
  if (x.size() != 7) throw ShapeError("toy_simulate: expected 7 parameters, got " + std::to_string(x.size()));
  if (!x.allFinite() || !temperature.all_finite()) throw DataError("toy_simulate: non-finite input");
  const double acc = x[0], melt = x[1], t0 = x[2], sens = x[3], lapse = x[4], diff = x[5], basal = x[6];

  MatrixXd out(ns, cfg.n_time);
  VectorXd h = VectorXd::Zero(ns), next(ns);
  for (Index t = 0; t < cfg.n_time; ++t) {
    for (Index j = 0; j < cfg.ny; ++j) {
      for (Index i = 0; i < cfg.nx; ++i) {
        const Index s = j * cfg.nx + i;
        const double hs = h[s];
        // Zero-flux edges: a missing neighbour contributes its own value.
        const double lap = (i > 0 ? h[s - 1] : hs) + (i + 1 < cfg.nx ? h[s + 1] : hs) +
                           (j > 0 ? h[s - cfg.nx] : hs) + (j + 1 < cfg.ny ? h[s + cfg.nx] : hs) - 4.0 * hs;
        const double u = sens * (temperature(s, t) - lapse * hs - t0);
        const double smb = acc * logistic(-u) - melt * softplus(u);
        next[s] = std::max(0.0, hs + smb + diff * lap - basal);
      }
    }
    h.swap(next);
    out.col(t) = h;
  }
  return out;
}

double ice_volume(const VectorXd& thickness, double cell_area) {
  if ((thickness.array() < 0.0).any()) throw DataError("ice_volume: negative thickness");
  return thickness.sum() * cell_area;
}

Eigen::VectorXi extent_region(const VectorXd& thickness, const std::vector<Index>& mask, double threshold) {
  if (mask.empty()) throw ConfigError("extent_region: empty region mask");
  Eigen::VectorXi out(static_cast<Index>(mask.size()));
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i] < 0 || mask[i] >= thickness.size()) throw IndexError("extent_region: cell outside the grid");
    out[static_cast<Index>(i)] = thickness[mask[i]] <= threshold ? 0 : 1;
  }
  return out;
}

std::vector<Index> rect_region(Index nx, Index ny, Index x0, Index x1, Index y0, Index y1) {
  std::vector<Index> cells;
  for (Index j = std::max<Index>(0, y0); j < std::min(ny, y1); ++j) {
    for (Index i = std::max<Index>(0, x0); i < std::min(nx, x1); ++i) cells.push_back(j * nx + i);
  }
  return cells;
}

// ------------------------------------------------------------ synthetic data

namespace {

struct Structure {
  VectorXd background;
  MatrixXd patterns;
  MatrixXd modes;
  VectorXd sd;
};

Structure structure(const ToySimulatorConfig& cfg) {
  const Index ns = cfg.n_space(), nt = cfg.n_time;
  Structure st;
  st.background.resize(ns * nt);
  st.patterns.resize(ns, 4);
  st.modes.resize(nt, 4);
  for (Index j = 0; j < cfg.ny; ++j) {
    for (Index i = 0; i < cfg.nx; ++i) {
      const Index s = j * cfg.nx + i;
      const double x = cfg.nx > 1 ? static_cast<double>(i) / static_cast<double>(cfg.nx - 1) : 0.5;
      const double y = cfg.ny > 1 ? static_cast<double>(j) / static_cast<double>(cfg.ny - 1) : 0.5;
      st.patterns.row(s) << 1.0 + 0.5 * x, 1.0 - 0.5 * y, std::cos(kPi * x), 0.5 + y;
      for (Index t = 0; t < nt; ++t) {
        const double tau = nt > 1 ? static_cast<double>(t) / static_cast<double>(nt - 1) : 0.0;
        st.background[s * nt + t] = -6.0 + 10.0 * tau - 12.0 * y + 3.0 * std::sin(kPi * x);
      }
    }
  }
  for (Index t = 0; t < nt; ++t) {
    const double tau = nt > 1 ? static_cast<double>(t) / static_cast<double>(nt - 1) : 0.0;
    st.modes.row(t) << 1.0, tau, std::sin(2.0 * kPi * tau), std::exp(-std::pow((tau - 0.5) / 0.17, 2));
  }
  st.sd.resize(4);
  st.sd << 1.5, 2.0, 1.0, 1.5;
  return st;
}

VectorXd draw_member(const Structure& st, Index ns, Index nt, std::mt19937_64& rng, double cell_noise) {
  std::normal_distribution<double> n(0.0, 1.0);
  VectorXd a(4);
  for (Index k = 0; k < 4; ++k) a[k] = st.sd[k] * n(rng);
  VectorXd f = st.background;
  for (Index s = 0; s < ns; ++s) {
    for (Index t = 0; t < nt; ++t) {
      double v = 0.0;
      for (Index k = 0; k < 4; ++k) v += a[k] * st.patterns(s, k) * st.modes(t, k);
      f[s * nt + t] += v + cell_noise * n(rng);
    }
  }
  return f;
}

}  // namespace

SyntheticEnsemble synthetic_ensemble(const ToySimulatorConfig& cfg, Index members, std::uint64_t seed,
                                     double cell_noise) {
  if (members < 2) throw ConfigError("synthetic ensemble needs at least 2 members");
  const Structure st = structure(cfg);
  SyntheticEnsemble e;
  e.patterns = st.patterns;
  e.modes = st.modes;
  e.mode_sd = st.sd;
  e.background = st.background;
  e.raw.resize(cfg.n_space() * cfg.n_time, members);
  std::mt19937_64 rng(seed);
  for (Index m = 0; m < members; ++m) e.raw.col(m) = draw_member(st, cfg.n_space(), cfg.n_time, rng, cell_noise);
  return e;
}

FieldVector planted_field(const ToySimulatorConfig& cfg, const SyntheticEnsemble& ens, std::uint64_t seed,
                          double cell_noise) {
  Structure st{ens.background, ens.patterns, ens.modes, ens.mode_sd};
  std::mt19937_64 rng(seed);
  return FieldVector(cfg.n_space(), cfg.n_time, draw_member(st, cfg.n_space(), cfg.n_time, rng, cell_noise));
}

ObservationSet sparse_observations(const FieldVector& truth, const SparsityConfig& sp, std::uint64_t seed) {
  const Index ns = truth.n_space(), nt = truth.n_time();
  if (sp.n_sites < 1 || sp.n_sites > ns) throw ConfigError("sparse_observations: n_sites out of range");
  if (!(sp.fraction > 0.0) || sp.fraction > 1.0) throw ConfigError("sparse_observations: fraction must be in (0, 1]");
  if (sp.sd_lo < 0.0 || sp.sd_hi < sp.sd_lo) throw ConfigError("sparse_observations: bad error SD range");
  std::mt19937_64 rng(seed);
  std::vector<Index> cells(static_cast<std::size_t>(ns));
  std::iota(cells.begin(), cells.end(), Index{0});
  std::shuffle(cells.begin(), cells.end(), rng);
  std::vector<Index> sites(cells.begin(), cells.begin() + sp.n_sites);
  std::sort(sites.begin(), sites.end());

  const Index total = std::max(sp.n_sites, static_cast<Index>(std::llround(sp.fraction * static_cast<double>(sp.n_sites * nt))));
  // One guaranteed entry per site, the rest uniformly without replacement.
  std::vector<char> taken(static_cast<std::size_t>(sp.n_sites * nt), 0);
  std::uniform_int_distribution<Index> time(0, nt - 1);
  for (Index k = 0; k < sp.n_sites; ++k) taken[static_cast<std::size_t>(k * nt + time(rng))] = 1;
  std::vector<Index> free;
  for (Index e = 0; e < sp.n_sites * nt; ++e) {
    if (!taken[static_cast<std::size_t>(e)]) free.push_back(e);
  }
  std::shuffle(free.begin(), free.end(), rng);
  for (Index e = 0; e < total - sp.n_sites; ++e) taken[static_cast<std::size_t>(free[static_cast<std::size_t>(e)])] = 1;

  std::uniform_real_distribution<double> unif(sp.sd_lo, sp.sd_hi);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> sd(static_cast<std::size_t>(sp.n_sites));
  for (auto& v : sd) v = sp.sd_hi > 0.0 ? unif(rng) : 0.0;
  std::vector<Observation> entries;
  for (Index k = 0; k < sp.n_sites; ++k) {
    for (Index t = 0; t < nt; ++t) {
      if (!taken[static_cast<std::size_t>(k * nt + t)]) continue;
      const Index s = sites[static_cast<std::size_t>(k)];
      const double e = sd[static_cast<std::size_t>(k)];
      entries.push_back({s, t, truth(s, t) + e * normal(rng), e});
    }
  }
  return ObservationSet(ns, nt, entries, sites);
}

ObservationSet observe_like(const ObservationSet& mask, const FieldVector& truth, std::uint64_t seed) {
  truth.require_shape(mask.n_space(), mask.n_time(), "observe_like");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Observation> entries;
  for (const auto& e : mask.entries()) entries.push_back({e.location, e.time, truth(e.location, e.time) + e.error_sd * normal(rng), e.error_sd});
  return ObservationSet(mask.n_space(), mask.n_time(), entries, mask.locations());
}

VectorXd sample_parameters(const ToySimulatorConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.1, 0.9);
  VectorXd x(cfg.n_params());
  for (Index k = 0; k < x.size(); ++k) {
    const auto& p = cfg.params[static_cast<std::size_t>(k)];
    x[k] = p.lo + (p.hi - p.lo) * unif(rng);
  }
  return x;
}

VectorXd output_values(const ToySimulatorConfig& cfg, const ToyOutput& out, const MatrixXd& thickness) {
  if (out.time < 0 || out.time >= thickness.cols()) {
    throw IndexError("output " + out.id + ": time " + std::to_string(out.time) + " outside the run");
  }
  const VectorXd h = thickness.col(out.time);
  if (!out.binary) return VectorXd::Constant(1, ice_volume(h, cfg.cell_area));
  if (out.cells.empty()) throw ConfigError("output " + out.id + ": empty region mask");
  VectorXd v(static_cast<Index>(out.cells.size()));
  for (std::size_t i = 0; i < out.cells.size(); ++i) v[static_cast<Index>(i)] = h[out.cells[i]];
  return v;
}

VectorXd observed_output(const ToySimulatorConfig& cfg, const ToyOutput& out, const MatrixXd& thickness,
                         double noise_variance, std::uint64_t seed, double threshold) {
  if (out.binary) return extent_region(thickness.col(out.time), out.cells, threshold).cast<double>();
  VectorXd v = output_values(cfg, out, thickness);
  if (noise_variance > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, std::sqrt(noise_variance));
    v[0] += n(rng);
  }
  return v;
}

}  // namespace hmbound::synth
