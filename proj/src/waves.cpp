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

#include "hmbound/waves.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "hmbound/basis.hpp"

namespace hmbound::hm {

using json = nlohmann::json;

OutputKind parse_output_kind(const std::string& s) {
  if (s == "scalar") return OutputKind::kScalar;
  if (s == "binary" || s == "binary-region") return OutputKind::kBinaryRegion;
  throw ConfigError("unknown output kind '" + s + "' (expected scalar or binary-region)");
}

std::string to_string(OutputKind k) { return k == OutputKind::kScalar ? "scalar" : "binary-region"; }

bool OutputSpec::in_wave(int wave) const { return std::find(waves.begin(), waves.end(), wave) != waves.end(); }

void OutputSpec::validate() const {
  const std::string where = "output " + id;
  if (id.empty()) throw ConfigError("output spec without an id");
  if (ell < 1) throw ConfigError(where + ": ell must be >= 1");
  if (obs.size() != ell) {
    throw ConfigError(where + ": " + std::to_string(obs.size()) + " observed values for ell = " + std::to_string(ell));
  }
  bound();  // throws on a malformed or non-positive bound
  if (sigma_eta.size() != 0 && sigma_eta.size() != ell) throw ConfigError(where + ": sigma_eta length differs from ell");
  if (sigma_eta.size() && (sigma_eta.array() < 0.0).any()) throw ConfigError(where + ": sigma_eta must be >= 0");
  if (kind == OutputKind::kScalar) {
    if (sigma_e.size() != ell) throw ConfigError(where + ": sigma_e length differs from ell");
    if (!(sigma_e.array() > 0.0).all()) throw ConfigError(where + ": sigma_e must be > 0");
  } else {
    for (Index i = 0; i < ell; ++i) {
      if (obs[i] != 0.0 && obs[i] != 1.0) throw ConfigError(where + ": binary observations must be 0 or 1");
    }
    if (m_samples < 1) throw ConfigError(where + ": m_samples must be >= 1");
    if (basis_rank < 1) throw ConfigError(where + ": basis_rank must be >= 1");
  }
}

// ------------------------------------------------------------ predicates

bool WavePredicate::keep(const VectorXd& x) const {
  if (combine == Combine::kAll) {
    for (const auto& t : terms) {
      if (!t.score(x).keep) return false;
    }
    return true;
  }
  // j-th largest scaled value below 3 <=> fewer than j values at or above 3.
  int fails = 0;
  const int n = static_cast<int>(terms.size());
  for (int i = 0; i < n; ++i) {
    if (terms[static_cast<std::size_t>(i)].score(x).scaled >= 3.0 && ++fails >= j) return false;
    if (fails + (n - i - 1) < j) return true;
  }
  return fails < j;
}

bool WavePredicate::keep(const VectorXd& x, std::vector<PointScore>& scores) const {
  scores.resize(terms.size());
  std::vector<double> scaled(terms.size());
  bool all = true;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    scores[i] = terms[i].score(x);
    scaled[i] = scores[i].scaled;
    all = all && scores[i].keep;
  }
  if (combine == Combine::kAll) return all;
  return jth_max(scaled, j) < 3.0;
}

void NroySpace::set_coefficient_pool(MatrixXd pool, Index offset) {
  if (pool.rows() == 0) throw EmptyNroyError("coefficient pool is empty");
  if (offset < 0 || offset + pool.cols() > box_.dim()) throw ShapeError("coefficient pool does not fit the box");
  pool_ = std::move(pool);
  pool_offset_ = offset;
}

void NroySpace::draw(std::mt19937_64& rng, VectorXd& x) const {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  x.resize(box_.dim());
  for (Index k = 0; k < box_.dim(); ++k) x[k] = box_.lo[k] + (box_.hi[k] - box_.lo[k]) * unif(rng);
  if (pool_.rows()) {
    std::uniform_int_distribution<Index> pick(0, pool_.rows() - 1);
    x.segment(pool_offset_, pool_.cols()) = pool_.row(pick(rng)).transpose();
  }
}

bool NroySpace::contains(const VectorXd& x, Index depth) const {
  if (!box_.contains(x)) return false;
  const Index n = depth < 0 ? this->depth() : std::min(depth, this->depth());
  for (Index k = 0; k < n; ++k) {
    if (!waves_[static_cast<std::size_t>(k)].keep(x)) return false;
  }
  return true;
}

// ------------------------------------------------------------ fitted outputs

namespace {

std::uint64_t splitmix(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t string_seed(std::uint64_t base, const std::string& s) {
  return splitmix(base ^ fnv1a(s.data(), s.size()));
}

}  // namespace

std::uint64_t point_seed(std::uint64_t base, const VectorXd& x) {
  return splitmix(base ^ fnv1a(x.data(), sizeof(double) * static_cast<std::size_t>(x.size())));
}

std::vector<int> FittedOutput::counts(const VectorXd& x) const {
  if (!region) throw PreconditionError("output " + spec.id + " has no region emulator");
  const Eigen::VectorXi zb = spec.obs.cast<int>();
  return binary_implausibility(zb, *region, x, spec.m_samples, spec.threshold, point_seed(seed, x));
}

PointScore FittedOutput::score(const VectorXd& x) const {
  PointScore s;
  if (spec.kind == OutputKind::kScalar) {
    double impl = 0.0;
    for (Index k = 0; k < spec.ell; ++k) {
      const auto p = scalar[static_cast<std::size_t>(k)].predict(x);
      double v = spec.sigma_e[k] + p.variance;
      if (spec.sigma_eta.size()) v += spec.sigma_eta[k];
      impl += implausibility(spec.obs[k], p.mean, v);
    }
    s.impl = impl;
    s.scaled = scaled_implausibility(impl, spec.ell);
    s.keep = impl < spec.bound();
    return s;
  }
  const auto c = counts(x);
  const double n_t = spec.bound();
  s.impl = binary_summary_value(c, spec.summary);
  s.keep = binary_nroy_membership(c, n_t, spec.summary);
  // Keep the common scale consistent with the membership decision.
  const double raw = 3.0 * s.impl / n_t;
  s.scaled = s.keep ? std::min(raw, std::nextafter(3.0, 0.0)) : std::max(raw, 3.0);
  return s;
}

Term FittedOutput::term() const {
  auto self = std::make_shared<FittedOutput>(*this);
  return {spec.id, [self](const VectorXd& x) { return self->score(x); }};
}

FittedOutput fit_output(const OutputSpec& spec, const MatrixXd& design, const MatrixXd& values,
                        const gp::FitOptions& fit, std::uint64_t seed, std::vector<std::string>* warnings) {
  spec.validate();
  if (values.rows() != design.rows() || values.cols() != spec.ell) {
    throw ShapeError("output " + spec.id + ": expected " + std::to_string(design.rows()) + " x " +
                     std::to_string(spec.ell) + " values, got " + std::to_string(values.rows()) + " x " +
                     std::to_string(values.cols()));
  }
  if (!values.allFinite()) throw DataError("output " + spec.id + ": non-finite simulator values");
  FittedOutput out;
  out.spec = spec;
  out.seed = string_seed(seed, spec.id + "/binary");
  auto fit_one = [&](const VectorXd& y, const std::string& tag) {
    gp::FitOptions o = fit;
    o.seed = string_seed(seed, spec.id + "/" + tag);
    std::vector<std::string> w;
    auto em = gp::GpEmulator::fit(design, y, o, &w);
    if (warnings) {
      for (auto& s : w) warnings->push_back(spec.id + " " + tag + ": " + s);
    }
    if (!em.is_constant()) out.loo_within_3 = std::min(out.loo_within_3, em.loo().fraction_within(3.0));
    return em;
  };

  if (spec.kind == OutputKind::kScalar) {
    for (Index k = 0; k < spec.ell; ++k) out.scalar.push_back(fit_one(values.col(k), "c" + std::to_string(k)));
    return out;
  }

  RegionEmulator region;
  region.mean = values.colwise().mean().transpose();
  const MatrixXd centred = (values.rowwise() - region.mean.transpose()).transpose();  // ell x N
  const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
  if (centred.norm() <= 1e-10 * scale * std::sqrt(static_cast<double>(centred.size()))) {
    region.vectors = MatrixXd(spec.ell, 0);
    if (warnings) warnings->push_back(spec.id + ": region field identical across runs; no coefficients emulated");
  } else {
    const auto ens = basis::CentredEnsemble::from_raw(values.transpose());
    const auto full = basis::svd_basis(ens);
    // Rotation target: the observed map as a thickness field.
    double iced = 0.0;
    Index n_iced = 0;
    for (Index i = 0; i < values.size(); ++i) {
      if (values.data()[i] > spec.threshold) {
        iced += values.data()[i];
        ++n_iced;
      }
    }
    const double thickness = n_iced ? iced / static_cast<double>(n_iced) : 2.0 * spec.threshold;
    const VectorXd target = spec.obs * thickness - region.mean;
    basis::RotationOptions ro;
    ro.n_keep = std::min<Index>(spec.basis_rank, full.rank());
    const auto rot = basis::optimal_rotation(full, basis::Weight::identity(), target, ro);
    region.vectors = rot.basis.vectors.leftCols(ro.n_keep);
    const MatrixXd gram = region.vectors.transpose() * region.vectors;
    const MatrixXd coef = gram.ldlt().solve(region.vectors.transpose() * centred);  // q x N
    for (Index k = 0; k < region.rank(); ++k) {
      region.coefficients.push_back(fit_one(coef.row(k).transpose(), "b" + std::to_string(k)));
    }
  }
  out.region = std::move(region);
  return out;
}

// ------------------------------------------------------------ coefficient space

CoefficientPredicate CoefficientPredicate::build(const bc::BoundaryModel& model, const ObservationSet& obs, int j,
                                                 Index offset) {
  if (obs.n_space() != model.n_space() || obs.n_time() != model.n_time()) {
    throw ShapeError("coefficient space: observation grid does not match the boundary model");
  }
  if (obs.empty()) throw DataError("coefficient space: no observations");
  CoefficientPredicate p;
  p.offset = offset;
  p.j = j;
  std::vector<Index> rows;
  const Index n = static_cast<Index>(obs.entries().size());
  p.z.resize(n);
  p.var.resize(n);
  Index prev = -1;
  for (Index i = 0; i < n; ++i) {
    const auto& e = obs.entries()[static_cast<std::size_t>(i)];
    if (!(e.error_sd > 0.0)) {
      throw DataError("coefficient space: observation at location " + std::to_string(e.location) +
                      ", time " + std::to_string(e.time) + " has no positive error");
    }
    rows.push_back(FieldVector::flat_index(e.location, e.time, model.n_time()));
    p.z[i] = e.value;
    p.var[i] = e.error_sd * e.error_sd;
    if (e.location != prev) {
      p.groups.emplace_back();
      prev = e.location;
    }
    p.groups.back().push_back(i);
  }
  if (j < 1 || j > static_cast<int>(p.groups.size())) {
    throw IndexError("coefficient space: j = " + std::to_string(j) + " but only " +
                     std::to_string(p.groups.size()) + " observed locations");
  }
  p.basis_obs = model.basis_rows(rows);
  p.mu_obs.resize(n);
  for (Index i = 0; i < n; ++i) p.mu_obs[i] = model.mu().values()[rows[static_cast<std::size_t>(i)]];
  p.chi2.resize(static_cast<Index>(p.groups.size()));
  for (std::size_t g = 0; g < p.groups.size(); ++g) p.chi2[static_cast<Index>(g)] = chi2_bound(static_cast<Index>(p.groups[g].size()));
  return p;
}

VectorXd CoefficientPredicate::scaled(const VectorXd& c) const {
  const VectorXd r = z - mu_obs - basis_obs * c;
  VectorXd out(static_cast<Index>(groups.size()));
  for (std::size_t g = 0; g < groups.size(); ++g) {
    double impl = 0.0;
    for (Index i : groups[g]) impl += r[i] * r[i] / var[i];
    out[static_cast<Index>(g)] = 3.0 * impl / chi2[static_cast<Index>(g)];
  }
  return out;
}

PointScore CoefficientPredicate::score(const VectorXd& x) const {
  const VectorXd s = scaled(x.segment(offset, basis_obs.cols()));
  PointScore p;
  p.scaled = jth_max(std::vector<double>(s.data(), s.data() + s.size()), j);
  p.impl = p.scaled;
  p.keep = p.scaled < 3.0;
  return p;
}

Term CoefficientPredicate::term() const {
  auto self = std::make_shared<CoefficientPredicate>(*this);
  return {"coefficients", [self](const VectorXd& x) { return self->score(x); }};
}

PriorSpaceResult prior_coeff_space(const bc::BoundaryModel& model, const ObservationSet& obs, const Box& prior_bounds,
                                   int j, Index n_samples, std::uint64_t seed) {
  if (prior_bounds.dim() != model.n_coefficients()) {
    throw ShapeError("prior_coeff_space: bounds have " + std::to_string(prior_bounds.dim()) + " dimensions, model has " +
                     std::to_string(model.n_coefficients()) + " coefficients");
  }
  if (n_samples < 1) throw ConfigError("prior_coeff_space: n_samples must be >= 1");
  const auto pred = CoefficientPredicate::build(model, obs.restricted_to_observed(), j);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Index nc = prior_bounds.dim();
  const Index ng = static_cast<Index>(pred.groups.size());
  MatrixXd all_scaled(n_samples, ng);
  std::vector<Index> accepted;
  VectorXd c(nc);
  MatrixXd draws(n_samples, nc);
  for (Index s = 0; s < n_samples; ++s) {
    for (Index k = 0; k < nc; ++k) c[k] = prior_bounds.lo[k] + (prior_bounds.hi[k] - prior_bounds.lo[k]) * unif(rng);
    draws.row(s) = c.transpose();
    const VectorXd sc = pred.scaled(c);
    all_scaled.row(s) = sc.transpose();
    if (jth_max(std::vector<double>(sc.data(), sc.data() + ng), j) < 3.0) accepted.push_back(s);
  }
  PriorSpaceResult res;
  res.n_samples = n_samples;
  res.accepted.resize(static_cast<Index>(accepted.size()), nc);
  for (std::size_t i = 0; i < accepted.size(); ++i) res.accepted.row(static_cast<Index>(i)) = draws.row(accepted[i]);
  res.acceptance_rate = static_cast<double>(accepted.size()) / static_cast<double>(n_samples);
  res.quantiles.resize(ng, 3);
  for (Index g = 0; g < ng; ++g) {
    std::vector<double> v(all_scaled.col(g).data(), all_scaled.col(g).data() + n_samples);
    std::sort(v.begin(), v.end());
    const double qs[3] = {0.05, 0.5, 0.95};
    for (int q = 0; q < 3; ++q) {
      res.quantiles(g, q) = v[static_cast<std::size_t>(std::floor(qs[q] * static_cast<double>(n_samples - 1)))];
    }
  }
  for (const auto& grp : pred.groups) res.locations.push_back(obs.restricted_to_observed().entries()[static_cast<std::size_t>(grp.front())].location);
  if (accepted.empty()) {
    std::string msg = "prior coefficient space is empty after " + std::to_string(n_samples) +
                      " draws; median scaled implausibility per location:";
    for (Index g = 0; g < ng; ++g) {
      msg += " " + std::to_string(res.locations[static_cast<std::size_t>(g)]) + "=" + std::to_string(res.quantiles(g, 1));
    }
    res.warnings.push_back(msg);
  }
  return res;
}

MatrixXd sample_coefficient_space(const CoefficientPredicate& pred, const Box& prior_bounds, const VectorXd& start,
                                  const ChainOptions& o) {
  const Index nc = prior_bounds.dim();
  if (start.size() != nc || pred.basis_obs.cols() != nc) throw ShapeError("sample_coefficient_space: dimension mismatch");
  if (o.n_draws < 1 || o.thin < 1 || o.burn_in < 0 || !(o.step > 0.0) || o.max_steps < 1) {
    throw ConfigError("sample_coefficient_space: invalid chain options");
  }
  auto inside = [&](const VectorXd& c) {
    if (!prior_bounds.contains(c)) return false;
    const VectorXd s = pred.scaled(c);
    return jth_max(std::vector<double>(s.data(), s.data() + s.size()), pred.j) < 3.0;
  };
  if (!inside(start)) throw PreconditionError("sample_coefficient_space: start point is outside C");

  // Direction covariance from the weighted normal equations; fall back to
  // the box widths when the observations do not determine every coefficient.
  MatrixXd l;
  {
    const MatrixXd bw = pred.basis_obs.transpose() * pred.var.cwiseInverse().asDiagonal();
    const MatrixXd info = bw * pred.basis_obs;
    Eigen::LLT<MatrixXd> llt(info);
    const VectorXd width = prior_bounds.hi - prior_bounds.lo;
    if (llt.info() == Eigen::Success) {
      l = llt.matrixU().solve(MatrixXd::Identity(nc, nc));
      for (Index k = 0; k < nc; ++k) {
        const double sd = l.row(k).norm();
        if (!std::isfinite(sd) || sd > width[k]) l.row(k) *= width[k] / sd;
      }
    } else {
      l = (0.1 * width).asDiagonal();
    }
  }

  std::mt19937_64 rng(o.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  VectorXd c = start, n(nc);
  MatrixXd out(o.n_draws, nc);
  const Index total = o.burn_in + o.n_draws * o.thin;
  Index kept = 0;
  for (Index it = 0; it < total; ++it) {
    for (Index k = 0; k < nc; ++k) n[k] = gauss(rng);
    const VectorXd d = l * n;
    // Stepping out then shrinkage along c + t d (uniform target on the line).
    double lo = -o.step * unif(rng), hi = lo + o.step;
    for (int s = 0; s < o.max_steps && inside(c + lo * d); ++s) lo -= o.step;
    for (int s = 0; s < o.max_steps && inside(c + hi * d); ++s) hi += o.step;
    while (true) {
      const double t = lo + (hi - lo) * unif(rng);
      const VectorXd y = c + t * d;
      if (inside(y)) {
        c = y;
        break;
      }
      (t < 0.0 ? lo : hi) = t;
    }
    if (it >= o.burn_in && (it - o.burn_in) % o.thin == o.thin - 1) out.row(kept++) = c.transpose();
  }
  return out;
}

// ------------------------------------------------------------ resampling

ResampleResult nroy_resample(const NroySpace& space, const ResampleOptions& options, const MatrixXd* seed_pool) {
  const Box& box = space.box();
  const Index d = box.dim();
  if (options.n_points < 1) throw ConfigError("nroy_resample: n_points must be >= 1");
  if (options.frac_best < 0.0 || options.frac_best > 1.0) throw ConfigError("nroy_resample: frac_best must be in [0, 1]");
  const Index target = options.pool_target > 0 ? options.pool_target : 10 * options.n_points;

  ResampleResult res;
  std::vector<VectorXd> pool;
  if (seed_pool) {
    for (Index i = 0; i < seed_pool->rows() && static_cast<Index>(pool.size()) < target; ++i) {
      const VectorXd x = seed_pool->row(i).transpose();
      if (space.contains(x)) pool.push_back(x);
    }
  }
  std::vector<Index> rejected_at(static_cast<std::size_t>(space.depth()), 0);
  std::mt19937_64 rng(options.seed);
  VectorXd x(d);
  while (static_cast<Index>(pool.size()) < target && res.draws < options.max_draws) {
    for (Index b = 0; b < options.batch && static_cast<Index>(pool.size()) < target && res.draws < options.max_draws; ++b) {
      space.draw(rng, x);
      ++res.draws;
      bool in = true;
      for (Index w = 0; w < space.depth(); ++w) {
        if (!space.waves()[static_cast<std::size_t>(w)].keep(x)) {
          ++rejected_at[static_cast<std::size_t>(w)];
          in = false;
          break;
        }
      }
      if (in) pool.push_back(x);
    }
  }
  res.pool_size = static_cast<Index>(pool.size());
  if (pool.empty()) {
    std::string tight = "none";
    Index most = -1;
    for (Index w = 0; w < space.depth(); ++w) {
      if (rejected_at[static_cast<std::size_t>(w)] > most) {
        most = rejected_at[static_cast<std::size_t>(w)];
        const auto& p = space.waves()[static_cast<std::size_t>(w)];
        tight = "wave " + std::to_string(p.wave) + " (";
        for (std::size_t t = 0; t < p.terms.size(); ++t) tight += (t ? "," : "") + p.terms[t].id;
        tight += ")";
      }
    }
    throw EmptyNroyError("no NROY member found in " + std::to_string(res.draws) +
                         " draws; tightest predicate: " + tight);
  }
  MatrixXd pm(res.pool_size, d);
  for (Index i = 0; i < res.pool_size; ++i) pm.row(i) = pool[static_cast<std::size_t>(i)].transpose();
  if (res.pool_size <= options.n_points) {
    if (res.pool_size < options.n_points) {
      res.warnings.push_back("only " + std::to_string(res.pool_size) + " NROY members found for " +
                             std::to_string(options.n_points) + " requested points");
    }
    res.points = pm;
    return res;
  }

  std::vector<Index> picked;
  std::vector<char> used(static_cast<std::size_t>(res.pool_size), 0);
  const Index n_best = static_cast<Index>(std::llround(options.frac_best * static_cast<double>(options.n_points)));
  if (n_best > 0 && space.depth() > 0) {
    const auto& terms = space.waves().back().terms;
    std::vector<std::vector<Index>> order(terms.size());
    for (std::size_t t = 0; t < terms.size(); ++t) {
      VectorXd s(res.pool_size);
      for (Index i = 0; i < res.pool_size; ++i) s[i] = terms[t].score(pool[static_cast<std::size_t>(i)]).impl;
      order[t].resize(static_cast<std::size_t>(res.pool_size));
      std::iota(order[t].begin(), order[t].end(), Index{0});
      std::stable_sort(order[t].begin(), order[t].end(), [&](Index a, Index b) { return s[a] < s[b]; });
    }
    std::vector<std::size_t> cursor(terms.size(), 0);
    while (static_cast<Index>(picked.size()) < n_best) {
      bool progressed = false;
      for (std::size_t t = 0; t < terms.size() && static_cast<Index>(picked.size()) < n_best; ++t) {
        while (cursor[t] < order[t].size() && used[static_cast<std::size_t>(order[t][cursor[t]])]) ++cursor[t];
        if (cursor[t] < order[t].size()) {
          const Index i = order[t][cursor[t]];
          used[static_cast<std::size_t>(i)] = 1;
          picked.push_back(i);
          progressed = true;
        }
      }
      if (!progressed) break;
    }
  }
  const MatrixXd unit = box.to_unit(pm);
  MatrixXd chosen(static_cast<Index>(picked.size()), d);
  for (std::size_t i = 0; i < picked.size(); ++i) chosen.row(static_cast<Index>(i)) = unit.row(picked[i]);
  std::vector<Index> rest;
  for (Index i = 0; i < res.pool_size; ++i) {
    if (!used[static_cast<std::size_t>(i)]) rest.push_back(i);
  }
  MatrixXd rest_unit(static_cast<Index>(rest.size()), d);
  for (std::size_t i = 0; i < rest.size(); ++i) rest_unit.row(static_cast<Index>(i)) = unit.row(rest[i]);
  for (Index i : maximin_select(rest_unit, chosen, options.n_points - static_cast<Index>(picked.size()))) {
    picked.push_back(rest[static_cast<std::size_t>(i)]);
  }
  res.points.resize(static_cast<Index>(picked.size()), d);
  for (std::size_t i = 0; i < picked.size(); ++i) res.points.row(static_cast<Index>(i)) = pm.row(picked[i]);
  return res;
}

// ------------------------------------------------------------ volume

VolumeTracker::VolumeTracker(const NroySpace& space, Index n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw ConfigError("VolumeTracker: need at least one sample");
  std::mt19937_64 rng(seed);
  samples_.resize(n_samples, space.box().dim());
  VectorXd x;
  for (Index i = 0; i < n_samples; ++i) {
    space.draw(rng, x);
    samples_.row(i) = x.transpose();
  }
  members_.resize(static_cast<std::size_t>(n_samples));
  std::iota(members_.begin(), members_.end(), Index{0});
}

double VolumeTracker::apply(const WavePredicate& p, std::vector<double>* rule_out, Index rule_out_sample) {
  std::vector<Index> kept;
  std::vector<Index> out_count(p.terms.size(), 0);
  std::vector<PointScore> scores;
  Index seen = 0;
  for (Index i : members_) {
    const VectorXd x = samples_.row(i).transpose();
    bool k;
    if (rule_out && seen++ < rule_out_sample) {
      k = p.keep(x, scores);
      for (std::size_t t = 0; t < scores.size(); ++t) out_count[t] += !scores[t].keep;
    } else {
      k = p.keep(x);
    }
    if (k) kept.push_back(i);
  }
  if (rule_out) {
    rule_out->assign(p.terms.size(), 0.0);
    for (std::size_t t = 0; t < p.terms.size(); ++t) {
      (*rule_out)[t] = seen ? static_cast<double>(out_count[t]) / static_cast<double>(std::min(seen, rule_out_sample)) : 0.0;
    }
  }
  members_ = std::move(kept);
  return fraction();
}

double VolumeTracker::fraction() const {
  return samples_.rows() ? static_cast<double>(members_.size()) / static_cast<double>(samples_.rows()) : 0.0;
}

double VolumeTracker::standard_error() const {
  const double f = fraction();
  return samples_.rows() ? std::sqrt(f * (1.0 - f) / static_cast<double>(samples_.rows())) : 0.0;
}

MatrixXd VolumeTracker::member_points(Index max_rows) const {
  const Index n = max_rows < 0 ? n_members() : std::min(max_rows, n_members());
  MatrixXd out(n, samples_.cols());
  for (Index i = 0; i < n; ++i) out.row(i) = samples_.row(members_[static_cast<std::size_t>(i)]);
  return out;
}

// ------------------------------------------------------------ waves

WaveState::WaveState(NroySpace base, Index mc_samples, std::uint64_t mc_seed)
    : space(std::move(base)), tracker(space, mc_samples, mc_seed) {
  if (space.depth() > 0) throw PreconditionError("WaveState: the base space must not carry predicates");
}

void WaveState::add_coefficient_space(const CoefficientPredicate& pred) {
  if (space.depth() > 0) throw PreconditionError("the coefficient constraint must be added before any wave");
  coefficients = std::make_shared<CoefficientPredicate>(pred);
  WavePredicate p;
  p.wave = 0;
  p.terms.push_back(pred.term());
  WaveReport r;
  r.wave = 0;
  r.parent_fraction = tracker.fraction();
  std::vector<double> out;
  r.fraction = tracker.apply(p, &out);
  r.standard_error = tracker.standard_error();
  r.specs.push_back({"coefficients", OutputKind::kScalar, 3.0, out[0], 1.0, 0.0});
  space.push(std::move(p));
  fitted.emplace_back();
  reports.push_back(std::move(r));
}

WaveReport run_wave(WaveState& state, const WaveData& data, const std::vector<OutputSpec>& specs,
                    const WaveConfig& cfg) {
  const Box& box = state.space.box();
  if (data.design.cols() != box.dim()) {
    throw ShapeError("run_wave: design has " + std::to_string(data.design.cols()) + " columns, bounds have " +
                     std::to_string(box.dim()));
  }
  std::vector<const OutputSpec*> active;
  for (const auto& s : specs) {
    if (s.in_wave(cfg.wave)) active.push_back(&s);
  }
  if (active.empty()) throw ConfigError("run_wave: no output spec constrains wave " + std::to_string(cfg.wave));
  for (const auto* s : active) {
    if (!data.outputs.count(s->id)) {
      throw ConfigError("output " + s->id + " references wave " + std::to_string(cfg.wave) +
                        " but the wave has no ensemble data for it");
    }
  }
  if (cfg.combine == Combine::kJthMax && (cfg.j < 1 || cfg.j > static_cast<int>(active.size()))) {
    throw ConfigError("run_wave: j = " + std::to_string(cfg.j) + " with " + std::to_string(active.size()) + " outputs");
  }
  // Cheap scalar terms first so short-circuiting skips binary sampling.
  std::stable_partition(active.begin(), active.end(),
                        [](const OutputSpec* s) { return s->kind == OutputKind::kScalar; });

  WaveReport report;
  report.wave = cfg.wave;
  report.design_size = data.design.rows();
  report.parent_fraction = state.tracker.fraction();
  gp::FitOptions fit = cfg.fit;
  fit.input_lo = box.lo;
  fit.input_hi = box.hi;

  std::vector<FittedOutput> fitted;
  WavePredicate pred;
  pred.wave = cfg.wave;
  pred.combine = cfg.combine;
  pred.j = cfg.j;
  for (const auto* s : active) {
    fitted.push_back(fit_output(*s, data.design, data.outputs.at(s->id), fit,
                                string_seed(cfg.seed, "wave" + std::to_string(cfg.wave)), &report.warnings));
    pred.terms.push_back(fitted.back().term());
  }
  std::vector<double> rule_out;
  report.fraction = state.tracker.apply(pred, &rule_out);
  report.standard_error = state.tracker.standard_error();
  for (std::size_t t = 0; t < fitted.size(); ++t) {
    const auto& f = fitted[t];
    SpecReport sr;
    sr.id = f.spec.id;
    sr.kind = f.spec.kind;
    sr.bound = f.spec.bound();
    sr.rule_out_rate = rule_out[t];
    sr.loo_within_3 = f.loo_within_3;
    if (f.spec.kind == OutputKind::kBinaryRegion) {
      Index flagged = 0;
      for (Index i = 0; i < data.design.rows(); ++i) {
        flagged += bimodal_counts(f.counts(data.design.row(i).transpose()), f.spec.ell);
      }
      sr.bimodal_fraction = data.design.rows() ? static_cast<double>(flagged) / static_cast<double>(data.design.rows()) : 0.0;
    }
    report.specs.push_back(sr);
  }
  if (report.fraction == 0.0) report.warnings.push_back("no Monte Carlo sample survives wave " + std::to_string(cfg.wave));
  state.space.push(std::move(pred));
  state.fitted.push_back(std::move(fitted));
  state.reports.push_back(report);
  return report;
}

// ------------------------------------------------------------ serialization

namespace {

json vec_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd json_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()));
}

json mat_json(const MatrixXd& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

MatrixXd json_mat(const json& j) {
  MatrixXd m(j.at("rows").get<Index>(), j.at("cols").get<Index>());
  for (Index i = 0; i < m.rows(); ++i) m.row(i) = json_vec(j.at("data").at(static_cast<std::size_t>(i))).transpose();
  return m;
}

json spec_json(const OutputSpec& s) {
  return {{"id", s.id},
          {"kind", to_string(s.kind)},
          {"waves", s.waves},
          {"ell", s.ell},
          {"obs", vec_json(s.obs)},
          {"sigma_e", vec_json(s.sigma_e)},
          {"sigma_eta", vec_json(s.sigma_eta)},
          {"bound", s.bound_expr},
          {"binary_summary", to_string(s.summary)},
          {"threshold", s.threshold},
          {"m_samples", s.m_samples},
          {"basis_rank", s.basis_rank}};
}

OutputSpec json_spec(const json& j) {
  OutputSpec s;
  s.id = j.at("id").get<std::string>();
  s.kind = parse_output_kind(j.at("kind").get<std::string>());
  s.waves = j.at("waves").get<std::vector<int>>();
  s.ell = j.at("ell").get<Index>();
  s.obs = json_vec(j.at("obs"));
  s.sigma_e = json_vec(j.at("sigma_e"));
  s.sigma_eta = json_vec(j.at("sigma_eta"));
  s.bound_expr = j.at("bound").get<std::string>();
  s.summary = parse_binary_summary(j.at("binary_summary").get<std::string>());
  s.threshold = j.at("threshold").get<double>();
  s.m_samples = j.at("m_samples").get<int>();
  s.basis_rank = j.at("basis_rank").get<Index>();
  return s;
}

json output_json(const FittedOutput& f) {
  json j = {{"spec", spec_json(f.spec)}, {"seed", f.seed}, {"loo_within_3", f.loo_within_3}};
  json gps = json::array();
  for (const auto& g : f.scalar) gps.push_back(json::parse(g.to_json()));
  j["scalar"] = gps;
  if (f.region) {
    json r = {{"vectors", mat_json(f.region->vectors)}, {"mean", vec_json(f.region->mean)}};
    json cs = json::array();
    for (const auto& g : f.region->coefficients) cs.push_back(json::parse(g.to_json()));
    r["coefficients"] = cs;
    j["region"] = r;
  }
  return j;
}

FittedOutput json_output(const json& j) {
  FittedOutput f;
  f.spec = json_spec(j.at("spec"));
  f.seed = j.at("seed").get<std::uint64_t>();
  f.loo_within_3 = j.at("loo_within_3").get<double>();
  for (const auto& g : j.at("scalar")) f.scalar.push_back(gp::GpEmulator::from_json(g.dump()));
  if (j.contains("region")) {
    RegionEmulator r;
    r.vectors = json_mat(j["region"].at("vectors"));
    r.mean = json_vec(j["region"].at("mean"));
    for (const auto& g : j["region"].at("coefficients")) r.coefficients.push_back(gp::GpEmulator::from_json(g.dump()));
    f.region = std::move(r);
  }
  return f;
}

json report_json(const WaveReport& r) {
  json specs = json::array();
  for (const auto& s : r.specs) {
    specs.push_back({{"id", s.id},
                     {"kind", to_string(s.kind)},
                     {"bound", s.bound},
                     {"rule_out_rate", s.rule_out_rate},
                     {"loo_within_3", s.loo_within_3},
                     {"bimodal_fraction", s.bimodal_fraction}});
  }
  return {{"wave", r.wave},
          {"parent_fraction", r.parent_fraction},
          {"nroy_fraction", r.fraction},
          {"standard_error", r.standard_error},
          {"design_size", r.design_size},
          {"specs", specs},
          {"warnings", r.warnings}};
}

WaveReport json_report(const json& j) {
  WaveReport r;
  r.wave = j.at("wave").get<int>();
  r.parent_fraction = j.at("parent_fraction").get<double>();
  r.fraction = j.at("nroy_fraction").get<double>();
  r.standard_error = j.at("standard_error").get<double>();
  r.design_size = j.at("design_size").get<Index>();
  for (const auto& s : j.at("specs")) {
    r.specs.push_back({s.at("id").get<std::string>(), parse_output_kind(s.at("kind").get<std::string>()),
                       s.at("bound").get<double>(), s.at("rule_out_rate").get<double>(),
                       s.at("loo_within_3").get<double>(), s.at("bimodal_fraction").get<double>()});
  }
  r.warnings = j.at("warnings").get<std::vector<std::string>>();
  return r;
}

}  // namespace

std::string WaveReport::to_json() const { return report_json(*this).dump(2); }

void save_state(const WaveState& state, const std::filesystem::path& dir, Index mc_samples, std::uint64_t mc_seed) {
  std::filesystem::create_directories(dir);
  json j;
  j["format"] = "hmbound.waves.v1";
  j["box"] = {{"lo", vec_json(state.space.box().lo)}, {"hi", vec_json(state.space.box().hi)}};
  if (state.space.coefficient_pool().rows()) {
    j["coefficient_pool"] = {{"offset", state.space.pool_offset()}, {"draws", mat_json(state.space.coefficient_pool())}};
  }
  j["mc_samples"] = mc_samples;
  j["mc_seed"] = mc_seed;
  if (state.coefficients) {
    const auto& c = *state.coefficients;
    j["coefficients"] = {{"offset", c.offset}, {"j", c.j},        {"basis_obs", mat_json(c.basis_obs)},
                         {"mu_obs", vec_json(c.mu_obs)}, {"z", vec_json(c.z)}, {"var", vec_json(c.var)},
                         {"groups", c.groups}, {"chi2", vec_json(c.chi2)}};
  }
  json waves = json::array();
  for (std::size_t w = 0; w < state.space.waves().size(); ++w) {
    const auto& p = state.space.waves()[w];
    if (p.wave == 0) continue;
    json outs = json::array();
    for (const auto& f : state.fitted[w]) outs.push_back(output_json(f));
    waves.push_back({{"wave", p.wave}, {"combine", p.combine == Combine::kAll ? "all" : "jth_max"}, {"j", p.j},
                     {"outputs", outs}});
  }
  j["waves"] = waves;
  json reports = json::array();
  for (const auto& r : state.reports) reports.push_back(report_json(r));
  j["reports"] = reports;
  std::ofstream f(dir / "state.json");
  if (!f) throw IoError("cannot write " + (dir / "state.json").string());
  f << j.dump(1) << "\n";
}

WaveState load_state(const std::filesystem::path& dir) {
  const auto path = dir / "state.json";
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "hmbound.waves.v1") throw DataError(path.string() + ": not a wave state file");
  NroySpace base(Box{json_vec(j.at("box").at("lo")), json_vec(j.at("box").at("hi"))});
  if (j.contains("coefficient_pool")) {
    base.set_coefficient_pool(json_mat(j["coefficient_pool"].at("draws")), j["coefficient_pool"].at("offset").get<Index>());
  }
  WaveState state(std::move(base), j.at("mc_samples").get<Index>(), j.at("mc_seed").get<std::uint64_t>());
  if (j.contains("coefficients")) {
    const auto& c = j["coefficients"];
    CoefficientPredicate p;
    p.offset = c.at("offset").get<Index>();
    p.j = c.at("j").get<int>();
    p.basis_obs = json_mat(c.at("basis_obs"));
    p.mu_obs = json_vec(c.at("mu_obs"));
    p.z = json_vec(c.at("z"));
    p.var = json_vec(c.at("var"));
    p.groups = c.at("groups").get<std::vector<std::vector<Index>>>();
    p.chi2 = json_vec(c.at("chi2"));
    state.add_coefficient_space(p);
  }
  for (const auto& w : j.at("waves")) {
    WavePredicate p;
    p.wave = w.at("wave").get<int>();
    p.combine = w.at("combine").get<std::string>() == "all" ? Combine::kAll : Combine::kJthMax;
    p.j = w.at("j").get<int>();
    std::vector<FittedOutput> outs;
    for (const auto& o : w.at("outputs")) {
      outs.push_back(json_output(o));
      p.terms.push_back(outs.back().term());
    }
    state.tracker.apply(p);
    state.space.push(std::move(p));
    state.fitted.push_back(std::move(outs));
  }
  state.reports.clear();
  for (const auto& r : j.at("reports")) state.reports.push_back(json_report(r));
  return state;
}

}  // namespace hmbound::hm
