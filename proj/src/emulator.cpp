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

#include "hmbound/emulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "hmbound/error.hpp"
#include "hmbound/io.hpp"
#include "hmbound/optim.hpp"

namespace hmbound::gp {

namespace {

constexpr double kLogLenLo = -4.6;  // ~0.01
constexpr double kLogLenHi = 4.6;   // ~100

double box_penalty(double v, double lo, double hi, double* grad) {
  if (v < lo) {
    *grad = 20.0 * (v - lo);
    return 10.0 * (v - lo) * (v - lo);
  }
  if (v > hi) {
    *grad = 20.0 * (v - hi);
    return 10.0 * (v - hi) * (v - hi);
  }
  *grad = 0.0;
  return 0.0;
}

}  // namespace

double LooResult::fraction_within(double bound) const {
  if (standardized.size() == 0) return 1.0;
  Index n = 0;
  for (Index i = 0; i < standardized.size(); ++i) n += std::abs(standardized[i]) < bound ? 1 : 0;
  return static_cast<double>(n) / static_cast<double>(standardized.size());
}

void GpEmulator::setup(const MatrixXd& design, const VectorXd& targets, const FitOptions& options) {
  if (design.rows() != targets.size()) throw ShapeError("design rows do not match the number of targets");
  if (design.rows() < 2) throw PreconditionError("a Gaussian process needs at least 2 training points");
  if (!design.allFinite() || !targets.allFinite()) throw DataError("non-finite design or targets");
  design_ = design;
  y_ = targets;
  mean_ = options.mean;
  const Index d = design.cols();
  lo_ = options.input_lo.size() ? options.input_lo : VectorXd(design.colwise().minCoeff().transpose());
  hi_ = options.input_hi.size() ? options.input_hi : VectorXd(design.colwise().maxCoeff().transpose());
  if (lo_.size() != d || hi_.size() != d) throw ShapeError("input bounds do not match the design dimension");
  scale_ = hi_ - lo_;
  active_.clear();
  for (Index k = 0; k < d; ++k) {
    const double mag = std::max({std::abs(lo_[k]), std::abs(hi_[k]), 1.0});
    if (scale_[k] > 1e-14 * mag) {
      active_.push_back(k);
    } else {
      scale_[k] = 1.0;
    }
  }
  h_ = regressors(normalize(design));
  if (mean_ == MeanSpec::kLinear && design.rows() < static_cast<Index>(active_.size()) + 2) {
    throw PreconditionError("linear mean needs at least d+2 training points");
  }
}

MatrixXd GpEmulator::normalize(const MatrixXd& x) const {
  if (x.cols() != design_.cols()) {
    throw ShapeError("input has dimension " + std::to_string(x.cols()) + ", emulator expects " +
                     std::to_string(design_.cols()));
  }
  MatrixXd out(x.rows(), static_cast<Index>(active_.size()));
  for (std::size_t j = 0; j < active_.size(); ++j) {
    const Index k = active_[j];
    out.col(static_cast<Index>(j)) = (x.col(k).array() - lo_[k]) / scale_[k];
  }
  return out;
}

MatrixXd GpEmulator::regressors(const MatrixXd& xn) const {
  if (mean_ == MeanSpec::kConstant) return MatrixXd::Ones(xn.rows(), 1);
  MatrixXd h(xn.rows(), xn.cols() + 1);
  h.col(0).setOnes();
  h.rightCols(xn.cols()) = xn;
  return h;
}

void GpEmulator::finalize(const Hyperparameters& hyper, bool estimate_variance) {
  hyper_ = hyper;
  const Index m = design_.rows();
  if (constant_) {
    beta_ = VectorXd::Constant(1, y_[0]);
    alpha_ = VectorXd::Zero(m);
    return;
  }
  const MatrixXd xn = normalize(design_);
  VectorXd inv_len(static_cast<Index>(active_.size()));
  for (std::size_t j = 0; j < active_.size(); ++j) inv_len[static_cast<Index>(j)] = 1.0 / hyper.length_scales[active_[j]];
  xn_ = xn * inv_len.asDiagonal();
  const VectorXd sq = xn_.rowwise().squaredNorm();
  MatrixXd r = (-0.5 * ((sq.replicate(1, m) + sq.transpose().replicate(m, 1)) - 2.0 * xn_ * xn_.transpose()).array())
                   .cwiseMin(0.0)
                   .exp()
                   .matrix();
  r.diagonal().array() = 1.0 + hyper.nugget;
  chol_r_.compute(r);
  if (chol_r_.info() != Eigen::Success) throw FitError("correlation matrix is not positive definite at the fitted hyperparameters");
  rinv_h_ = chol_r_.solve(h_);
  chol_a_.compute(h_.transpose() * rinv_h_);
  if (chol_a_.info() != Eigen::Success) throw FitError("regressors are collinear after weighting");
  beta_ = chol_a_.solve(rinv_h_.transpose() * y_);
  const VectorXd e = y_ - h_ * beta_;
  alpha_ = chol_r_.solve(e);
  const double s = e.dot(alpha_);
  const Index dof = m - h_.cols();
  if (estimate_variance) {
    hyper_.signal_variance = std::max(s / static_cast<double>(std::max<Index>(dof, 1)), 1e-300);
  }
  const double logdet_r = 2.0 * chol_r_.matrixLLT().diagonal().array().log().sum();
  const double logdet_a = 2.0 * chol_a_.matrixLLT().diagonal().array().log().sum();
  loglik_ = -0.5 * (static_cast<double>(dof) * std::log(hyper_.signal_variance) + logdet_r + logdet_a +
                    s / hyper_.signal_variance);
}

GpEmulator GpEmulator::with_hyperparameters(const MatrixXd& design, const VectorXd& targets,
                                            const FitOptions& options, const Hyperparameters& hyper) {
  GpEmulator em;
  em.setup(design, targets, options);
  if (hyper.length_scales.size() != design.cols()) throw ShapeError("length-scale count does not match inputs");
  if ((hyper.length_scales.array() <= 0).any() || !(hyper.signal_variance > 0) || !(hyper.nugget >= 1e-10)) {
    throw ConfigError("hyperparameters must have positive length-scales and variance, nugget >= 1e-10");
  }
  const double range = targets.maxCoeff() - targets.minCoeff();
  em.constant_ = !(range > 1e-12 * std::max(1.0, targets.cwiseAbs().maxCoeff()));
  em.finalize(hyper, false);
  return em;
}

GpEmulator GpEmulator::fit(const MatrixXd& design, const VectorXd& targets, const FitOptions& options,
                           std::vector<std::string>* warnings) {
  GpEmulator em;
  em.setup(design, targets, options);
  const Index d = design.cols();
  const Index m = design.rows();
  const double range = targets.maxCoeff() - targets.minCoeff();
  if (!(range > 1e-12 * std::max(1.0, targets.cwiseAbs().maxCoeff()))) {
    em.constant_ = true;
    Hyperparameters h;
    h.length_scales = VectorXd::Ones(d);
    h.nugget = std::max(options.min_nugget, 1e-10);
    h.signal_variance = 1e-12 * std::max(1.0, targets[0] * targets[0]);
    em.finalize(h, false);
    if (warnings) warnings->push_back("targets are constant; using a constant emulator");
    return em;
  }
  const Index a = static_cast<Index>(em.active_.size());
  if (a == 0) throw FitError("all design columns are constant but the targets vary");
  const double min_g = std::max(options.min_nugget, 1e-10);

  // Squared differences per active dimension, in normalized units.
  const MatrixXd xn = em.normalize(design);
  std::vector<MatrixXd> diff2(static_cast<std::size_t>(a));
  for (Index k = 0; k < a; ++k) {
    const VectorXd c = xn.col(k);
    diff2[static_cast<std::size_t>(k)] = (c.replicate(1, m) - c.transpose().replicate(m, 1)).array().square().matrix();
  }
  const MatrixXd& hm = em.h_;
  const Index p = hm.cols();
  const Index dof = m - p;
  if (dof < 1) throw PreconditionError("not enough training points for the mean function");

  // theta = (log l_1..log l_a, log(g - min_g)).
  auto objective = [&](const VectorXd& theta, VectorXd* grad) -> double {
    MatrixXd sum = MatrixXd::Zero(m, m);
    for (Index k = 0; k < a; ++k) sum += diff2[static_cast<std::size_t>(k)] * std::exp(-2.0 * theta[k]);
    const MatrixXd kern = (-0.5 * sum.array()).exp().matrix();
    const double g = min_g + std::exp(theta[a]);
    MatrixXd r = kern;
    r.diagonal().array() += g;
    Eigen::LLT<MatrixXd> llt(r);
    if (llt.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    const MatrixXd rih = llt.solve(hm);
    Eigen::LLT<MatrixXd> lla(hm.transpose() * rih);
    if (lla.info() != Eigen::Success) return std::numeric_limits<double>::infinity();
    const VectorXd beta = lla.solve(rih.transpose() * targets);
    const VectorXd e = targets - hm * beta;
    const VectorXd alpha = llt.solve(e);
    const double s = e.dot(alpha);
    if (!(s > 0) || !std::isfinite(s)) return std::numeric_limits<double>::infinity();
    const double sigma2 = s / static_cast<double>(dof);
    const double logdet_r = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    const double logdet_a = 2.0 * lla.matrixLLT().diagonal().array().log().sum();
    double value = 0.5 * (static_cast<double>(dof) * std::log(sigma2) + logdet_r + logdet_a);
    double pg = 0.0;
    for (Index k = 0; k < a; ++k) value += box_penalty(theta[k], kLogLenLo, kLogLenHi, &pg);
    value += box_penalty(theta[a], -30.0, 0.0, &pg);
    if (grad) {
      grad->resize(a + 1);
      MatrixXd pmat = llt.solve(MatrixXd::Identity(m, m));
      pmat -= rih * lla.solve(MatrixXd(rih.transpose()));
      const MatrixXd gk = ((alpha * alpha.transpose()) / sigma2 - pmat).cwiseProduct(kern);
      for (Index k = 0; k < a; ++k) {
        // d(loglik)/d(log l_k) = 0.5 * sum(G .* diff2_k) / l_k^2
        const double dl = 0.5 * gk.cwiseProduct(diff2[static_cast<std::size_t>(k)]).sum() * std::exp(-2.0 * theta[k]);
        box_penalty(theta[k], kLogLenLo, kLogLenHi, &pg);
        (*grad)[k] = -dl + pg;
      }
      const double dg = 0.5 * (alpha.squaredNorm() / sigma2 - pmat.trace()) * std::exp(theta[a]);
      box_penalty(theta[a], -30.0, 0.0, &pg);
      (*grad)[a] = -dg + pg;
    }
    return value;
  };

  std::mt19937_64 rng(options.seed);
  std::uniform_real_distribution<double> u_len(std::log(0.2), std::log(3.0));
  std::uniform_real_distribution<double> u_nug(std::log(1e-7), std::log(1e-2));
  const int restarts = std::max(options.restarts, 1);
  VectorXd best_theta;
  double best_value = std::numeric_limits<double>::infinity();
  int failures = 0;
  for (int rs = 0; rs < restarts; ++rs) {
    VectorXd theta0(a + 1);
    if (rs == 0) {
      theta0.head(a).setConstant(std::log(0.7));
      theta0[a] = std::log(1e-4);
    } else {
      for (Index k = 0; k < a; ++k) theta0[k] = u_len(rng);
      theta0[a] = u_nug(rng);
    }
    if (!std::isfinite(objective(theta0, nullptr))) {
      ++failures;
      continue;
    }
    const optim::Result res = optim::bfgs(objective, theta0, options.max_iter, 1e-3, 0.5);
    if (std::isfinite(res.value) && res.value < best_value) {
      best_value = res.value;
      best_theta = res.x;
    } else if (!std::isfinite(res.value)) {
      ++failures;
    }
  }
  if (best_theta.size() == 0) {
    throw FitError("likelihood optimization failed at all " + std::to_string(restarts) + " restarts (" +
                   std::to_string(failures) + " with a non-finite start)");
  }
  Hyperparameters h;
  h.length_scales = VectorXd::Ones(d);
  for (Index k = 0; k < a; ++k) h.length_scales[em.active_[static_cast<std::size_t>(k)]] = std::exp(best_theta[k]);
  h.nugget = min_g + std::exp(best_theta[a]);
  em.finalize(h, true);
  return em;
}

void GpEmulator::predict_batch(const MatrixXd& x, VectorXd& mean, VectorXd* variance) const {
  const Index n = x.rows();
  mean.resize(n);
  if (variance) variance->resize(n);
  if (constant_) {
    if (x.cols() != design_.cols()) throw ShapeError("input dimension mismatch");
    mean.setConstant(beta_[0]);
    if (variance) variance->setConstant(hyper_.nugget_variance());
    return;
  }
  const double s2 = hyper_.signal_variance;
  const double floor = hyper_.nugget_variance();
  const Index m = xn_.rows(), a = xn_.cols();
  VectorXd inv_len(a);
  for (Index j = 0; j < a; ++j) inv_len[j] = 1.0 / hyper_.length_scales[active_[static_cast<std::size_t>(j)]];
  const MatrixXd xn = normalize(x);
  const MatrixXd hq = regressors(xn);
  const MatrixXd q = xn * inv_len.asDiagonal();
  // Each point is computed on its own so results do not depend on batching.
  VectorXd kc(m), v(m), u(h_.cols());
  for (Index j = 0; j < n; ++j) {
    for (Index i = 0; i < m; ++i) kc[i] = std::exp(-0.5 * (xn_.row(i) - q.row(j)).squaredNorm());
    mean[j] = hq.row(j).dot(beta_) + kc.dot(alpha_);
    if (variance) {
      v = chol_r_.matrixL().solve(kc);
      u = hq.row(j).transpose() - rinv_h_.transpose() * kc;
      chol_a_.matrixL().solveInPlace(u);
      (*variance)[j] = std::max(s2 * ((1.0 + hyper_.nugget) - v.squaredNorm() + u.squaredNorm()), floor);
    }
  }
}

Prediction GpEmulator::predict(const VectorXd& x) const {
  if (x.size() != design_.cols()) {
    throw ShapeError("input has dimension " + std::to_string(x.size()) + ", emulator expects " +
                     std::to_string(design_.cols()));
  }
  VectorXd m, v;
  predict_batch(x.transpose(), m, &v);
  Prediction p{m[0], v[0], false};
  for (Index k = 0; k < x.size(); ++k) {
    const double z = (x[k] - lo_[k]) / scale_[k];
    if (z < -1e-9 || z > 1 + 1e-9) p.extrapolated = true;
  }
  return p;
}

VectorXd GpEmulator::sample_posterior(const VectorXd& x, int m_samples, std::uint64_t seed) const {
  if (m_samples < 1) throw PreconditionError("m_samples must be at least 1");
  const Prediction p = predict(x);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(p.mean, std::sqrt(p.variance));
  VectorXd out(m_samples);
  for (int i = 0; i < m_samples; ++i) out[i] = nd(rng);
  return out;
}

LooResult GpEmulator::loo() const {
  const Index m = design_.rows();
  LooResult r;
  if (constant_) {
    r.mean = y_;
    r.variance = VectorXd::Constant(m, hyper_.nugget_variance());
    r.standardized = VectorXd::Zero(m);
    return r;
  }
  const MatrixXd rinv = chol_r_.solve(MatrixXd::Identity(m, m));
  const MatrixXd p = rinv - rinv_h_ * chol_a_.solve(MatrixXd(rinv_h_.transpose()));
  const VectorXd pd = p.diagonal();
  r.mean = y_ - alpha_.cwiseQuotient(pd);
  r.variance = hyper_.signal_variance * pd.cwiseInverse();
  r.standardized = (y_ - r.mean).cwiseQuotient(r.variance.cwiseSqrt());
  return r;
}

// ------------------------------------------------------------ persistence

std::string GpEmulator::to_json() const {
  nlohmann::json j;
  j["format"] = "hmbound.gp.v1";
  j["mean"] = mean_ == MeanSpec::kLinear ? "linear" : "constant";
  j["kernel"] = "squared_exponential";
  j["constant"] = constant_;
  j["input_lo"] = std::vector<double>(lo_.data(), lo_.data() + lo_.size());
  j["input_hi"] = std::vector<double>(hi_.data(), hi_.data() + hi_.size());
  j["length_scales"] =
      std::vector<double>(hyper_.length_scales.data(), hyper_.length_scales.data() + hyper_.length_scales.size());
  j["signal_variance"] = hyper_.signal_variance;
  j["nugget"] = hyper_.nugget;
  j["log_likelihood"] = loglik_;
  j["targets"] = std::vector<double>(y_.data(), y_.data() + y_.size());
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < design_.rows(); ++i) {
    const VectorXd row = design_.row(i);
    rows.push_back(std::vector<double>(row.data(), row.data() + row.size()));
  }
  j["design"] = rows;
  return j.dump(1) + "\n";
}

GpEmulator GpEmulator::from_json(const std::string& text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    if (j.at("format") != "hmbound.gp.v1") throw DataError("unknown emulator format");
    const auto rows = j.at("design");
    const auto targets = j.at("targets").get<std::vector<double>>();
    if (rows.empty()) throw DataError("emulator has an empty design");
    const Index d = static_cast<Index>(rows.at(0).size());
    MatrixXd design(static_cast<Index>(rows.size()), d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto r = rows[i].get<std::vector<double>>();
      if (static_cast<Index>(r.size()) != d) throw DataError("ragged emulator design");
      for (Index k = 0; k < d; ++k) design(static_cast<Index>(i), k) = r[static_cast<std::size_t>(k)];
    }
    auto vec = [](const std::vector<double>& v) { return VectorXd(Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size()))); };
    FitOptions opt;
    opt.mean = j.at("mean") == "linear" ? MeanSpec::kLinear : MeanSpec::kConstant;
    opt.input_lo = vec(j.at("input_lo").get<std::vector<double>>());
    opt.input_hi = vec(j.at("input_hi").get<std::vector<double>>());
    Hyperparameters h;
    h.length_scales = vec(j.at("length_scales").get<std::vector<double>>());
    h.signal_variance = j.at("signal_variance").get<double>();
    h.nugget = j.at("nugget").get<double>();
    return with_hyperparameters(design, vec(targets), opt, h);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("emulator JSON: " + std::string(e.what()));
  }
}

void GpEmulator::save(const std::filesystem::path& path) const { io::write_text(path, to_json()); }

GpEmulator GpEmulator::load(const std::filesystem::path& path) { return from_json(io::read_text(path)); }

void GpEmulator::write_loo_csv(const std::filesystem::path& path) const {
  const LooResult r = loo();
  std::ostringstream out;
  out << "index,target,loo_mean,loo_sd,standardized\n";
  for (Index i = 0; i < y_.size(); ++i) {
    out << i << ',' << io::format_double(y_[i]) << ',' << io::format_double(r.mean[i]) << ','
        << io::format_double(std::sqrt(r.variance[i])) << ',' << io::format_double(r.standardized[i]) << '\n';
  }
  io::write_text(path, out.str());
}

}  // namespace hmbound::gp
