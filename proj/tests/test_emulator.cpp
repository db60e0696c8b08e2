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

#include <doctest.h>

#include <filesystem>

#include "hmbound/emulator.hpp"
#include "hmbound/error.hpp"
#include "oracles.hpp"

using namespace hmbound;
using namespace hmbound::gp;

namespace {

MatrixXd uniform_design(int m, int d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0, 1);
  MatrixXd x(m, d);
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < d; ++k) x(i, k) = u(rng);
  return x;
}

VectorXd smooth_fn(const MatrixXd& x) {
  VectorXd y(x.rows());
  for (Index i = 0; i < x.rows(); ++i) y[i] = std::sin(3 * x(i, 0)) + 0.5 * x(i, 1) * x(i, 1) - x(i, 2);
  return y;
}

// Universal kriging by explicit inverses, on normalized inputs.
void dense_predict(const GpEmulator& em, const VectorXd& x, double& mean, double& var) {
  const auto& h = em.hyperparameters();
  const MatrixXd& d = em.design();
  const Index m = d.rows(), k = d.cols();
  auto nz = [&](const VectorXd& v) {
    VectorXd out(k);
    for (Index j = 0; j < k; ++j) out[j] = (v[j] - em.input_lo()[j]) / (em.input_hi()[j] - em.input_lo()[j]);
    return out;
  };
  auto kern = [&](const VectorXd& a, const VectorXd& b) {
    double s = 0;
    for (Index j = 0; j < k; ++j) s += std::pow((a[j] - b[j]) / h.length_scales[j], 2);
    return std::exp(-0.5 * s);
  };
  auto reg = [&](const VectorXd& v) {
    if (em.mean_spec() == MeanSpec::kConstant) return VectorXd(VectorXd::Ones(1));
    VectorXd r(k + 1);
    r[0] = 1;
    r.tail(k) = v;
    return r;
  };
  MatrixXd r(m, m), hm(m, em.mean_spec() == MeanSpec::kConstant ? 1 : k + 1);
  for (Index i = 0; i < m; ++i) {
    hm.row(i) = reg(nz(d.row(i))).transpose();
    for (Index j = 0; j < m; ++j) r(i, j) = kern(nz(d.row(i)), nz(d.row(j))) + (i == j ? h.nugget : 0.0);
  }
  const MatrixXd ri = r.inverse();
  const MatrixXd a = hm.transpose() * ri * hm;
  const VectorXd beta = a.inverse() * hm.transpose() * ri * em.targets();
  VectorXd rx(m);
  for (Index i = 0; i < m; ++i) rx[i] = kern(nz(d.row(i)), nz(x));
  const VectorXd hx = reg(nz(x));
  mean = hx.dot(beta) + rx.dot(ri * (em.targets() - hm * beta));
  const VectorXd u = hx - hm.transpose() * ri * rx;
  var = h.signal_variance * (1 + h.nugget - rx.dot(ri * rx) + u.dot(a.inverse() * u));
}

}  // namespace

TEST_CASE("constant targets give a constant emulator") {
  std::mt19937_64 rng(1);
  const MatrixXd x = uniform_design(10, 2, rng);
  std::vector<std::string> warnings;
  const GpEmulator em = GpEmulator::fit(x, VectorXd::Constant(10, 5.0), {}, &warnings);
  CHECK(em.is_constant());
  CHECK(warnings.size() == 1);
  const Prediction p = em.predict(Eigen::Vector2d(0.3, 0.9));
  CHECK(p.mean == 5.0);
  CHECK(p.variance < 1e-10);
}

TEST_CASE("linear targets are reproduced by the linear mean") {
  std::mt19937_64 rng(2);
  const MatrixXd x = uniform_design(12, 3, rng);
  const Eigen::Vector3d w(1.5, -2.0, 0.7);
  const VectorXd y = (x * w).array() + 4.0;
  const GpEmulator em = GpEmulator::fit(x, y, {MeanSpec::kLinear, 3, 1});
  for (int rep = 0; rep < 5; ++rep) {
    const VectorXd q = uniform_design(1, 3, rng).row(0);
    const double truth = q.dot(w) + 4.0;
    CHECK(em.predict(q).mean == doctest::Approx(truth).epsilon(1e-6));
  }
}

TEST_CASE("one-dimensional sine: LOO calibration") {
  MatrixXd x(15, 1);
  VectorXd y(15);
  for (int i = 0; i < 15; ++i) {
    x(i, 0) = i / 14.0;
    y[i] = std::sin(2 * 3.141592653589793 * x(i, 0));
  }
  const GpEmulator em = GpEmulator::fit(x, y, {MeanSpec::kConstant, 5, 3});
  const LooResult loo = em.loo();
  int within = 0;
  for (int i = 0; i < 15; ++i) within += std::abs(loo.standardized[i]) < 3 ? 1 : 0;
  CHECK(within >= 14);
}

TEST_CASE("closed-form LOO equals refitting without the point") {
  std::mt19937_64 rng(4);
  const MatrixXd x = uniform_design(14, 3, rng);
  const VectorXd y = smooth_fn(x);
  FitOptions opt{MeanSpec::kLinear, 2, 5};
  opt.input_lo = VectorXd::Zero(3);
  opt.input_hi = VectorXd::Ones(3);
  const GpEmulator em = GpEmulator::fit(x, y, opt);
  const LooResult loo = em.loo();
  for (Index i = 0; i < 14; ++i) {
    MatrixXd xr(13, 3);
    VectorXd yr(13);
    for (Index j = 0, r = 0; j < 14; ++j) {
      if (j == i) continue;
      xr.row(r) = x.row(j);
      yr[r++] = y[j];
    }
    const GpEmulator sub = GpEmulator::with_hyperparameters(xr, yr, opt, em.hyperparameters());
    const Prediction p = sub.predict(x.row(i).transpose());
    CHECK(loo.mean[i] == doctest::Approx(p.mean).epsilon(1e-8));
    CHECK(loo.variance[i] == doctest::Approx(p.variance).epsilon(1e-6));
  }
}

TEST_CASE("prediction matches dense universal kriging and interpolates") {
  std::mt19937_64 rng(5);
  const MatrixXd x = uniform_design(20, 3, rng);
  const VectorXd y = smooth_fn(x);
  for (MeanSpec ms : {MeanSpec::kConstant, MeanSpec::kLinear}) {
    const GpEmulator em = GpEmulator::fit(x, y, {ms, 3, 6});
    for (int rep = 0; rep < 5; ++rep) {
      const VectorXd q = uniform_design(1, 3, rng).row(0);
      double mean = 0, var = 0;
      dense_predict(em, q, mean, var);
      const Prediction p = em.predict(q);
      CHECK(p.mean == doctest::Approx(mean).epsilon(1e-6));
      CHECK(p.variance == doctest::Approx(std::max(var, em.hyperparameters().nugget_variance())).epsilon(1e-5));
    }
    const double tol = 3 * std::sqrt(em.hyperparameters().nugget_variance());
    for (Index i = 0; i < 20; ++i) {
      const Prediction p = em.predict(x.row(i).transpose());
      CHECK(std::abs(p.mean - y[i]) <= tol);
      CHECK(p.variance >= em.hyperparameters().nugget_variance());
    }
  }
}

TEST_CASE("prior reversion far from the data") {
  std::mt19937_64 rng(6);
  const MatrixXd x = uniform_design(15, 2, rng);
  const VectorXd y = smooth_fn((MatrixXd(15, 3) << x, x.col(0)).finished());
  const GpEmulator em = GpEmulator::fit(x, y, {MeanSpec::kConstant, 3, 7});
  const Prediction p = em.predict(Eigen::Vector2d(1e4, -1e4));
  CHECK(p.extrapolated);
  CHECK(p.mean == doctest::Approx(em.beta()[0]).epsilon(1e-10));
  const auto& h = em.hyperparameters();
  CHECK(p.variance >= h.signal_variance * (1 + h.nugget) * (1 - 1e-12));
  double mean = 0, var = 0;
  dense_predict(em, Eigen::Vector2d(1e4, -1e4), mean, var);
  CHECK(p.variance == doctest::Approx(var).epsilon(1e-8));
}

TEST_CASE("batch prediction equals pointwise prediction") {
  std::mt19937_64 rng(7);
  const MatrixXd x = uniform_design(25, 4, rng);
  const VectorXd y = smooth_fn(x);
  const GpEmulator em = GpEmulator::fit(x, y, {MeanSpec::kLinear, 2, 8});
  const MatrixXd q = uniform_design(5000, 4, rng);
  VectorXd m, v;
  em.predict_batch(q, m, &v);
  for (Index i = 0; i < 5000; i += 97) {
    const Prediction p = em.predict(q.row(i).transpose());
    CHECK(p.mean == m[i]);
    CHECK(p.variance == v[i]);
  }
  CHECK_THROWS_AS(em.predict(Eigen::Vector3d::Zero()), ShapeError);
}

TEST_CASE("posterior sampling") {
  std::mt19937_64 rng(8);
  const MatrixXd x = uniform_design(15, 2, rng);
  const VectorXd y = smooth_fn((MatrixXd(15, 3) << x, x.col(1)).finished());
  const GpEmulator em = GpEmulator::fit(x, y, {MeanSpec::kLinear, 2, 9});
  const VectorXd q = Eigen::Vector2d(0.37, 0.61);
  CHECK(em.sample_posterior(q, 50, 4) == em.sample_posterior(q, 50, 4));
  const VectorXd s = em.sample_posterior(q, 100000, 11);
  const Prediction p = em.predict(q);
  const double mean = s.mean();
  const double var = (s.array() - mean).square().sum() / (s.size() - 1);
  CHECK(std::abs(mean - p.mean) <= 3 * std::sqrt(p.variance / 1e5));
  // SE of the sample variance for a normal: var * sqrt(2/(n-1)).
  CHECK(std::abs(var - p.variance) <= 3 * p.variance * std::sqrt(2.0 / (1e5 - 1)));

  const VectorXd at_train = em.sample_posterior(x.row(0).transpose(), 20, 1);
  CHECK((at_train.array() - y[0]).abs().maxCoeff() <= 10 * std::sqrt(em.hyperparameters().nugget_variance()) + 1e-6);
  CHECK_THROWS_AS(em.sample_posterior(q, 0, 1), PreconditionError);
}

TEST_CASE("affine rescaling of inputs leaves predictions unchanged") {
  std::mt19937_64 rng(9);
  const MatrixXd x = uniform_design(20, 3, rng);
  const VectorXd y = smooth_fn(x);
  const Eigen::Vector3d scale(100.0, 0.01, 7.0), shift(-50.0, 3.0, 1e3);
  const MatrixXd xs = (x * scale.asDiagonal()).rowwise() + shift.transpose();
  const GpEmulator a = GpEmulator::fit(x, y, {MeanSpec::kLinear, 3, 10});
  const GpEmulator b = GpEmulator::fit(xs, y, {MeanSpec::kLinear, 3, 10});
  for (int rep = 0; rep < 5; ++rep) {
    const VectorXd q = uniform_design(1, 3, rng).row(0);
    const VectorXd qs = q.cwiseProduct(scale) + shift;
    CHECK(a.predict(q).mean == doctest::Approx(b.predict(qs).mean).epsilon(1e-6));
    CHECK(a.predict(q).variance == doctest::Approx(b.predict(qs).variance).epsilon(1e-4));
  }
}

TEST_CASE("JSON round trip is exact") {
  std::mt19937_64 rng(10);
  const MatrixXd x = uniform_design(18, 3, rng);
  const GpEmulator em = GpEmulator::fit(x, smooth_fn(x), {MeanSpec::kLinear, 2, 11});
  const auto path = std::filesystem::temp_directory_path() / "hmbound_test_gp.json";
  em.save(path);
  const GpEmulator back = GpEmulator::load(path);
  const MatrixXd q = uniform_design(50, 3, rng);
  VectorXd m1, v1, m2, v2;
  em.predict_batch(q, m1, &v1);
  back.predict_batch(q, m2, &v2);
  CHECK(m1 == m2);
  CHECK(v1 == v2);
  CHECK(back.to_json() == em.to_json());
}
