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

#include "hmbound/error.hpp"
#include "hmbound/kron_gauss.hpp"
#include "oracles.hpp"

using namespace hmbound;
using namespace hmbound::kron;

namespace {

FieldVector field(Index ns, Index nt, const VectorXd& v) { return FieldVector(ns, nt, v); }

std::vector<Observation> full_entries(const FieldVector& f, const std::vector<Index>& locs, double sd) {
  std::vector<Observation> out;
  for (Index s : locs)
    for (Index t = 0; t < f.n_time(); ++t) out.push_back({s, t, f(s, t), sd});
  return out;
}

}  // namespace

TEST_CASE("kron_inverse_apply on identity and diagonal factors") {
  KroneckerCov id(MatrixXd::Identity(2, 2), MatrixXd::Identity(3, 3));
  const FieldVector ones = field(2, 3, VectorXd::Ones(6));
  CHECK((kron_inverse_apply(id, ones).values() - VectorXd::Ones(6)).norm() < 1e-14);

  Eigen::Vector2d d(2, 4);
  KroneckerCov diag(MatrixXd(d.asDiagonal()), MatrixXd::Identity(2, 2));
  const VectorXd r = kron_inverse_apply(diag, field(2, 2, VectorXd::Ones(4))).values();
  CHECK(r[0] == doctest::Approx(0.5));
  CHECK(r[1] == doctest::Approx(0.5));
  CHECK(r[2] == doctest::Approx(0.25));
  CHECK(r[3] == doctest::Approx(0.25));
}

TEST_CASE("kron_inverse_apply matches the dense inverse") {
  std::mt19937_64 rng(11);
  for (int ns = 1; ns <= 6; ++ns) {
    for (int nt = 1; nt <= 6; ++nt) {
      const MatrixXd s = oracle::random_spd(ns, rng), t = oracle::random_spd(nt, rng);
      const VectorXd v = oracle::random_vector(ns * nt, rng);
      const VectorXd expect = oracle::kron(s, t).inverse() * v;
      const VectorXd got = kron_inverse_apply(KroneckerCov(s, t), field(ns, nt, v)).values();
      CHECK((got - expect).norm() <= 1e-8 * expect.norm());
    }
  }
}

TEST_CASE("kron factor errors name the factor") {
  MatrixXd bad = MatrixXd::Identity(2, 2);
  bad(1, 1) = -1;
  try {
    KroneckerCov k(bad, MatrixXd::Identity(2, 2));
    FAIL("expected factorization error");
  } catch (const FactorizationError& e) {
    CHECK(std::string(e.what()).find("sigma_s") != std::string::npos);
  }
  KroneckerCov ok(MatrixXd::Identity(2, 2), MatrixXd::Identity(2, 2));
  CHECK_THROWS_AS(kron_inverse_apply(ok, field(3, 2, VectorXd::Ones(6))), ShapeError);
}

TEST_CASE("nugget retry rescues a singular factor") {
  MatrixXd r = MatrixXd::Ones(3, 3);  // rank one
  SpdFactor f(r, "ones");
  CHECK(f.nugget() == doctest::Approx(1e-8));
}

TEST_CASE("conditional_mean limits") {
  std::mt19937_64 rng(3);
  const MatrixXd st = oracle::random_spd(3, rng);
  const FieldVector h = field(2, 3, oracle::random_vector(6, rng));
  const FieldVector z = field(2, 3, oracle::random_vector(6, rng));
  const FieldVector weak = conditional_mean(h, st, 1e8 * MatrixXd::Identity(3, 3), z);
  CHECK((weak.values() - h.values()).norm() <= 1e-4 * h.values().norm());
  const FieldVector exact = conditional_mean(h, st, 1e-10 * MatrixXd::Identity(3, 3), z);
  CHECK((exact.values() - z.values()).norm() <= 1e-6 * z.values().norm());

  VectorXd zv = z.values();
  zv[2] = std::nan("");
  CHECK_THROWS_AS(conditional_mean(h, st, MatrixXd::Identity(3, 3), field(2, 3, zv)), PreconditionError);
}

TEST_CASE("conditional_mean matches dense Gaussian conditioning") {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 5; ++rep) {
    const MatrixXd ss = oracle::random_spd(2, rng), st = oracle::random_spd(3, rng), sto = oracle::random_spd(3, rng);
    const VectorXd h = oracle::random_vector(6, rng), z = oracle::random_vector(6, rng);
    // Joint (T, z): Cov(T) = Ss x St, z = T + e, Cov(e) = Ss x St'.
    const MatrixXd ct = oracle::kron(ss, st);
    const MatrixXd cz = ct + oracle::kron(ss, sto);
    const VectorXd expect = h + ct * cz.inverse() * (z - h);
    const VectorXd got = conditional_mean(field(2, 3, h), st, sto, field(2, 3, z)).values();
    CHECK((got - expect).norm() <= 1e-8 * expect.norm());
  }
}

TEST_CASE("marginal_obs_cov") {
  const MatrixXd ss = MatrixXd::Identity(2, 2);
  KroneckerCov m = marginal_obs_cov(KroneckerCov(ss, MatrixXd::Identity(2, 2)), KroneckerCov(ss, MatrixXd::Identity(2, 2)));
  CHECK((m.sigma_t() - 2 * MatrixXd::Identity(2, 2)).norm() < 1e-15);

  std::mt19937_64 rng(8);
  const MatrixXd s = oracle::random_spd(3, rng), t = oracle::random_spd(3, rng), to = oracle::random_spd(3, rng);
  const MatrixXd se = oracle::kron(s, to), seps = oracle::kron(s, t);
  const MatrixXd sei = se.inverse();
  const MatrixXd woodbury = (sei - sei * (sei + seps.inverse()).inverse() * sei).inverse();
  const MatrixXd got = marginal_obs_cov(KroneckerCov(s, t), KroneckerCov(s, to)).dense();
  CHECK((got - woodbury).norm() <= 1e-8 * woodbury.norm());

  const MatrixXd tiny = marginal_obs_cov(KroneckerCov(s, t), KroneckerCov(s, 1e-10 * MatrixXd::Identity(3, 3))).sigma_t();
  CHECK((tiny - t).norm() <= 1e-8 * t.norm());

  CHECK_THROWS_AS(marginal_obs_cov(KroneckerCov(s, t), KroneckerCov(2 * s, to)), ModelAssumptionError);
}

TEST_CASE("impute_missing on complete data and independent times") {
  std::mt19937_64 rng(9);
  const FieldVector h = field(2, 3, oracle::random_vector(6, rng));
  const FieldVector zf = field(2, 3, oracle::random_vector(6, rng));
  ObservationSet obs(2, 3, full_entries(zf, {0, 1}, 0.1));
  KroneckerCov marg(oracle::random_spd(2, rng), oracle::random_spd(3, rng));
  CHECK(impute_missing(obs, h, marg).values() == zf.values());

  // Single location, identity temporal covariance: missing = prior.
  ObservationSet one(1, 4, {{0, 0, 3.0, 0.1}, {0, 2, -1.0, 0.1}});
  const FieldVector h1 = field(1, 4, VectorXd::LinSpaced(4, 1, 4));
  const FieldVector got = impute_missing(one, h1, KroneckerCov(MatrixXd::Identity(1, 1), MatrixXd::Identity(4, 4)));
  CHECK(got(0, 0) == 3.0);
  CHECK(got(0, 1) == doctest::Approx(2.0));
  CHECK(got(0, 2) == -1.0);
  CHECK(got(0, 3) == doctest::Approx(4.0));
}

TEST_CASE("impute_missing matches dense conditioning; sampling is seeded") {
  std::mt19937_64 rng(21);
  const MatrixXd ss = oracle::random_spd(2, rng), st = oracle::random_spd(4, rng);
  const VectorXd h = oracle::random_vector(8, rng), z = oracle::random_vector(8, rng);
  std::vector<Observation> entries;
  std::vector<int> obs_idx;
  for (int s = 0; s < 2; ++s) {
    for (int t = 0; t < 4; ++t) {
      const int i = s * 4 + t;
      if (i == 1 || i == 4 || i == 7) continue;
      entries.push_back({s, t, z[i], 0.1});
      obs_idx.push_back(i);
    }
  }
  ObservationSet obs(2, 4, entries);
  KroneckerCov marg(ss, st);
  const VectorXd expect_all = oracle::gaussian_condition(h, oracle::kron(ss, st), obs_idx, oracle::select(z, obs_idx));
  const FieldVector got = impute_missing(obs, field(2, 4, h), marg);
  CHECK((got.values() - expect_all).norm() <= 1e-8 * expect_all.norm());
  // Determinism.
  CHECK(impute_missing(obs, field(2, 4, h), marg).values() == got.values());
  ImputeOptions a{ImputeMode::kSample, 7}, b{ImputeMode::kSample, 7}, c{ImputeMode::kSample, 8};
  const VectorXd sa = impute_missing(obs, field(2, 4, h), marg, a).values();
  CHECK(sa == impute_missing(obs, field(2, 4, h), marg, b).values());
  CHECK(sa != impute_missing(obs, field(2, 4, h), marg, c).values());
  for (int i : obs_idx) CHECK(sa[i] == z[i]);

  // Declared location with no entries.
  ObservationSet gap(3, 4, {{0, 0, 1.0, 0.1}}, {0, 2});
  CHECK_THROWS_AS(impute_missing(gap, field(3, 4, VectorXd::Zero(12)),
                                 KroneckerCov(MatrixXd::Identity(2, 2), MatrixXd::Identity(4, 4))),
                  DataError);
}

TEST_CASE("imputation then conditioning equals dense conditioning on observed entries") {
  std::mt19937_64 rng(33);
  for (int rep = 0; rep < 4; ++rep) {
    const int ns = 3 + rep % 2, nt = 4 + rep % 3;
    if (ns * nt > 36) continue;
    const MatrixXd ss = oracle::random_corr(ns, rng), st = oracle::random_spd(nt, rng);
    const VectorXd obs_var = (oracle::random_vector(nt, rng).array().abs() + 0.05).matrix();
    const MatrixXd sto = obs_var.asDiagonal();
    const VectorXd h = oracle::random_vector(ns * nt, rng), z = oracle::random_vector(ns * nt, rng);
    // Location 1 unobserved; others partially observed.
    std::vector<Observation> entries;
    std::vector<int> idx;
    std::uniform_real_distribution<double> u(0, 1);
    for (int s = 0; s < ns; ++s) {
      if (s == 1) continue;
      for (int t = 0; t < nt; ++t) {
        if (t > 0 && u(rng) < 0.35) continue;
        entries.push_back({s, t, z[s * nt + t], std::sqrt(obs_var[t])});
        idx.push_back(s * nt + t);
      }
    }
    ObservationSet obs(ns, nt, entries);
    const std::vector<Index> locs = obs.observed_locations();
    // Dense oracle: T ~ N(h, Ss x St), z_o = T_o + e_o, e ~ N(0, Ss x St').
    const MatrixXd ct = oracle::kron(ss, st);
    const MatrixXd cz = ct + oracle::kron(ss, sto);
    std::vector<int> all(ns * nt);
    for (int i = 0; i < ns * nt; ++i) all[i] = i;
    const VectorXd expect = h + oracle::select(ct, all, idx) * oracle::select(cz, idx, idx).inverse() *
                                    (oracle::select(z, idx) - oracle::select(h, idx));

    const FieldVector hf(ns, nt, h);
    const KroneckerCov marg(submatrix(ss, locs, locs), st + sto);
    const FieldVector zi = impute_missing(obs, hf, marg);
    const VectorXd got = conditional_mean(hf, ss, locs, st, sto, zi).values();
    CHECK((got - expect).norm() <= 1e-6 * expect.norm());
  }
}

TEST_CASE("shrinkage towards the prior as observation error grows") {
  std::mt19937_64 rng(44);
  const MatrixXd st = oracle::random_spd(4, rng);
  const VectorXd d0 = (oracle::random_vector(4, rng).array().abs() + 0.1).matrix();
  const MatrixXd sto = d0.asDiagonal();
  const FieldVector h(2, 4, oracle::random_vector(8, rng)), z(2, 4, oracle::random_vector(8, rng));
  double prev = 1e300;
  for (double k : {1.0, 1.5, 2.0, 4.0, 10.0, 100.0}) {
    MatrixXd scaled = sto;
    scaled.diagonal() *= k;
    const double d = (conditional_mean(h, st, scaled, z).values() - h.values()).norm();
    CHECK(d <= prev + 1e-12);
    prev = d;
  }
}
