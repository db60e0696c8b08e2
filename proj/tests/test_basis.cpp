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

#include <numbers>

#include "hmbound/basis.hpp"
#include "hmbound/error.hpp"
#include "oracles.hpp"

using namespace hmbound;
using namespace hmbound::basis;

namespace {

CentredEnsemble random_ensemble(int l, int n, std::mt19937_64& rng) {
  return CentredEnsemble::from_raw(oracle::random_matrix(l, n, rng));
}

}  // namespace

TEST_CASE("svd_basis on a rank-one ensemble") {
  MatrixXd raw(2, 2);
  raw << 1, -1, 0, 0;
  const Basis b = svd_basis(CentredEnsemble::from_raw(raw));
  REQUIRE(b.rank() == 1);
  CHECK(std::abs(b.vectors(0, 0)) == doctest::Approx(1.0));
  CHECK(b.vectors(1, 0) == doctest::Approx(0.0));
  CHECK(b.singular_values[0] == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("svd_basis is orthonormal and explains variance like the covariance eigenproblem") {
  std::mt19937_64 rng(1);
  const CentredEnsemble ens = random_ensemble(6, 4, rng);
  const Basis b = svd_basis(ens);
  CHECK(b.rank() == 3);
  CHECK((b.vectors.transpose() * b.vectors - MatrixXd::Identity(3, 3)).norm() < 1e-10);

  Eigen::SelfAdjointEigenSolver<MatrixXd> es(ens.data() * ens.data().transpose());
  VectorXd ev = es.eigenvalues().reverse().head(3);
  const VectorXd frac = b.explained_fraction();
  for (int k = 0; k < 3; ++k) CHECK(frac[k] == doctest::Approx(ev[k] / ev.sum()).epsilon(1e-10));
}

TEST_CASE("ensemble size and centring checks") {
  CHECK_THROWS_AS(CentredEnsemble::from_raw(MatrixXd::Ones(3, 1)), EnsembleSizeError);
  CHECK_THROWS_AS(CentredEnsemble(MatrixXd::Ones(3, 2), VectorXd::Zero(3)), DataError);
  CHECK_THROWS_AS(svd_basis(CentredEnsemble::from_raw(MatrixXd::Ones(3, 4))), RankError);
}

TEST_CASE("project and reconstruct") {
  std::mt19937_64 rng(2);
  const CentredEnsemble ens = random_ensemble(8, 5, rng);
  const Basis b = svd_basis(ens);
  const Weight id = Weight::identity();
  CHECK(project(b, id, ens.mean(), ens.mean()).norm() < 1e-14);
  const VectorXd f = ens.mean() + 2.0 * b.vectors.col(0);
  const VectorXd c = project(b, id, f, ens.mean());
  CHECK(c[0] == doctest::Approx(2.0));
  CHECK(c.tail(c.size() - 1).norm() < 1e-12);
  CHECK((reconstruct(b, VectorXd::Zero(b.rank()), ens.mean()) - ens.mean()).norm() == 0.0);

  // Every member reconstructs exactly from the full basis.
  for (int i = 0; i < 5; ++i) {
    const VectorXd member = ens.data().col(i) + ens.mean();
    const VectorXd back = reconstruct(b, project(b, id, member, ens.mean()), ens.mean());
    CHECK((back - member).norm() <= 1e-8 * member.norm());
  }
  CHECK_THROWS_AS(reconstruct(b, VectorXd::Zero(b.rank() + 1), ens.mean()), ShapeError);
}

TEST_CASE("weighted projection matches dense GLS") {
  std::mt19937_64 rng(3);
  const CentredEnsemble ens = random_ensemble(8, 4, rng);
  const Basis b = svd_basis(ens);
  const MatrixXd w = oracle::random_spd(8, rng);
  const VectorXd f = oracle::random_vector(8, rng);
  const VectorXd expect = oracle::gls(b.vectors, w, f - ens.mean());
  const VectorXd got = project(b, Weight::dense(w), f, ens.mean());
  CHECK((got - expect).norm() <= 1e-8 * expect.norm());
  CHECK_THROWS_AS(project(MatrixXd::Zero(8, 2), Weight::identity(), f), RankError);
}

TEST_CASE("truncation error equals the discarded singular values") {
  std::mt19937_64 rng(4);
  const CentredEnsemble ens = random_ensemble(7, 5, rng);
  const Basis b = svd_basis(ens);
  const Basis b1 = b.truncated(1);
  double total = 0.0;
  for (int i = 0; i < 5; ++i) {
    const VectorXd m = ens.data().col(i) + ens.mean();
    total += (reconstruct(b1, project(b1, Weight::identity(), m, ens.mean()), ens.mean()) - m).squaredNorm();
  }
  const double expect = b.singular_values.tail(b.rank() - 1).squaredNorm();
  CHECK(total == doctest::Approx(expect).epsilon(1e-10));
}

TEST_CASE("recon_error") {
  Eigen::Vector2d z(3, 4);
  CHECK(recon_error(MatrixXd(Eigen::Vector2d(1, 0)), Weight::identity(), z) == doctest::Approx(16.0));
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const MatrixXd b = oracle::random_matrix(9, 3, rng);
    const MatrixXd w = oracle::random_spd(9, rng);
    const VectorXd zz = oracle::random_vector(9, rng);
    const double got = recon_error(b, Weight::dense(w), zz);
    CHECK(got >= 0.0);
    CHECK(got == doctest::Approx(oracle::recon_error(b, w, zz)).epsilon(1e-8));
    // In-span vectors have zero error; out-of-span ones do not.
    const VectorXd in = b * oracle::random_vector(3, rng);
    CHECK(recon_error(b, Weight::dense(w), in) <= 1e-10 * in.squaredNorm());
    CHECK(got > 1e-6);
  }
}

TEST_CASE("projection is idempotent under reconstruction") {
  std::mt19937_64 rng(6);
  const CentredEnsemble ens = random_ensemble(10, 6, rng);
  const Basis b = svd_basis(ens);
  const Weight w = Weight::dense(oracle::random_spd(10, rng));
  for (int rep = 0; rep < 10; ++rep) {
    const VectorXd c = oracle::random_vector(static_cast<int>(b.rank()), rng);
    CHECK((project(b, w, reconstruct(b, c, ens.mean()), ens.mean()) - c).norm() <= 1e-10 * std::max(1.0, c.norm()));
  }
}

TEST_CASE("components_for_fraction") {
  Basis b;
  b.singular_values = Eigen::Vector4d(std::sqrt(80.0), std::sqrt(16.0), std::sqrt(3.0), 1.0);
  b.vectors = MatrixXd::Identity(4, 4);
  CHECK(components_for_fraction(b, 0.95) == 2);
  CHECK(components_for_fraction(b, 0.995) == 4);
}

TEST_CASE("rotation recovers a target already spanned by the leading vector") {
  std::mt19937_64 rng(7);
  const CentredEnsemble ens = random_ensemble(12, 6, rng);
  const Basis b = svd_basis(ens);
  const Rotation r = optimal_rotation(b, Weight::identity(), 3.0 * b.vectors.col(0), {1, 0.001, {}});
  CHECK(r.error <= 1e-10);
  CHECK(std::abs(r.basis.vectors.col(0).dot(b.vectors.col(0))) == doctest::Approx(1.0));
}

TEST_CASE("rotation towards the last direction matches exhaustive search") {
  // Three members give two nonzero directions; search all unit combinations.
  std::mt19937_64 rng(8);
  const CentredEnsemble ens = random_ensemble(5, 3, rng);
  const Basis b = svd_basis(ens);
  REQUIRE(b.rank() == 2);
  const VectorXd var = b.singular_values.array().square();
  const double f2 = var[1] / var.sum();
  REQUIRE(f2 < 0.49);
  const VectorXd z = b.vectors.col(1) + 0.1 * oracle::random_vector(5, rng);
  for (double min_signal : {0.001, 0.5 * (f2 + (1.0 - f2))}) {
    const Rotation r = optimal_rotation(b, Weight::identity(), z, {1, min_signal, {}});
    double best = 1e300;
    for (int k = 0; k <= 200000; ++k) {
      const double th = std::numbers::pi * k / 200000.0;
      const Eigen::Vector2d a(std::cos(th), std::sin(th));
      const double sig = (a.array().square() * var.array()).sum() / var.sum();
      if (sig < min_signal) continue;
      best = std::min(best, oracle::recon_error(b.vectors * a, MatrixXd::Identity(5, 5), z));
    }
    CHECK(r.error <= best * (1 + 1e-6) + 1e-12);
    CHECK(r.error < r.truncated_error);
    CHECK(r.basis.explained_fraction()[0] >= min_signal - 1e-9);
  }
}

TEST_CASE("infeasible signal constraint") {
  std::mt19937_64 rng(9);
  const CentredEnsemble ens = random_ensemble(6, 4, rng);
  const Basis b = svd_basis(ens);
  CHECK_THROWS_AS(optimal_rotation(b, Weight::identity(), oracle::random_vector(6, rng), {1, 1.0, {}}),
                  ConstraintError);
}

TEST_CASE("rotation dominance and span preservation on random cases") {
  std::mt19937_64 rng(10);
  for (int rep = 0; rep < 25; ++rep) {
    const int l = 6 + rep % 7, n = 4 + rep % 5;
    const CentredEnsemble ens = random_ensemble(l, n, rng);
    const Basis b = svd_basis(ens);
    const Weight w = Weight::dense(oracle::random_spd(l, rng));
    const VectorXd z = oracle::random_vector(l, rng);
    for (Index q = 1; q <= std::min<Index>(3, b.rank()); ++q) {
      const Rotation r = optimal_rotation(b, w, z, {q, 0.01, {}});
      CHECK(r.error <= r.truncated_error * (1 + 1e-10) + 1e-12);
      CHECK(r.basis.rank() == q);
      for (Index j = 0; j < q; ++j) {
        const VectorXd v = r.basis.vectors.col(j);
        const VectorXd coef = ens.data().colPivHouseholderQr().solve(v);
        CHECK((ens.data() * coef - v).norm() <= 1e-8 * v.norm());
      }
      // Retained vectors are W-orthogonal.
      const MatrixXd g = r.basis.vectors.transpose() * w.solve(r.basis.vectors);
      for (Index i = 0; i < q; ++i)
        for (Index j = 0; j < i; ++j) CHECK(std::abs(g(i, j)) <= 1e-8 * std::sqrt(g(i, i) * g(j, j)));
    }
  }
}

TEST_CASE("rotation on a row subset") {
  std::mt19937_64 rng(12);
  const CentredEnsemble ens = random_ensemble(10, 6, rng);
  const Basis b = svd_basis(ens);
  const std::vector<Index> rows{1, 3, 4, 8};
  const VectorXd z = oracle::random_vector(4, rng);
  const Rotation r = optimal_rotation(b, Weight::identity(), z, {2, 0.001, rows});
  CHECK(r.basis.length() == 10);
  CHECK(r.error <= r.truncated_error + 1e-12);
}
