#include "fixtures.hpp"

#include <doctest.h>

#include "fedcm/linalg.hpp"
#include "fedcm/rng.hpp"

#include <set>

using namespace fedcm;

TEST_CASE("pinv satisfies the Moore-Penrose conditions") {
  Rng rng(5);
  for (int rep = 0; rep < 40; ++rep) {
    const Index d = 2 + rep % 5;
    Matrix a = fixture::random_spd(d, rng);
    if (rep % 2 == 1) {
      // rank-deficient: drop one direction
      const auto e = linalg::sym_eig(a);
      Vector vals = e.values;
      vals(0) = 0.0;
      a = e.vectors * vals.asDiagonal() * e.vectors.transpose();
    }
    const auto p = linalg::pinv(a);
    const Matrix& x = p.value;
    const double tol = 1e-9 * (1.0 + a.norm() * x.norm());
    CHECK((a * x * a - a).norm() <= tol);
    CHECK((x * a * x - x).norm() <= tol * (1.0 + x.norm()));
    CHECK(((a * x).transpose() - a * x).norm() <= tol);
    CHECK(((x * a).transpose() - x * a).norm() <= tol);
    CHECK(p.rank_deficient == (rep % 2 == 1));
    CHECK(p.rank == (rep % 2 == 1 ? d - 1 : d));
  }
}

TEST_CASE("pinv of a rectangular and of an empty matrix") {
  Matrix a(2, 3);
  a << 1, 0, 0, 0, 2, 0;
  const Matrix x = linalg::pinv(a).value;
  CHECK(x.rows() == 3);
  CHECK(x.cols() == 2);
  CHECK(x(0, 0) == doctest::Approx(1.0));
  CHECK(x(1, 1) == doctest::Approx(0.5));
  CHECK(x(2, 0) == doctest::Approx(0.0));
  const auto e = linalg::pinv(Matrix(0, 0));
  CHECK(e.value.size() == 0);
}

TEST_CASE("pinv_solve returns the minimum-norm solution") {
  Matrix a = Matrix::Zero(3, 3);
  a(0, 0) = 2.0;
  a(1, 1) = 1.0;
  Vector b(3);
  b << 4.0, 3.0, 0.0;
  const Vector x = linalg::pinv_solve(a, b);
  CHECK(x(0) == doctest::Approx(2.0));
  CHECK(x(1) == doctest::Approx(3.0));
  CHECK(x(2) == 0.0);
  CHECK_THROWS_AS(linalg::pinv_solve(a, Vector::Zero(2)), std::invalid_argument);
}

TEST_CASE("pinv is deterministic bitwise") {
  Rng rng(9);
  const Matrix a = fixture::random_spd(5, rng);
  CHECK(linalg::pinv(a).value == linalg::pinv(a).value);
}

TEST_CASE("symmetric eigen helpers") {
  Rng rng(21);
  const Matrix a = fixture::random_spd(4, rng);
  const auto e = linalg::sym_eig(a);
  for (Index i = 1; i < 4; ++i) CHECK(e.values(i) >= e.values(i - 1));
  CHECK((e.vectors * e.values.asDiagonal() * e.vectors.transpose() - a).norm() < 1e-12);
  CHECK(linalg::min_eigenvalue(a) == doctest::Approx(e.values(0)));
  CHECK(linalg::spectral_abs_max(a) == doctest::Approx(e.values(3)));

  const Matrix r = linalg::psd_sqrt(a);
  CHECK((r * r - a).norm() < 1e-12);

  Matrix ind(2, 2);
  ind << 1.0, 2.0, 2.0, 1.0;  // eigenvalues -1, 3
  CHECK(linalg::spectral_abs_max(ind) == doctest::Approx(3.0));
  const Matrix proj = linalg::psd_project(ind);
  CHECK(linalg::min_eigenvalue(proj) >= -1e-14);
  CHECK(proj(0, 0) == doctest::Approx(1.5));
  CHECK(proj(0, 1) == doctest::Approx(1.5));
  CHECK_THROWS_AS(linalg::sym_eig(Matrix(2, 3)), std::invalid_argument);
}

TEST_CASE("pack_upper layout and round trip") {
  Matrix a(3, 3);
  a << 1, 2, 3, 2, 4, 5, 3, 5, 6;
  const auto p = linalg::pack_upper(a);
  CHECK(p == std::vector<double>{1, 2, 3, 4, 5, 6});
  CHECK(linalg::unpack_upper(p, 3) == a);
  CHECK(linalg::upper_size(4) == 10);
  CHECK_THROWS_AS(linalg::unpack_upper(p, 4), std::invalid_argument);
  CHECK(linalg::symmetrize(Matrix::Identity(2, 2)) == Matrix::Identity(2, 2));
}

TEST_CASE("seed derivation") {
  CHECK(derive_seed(1, {2, 3}) == derive_seed(1, {2, 3}));
  std::set<std::uint64_t> seen;
  for (std::uint64_t g = 0; g < 20; ++g)
    for (std::uint64_t r = 0; r < 20; ++r) seen.insert(derive_seed(42, {g, r}));
  CHECK(seen.size() == 400);
  CHECK(derive_seed(42, {0, 1}) != derive_seed(42, {1, 0}));
  CHECK(derive_seed(42, {}) == splitmix64(42));
  CHECK(splitmix64(0) != 0);

  Rng a = make_rng(7), b = make_rng(7);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = uniform01(a);
    CHECK(u == uniform01(b));
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo >= 0.0);
  CHECK(hi < 1.0);
}
