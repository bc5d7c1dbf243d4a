#include "doctest.h"

#include <cmath>

#include "treecode/error.hpp"
#include "treecode/numerics.hpp"

using namespace treecode;

namespace {

Mat random_mat(Rng& rng, std::size_t r, std::size_t c) {
  Mat m(r, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

Mat random_symmetric(Rng& rng, std::size_t n) {
  Mat m = random_mat(rng, n, n);
  return scale(add(m, transpose(m)), 0.5);
}

double max_abs_diff(const Mat& a, const Mat& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) d = std::max(d, std::abs(a(i, j) - b(i, j)));
  return d;
}

// Orthonormal basis from the eigenvectors of a random symmetric matrix.
Mat random_orthogonal(Rng& rng, std::size_t n) {
  auto eig = sym_eig_topk(random_symmetric(rng, n), n);
  return Mat::from_rows(eig.vectors);
}

}  // namespace

TEST_SUITE("numerics") {

TEST_CASE("basic algebra") {
  Rng rng(1);
  Mat a = random_mat(rng, 3, 4);
  CHECK(matmul(Mat::identity(3), a) == a);
  Mat b = random_mat(rng, 4, 2);
  CHECK(max_abs_diff(transpose(matmul(a, b)), matmul(transpose(b), transpose(a))) < 1e-12);
  CHECK(dot(Vec::basis(3, 0), Vec::basis(3, 1)) == 0.0);
  CHECK(norm(Vec{3, 4}) == doctest::Approx(5.0));
  CHECK(frobenius(Mat(2, 2, {1, 1, 1, 1})) == doctest::Approx(2.0));
  CHECK(matvec(Mat(2, 2, {1, 2, 3, 4}), Vec{1, 1}) == Vec{3, 7});
  CHECK(outer(Vec{1, 2}, Vec{3}) == Mat(2, 1, {3, 6}));
  CHECK_THROWS_AS(matmul(a, a), DataError);
  CHECK_THROWS_AS(dot(Vec{1}, Vec{1, 2}), DataError);
  CHECK_THROWS_AS(add(a, b), DataError);
}

TEST_CASE("cholesky solve") {
  Mat b(2, 1, {2, 4});
  CHECK(cholesky_solve(Mat::identity(2), b) == b);
  Mat s = cholesky_solve(Mat::diag(Vec{2, 4}), b);
  CHECK(s(0, 0) == doctest::Approx(1.0));
  CHECK(s(1, 0) == doctest::Approx(1.0));
  CHECK_THROWS_AS(cholesky_solve(Mat(2, 2, {0, 0, 0, 1}), b), NumericError);
  CHECK_THROWS_AS(cholesky_solve(Mat(2, 2, {1, 2, 2, 1}), b), NumericError);
}

TEST_CASE("cholesky residual on random SPD systems") {
  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(20);
    Mat m = random_mat(rng, n, n);
    Mat a = add(matmul(transpose(m), m), Mat::identity(n));
    Mat rhs = random_mat(rng, n, 3);
    Mat s = cholesky_solve(a, rhs);
    REQUIRE(frobenius(sub(matmul(a, s), rhs)) <= 1e-8 * frobenius(rhs));
  }
}

TEST_CASE("top eigenpairs") {
  auto e = sym_eig_topk(Mat::diag(Vec{3, 1, 2}), 1);
  REQUIRE(e.values.size() == 1);
  CHECK(e.values[0] == doctest::Approx(3.0));
  CHECK(std::abs(e.vectors[0][0]) == doctest::Approx(1.0));
  CHECK(sym_eig_topk(Mat::diag(Vec{3, 1, 2}), 0).values.empty());

  Vec v{1, 2, 2};
  auto r1 = sym_eig_topk(outer(v, v), 3);
  CHECK(r1.values[0] == doctest::Approx(9.0));
  CHECK(std::abs(r1.values[1]) < 1e-10);
  CHECK(std::abs(r1.values[2]) < 1e-10);
  CHECK(std::abs(dot(r1.vectors[0], v)) == doctest::Approx(3.0));
}

TEST_CASE("eigenpair residual and orthonormality on random symmetric matrices") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.uniform_index(64);
    Mat c = random_symmetric(rng, n);
    const std::size_t k = 1 + rng.uniform_index(n);
    auto e = sym_eig_topk(c, k);
    REQUIRE(e.values.size() == k);
    const double fro = frobenius(c);
    for (std::size_t j = 0; j < k; ++j) {
      REQUIRE(norm(matvec(c, e.vectors[j]) - e.values[j] * e.vectors[j]) <= 1e-8 * fro);
      REQUIRE(std::abs(norm(e.vectors[j]) - 1.0) < 1e-10);
      if (j > 0) REQUIRE(e.values[j] <= e.values[j - 1]);
      for (std::size_t i = 0; i < j; ++i) REQUIRE(std::abs(dot(e.vectors[i], e.vectors[j])) < 1e-10);
    }
  }
}

TEST_CASE("operator norm") {
  CHECK(op_norm(Mat::identity(4)) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(op_norm(Mat::diag(Vec{0.5, 2})) == doctest::Approx(2.0).epsilon(1e-6));
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    Mat q = random_orthogonal(rng, 6);
    REQUIRE(max_abs_diff(matmul(q, transpose(q)), Mat::identity(6)) < 1e-9);
    CHECK(op_norm(scale(q, 0.3)) == doctest::Approx(0.3).epsilon(1e-6));
  }
  CHECK(op_norm(Mat(2, 2)) == 0.0);
}

TEST_CASE("rng reproducibility") {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    CHECK(x == b.next_u64());
    CHECK(x != c.next_u64());
  }
  Rng u(5);
  for (int i = 0; i < 10000; ++i) {
    const double x = u.uniform();
    REQUIRE(x > 0.0);
    REQUIRE(x < 1.0);
    REQUIRE(u.uniform_index(7) < 7);
  }
  Rng g1(9), g2(9);
  CHECK(gauss(g1, 16) == gauss(g2, 16));
}

TEST_CASE("gaussian moments") {
  Rng rng(11);
  const std::size_t n = 100000;
  const std::size_t dim = 3;
  Vec sum(dim), sq(dim);
  for (std::size_t i = 0; i < n; ++i) {
    Vec x = gauss(rng, dim);
    for (std::size_t j = 0; j < dim; ++j) {
      sum[j] += x[j];
      sq[j] += x[j] * x[j];
    }
  }
  for (std::size_t j = 0; j < dim; ++j) {
    const double mean = sum[j] / n;
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(sq[j] / n - mean * mean - 1.0) < 0.05);
  }
}

TEST_CASE("adam") {
  AdamState zero(3, AdamConfig{});
  std::vector<double> p{1, -2, 3};
  const auto before = p;
  zero.step(p, std::vector<double>{0, 0, 0});
  CHECK(p == before);
  CHECK(zero.steps() == 1);

  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  AdamState st(3, cfg);
  std::vector<double> q{1, 1, 1};
  st.step(q, std::vector<double>{2.0, -0.5, 1e-3});
  CHECK(q[0] == doctest::Approx(1 - 0.01).epsilon(1e-6));
  CHECK(q[1] == doctest::Approx(1 + 0.01).epsilon(1e-6));
  CHECK(q[2] == doctest::Approx(1 - 0.01).epsilon(1e-4));
  CHECK(st.steps() == 1);
  CHECK_THROWS_AS(st.step(q, std::vector<double>{1, 2}), DataError);

  AdamState s1(2, cfg), s2(2, cfg);
  std::vector<double> a{0.3, 0.7}, b{0.3, 0.7};
  for (int i = 0; i < 50; ++i) {
    std::vector<double> ga{2 * a[0], a[1] - 1}, gb{2 * b[0], b[1] - 1};
    s1.step(a, ga);
    s2.step(b, gb);
  }
  CHECK(a == b);
  CHECK(std::abs(a[0]) < 0.3);
}

}
