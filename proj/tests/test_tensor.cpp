#include <catch_amalgamated.hpp>

#include <random>

#include "tenma/tensor.hpp"

using namespace tenma;
using Catch::Matchers::WithinAbs;

namespace {

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> g;
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = g(rng);
  return m;
}

DenseTensor random_tensor(std::mt19937_64& rng, const Shape& s) {
  std::normal_distribution<double> g;
  DenseTensor t(s);
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = g(rng);
  return t;
}

// Element (i_1..i_D) of [[B_1..B_D]] by the definition sum_r prod_d B_d(i_d, r).
double cp_entry(const CpTensor& t, const std::vector<std::size_t>& idx1) {
  double total = 0.0;
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(t.rank()); ++r) {
    double prod = 1.0;
    for (std::size_t d = 0; d < idx1.size(); ++d)
      prod *= t.factor(d)(static_cast<Eigen::Index>(idx1[d] - 1), r);
    total += prod;
  }
  return total;
}

}  // namespace

TEST_CASE("vec_index on a 2x3 shape") {
  const Shape s{2, 3};
  CHECK(vec_index({1, 1}, s) == 1);
  CHECK(vec_index({2, 1}, s) == 2);
  CHECK(vec_index({1, 2}, s) == 3);
  CHECK(vec_index({2, 3}, s) == 6);
  CHECK_THROWS_AS(vec_index({3, 1}, s), InputError);
  CHECK_THROWS_AS(vec_index({1, 1, 1}, s), InputError);
}

TEST_CASE("vec_index and multi_index are inverse") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<std::size_t> order(1, 4), dim(1, 5);
    std::vector<std::size_t> dims(order(rng));
    for (auto& p : dims) p = dim(rng);
    const Shape s(dims);
    for (std::size_t j = 1; j <= s.total_size(); ++j) {
      const auto idx = multi_index(j, s);
      REQUIRE(vec_index(idx, s) == j);
    }
  }
}

TEST_CASE("shape validation") {
  CHECK_THROWS_AS(Shape(std::vector<std::size_t>{}), InputError);
  CHECK_THROWS_AS(Shape({3, 0}), InputError);
  CHECK(Shape({4, 5, 6}).size_except(1) == 24);
  CHECK(Shape({4, 5, 6}).dim_sum() == 15);
}

TEST_CASE("khatri_rao matches the column-wise Kronecker definition") {
  Matrix a(2, 2), b(3, 2);
  a << 1, 2, 3, 4;
  b << 5, 6, 7, 8, 9, 10;
  const Matrix k = khatri_rao({a, b});
  REQUIRE(k.rows() == 6);
  for (Eigen::Index r = 0; r < 2; ++r)
    for (Eigen::Index j = 0; j < 3; ++j)
      for (Eigen::Index i = 0; i < 2; ++i) CHECK(k(i + 2 * j, r) == a(i, r) * b(j, r));
}

TEST_CASE("khatri_rao of two row vectors, first input fastest") {
  Matrix a(1, 2), b(1, 2);
  a << 1, 2;
  b << 3, 4;
  // each input is 1 x 2 so the result is 1 x 2
  const Matrix k = khatri_rao({a, b});
  CHECK(k(0, 0) == 3);
  CHECK(k(0, 1) == 8);
  Matrix c(2, 1), d(2, 1);
  c << 1, 2;
  d << 3, 4;
  const Matrix kc = khatri_rao({c, d});
  CHECK(kc(0, 0) == 3);
  CHECK(kc(1, 0) == 6);
  CHECK(kc(2, 0) == 4);
  CHECK(kc(3, 0) == 8);
}

TEST_CASE("khatri_rao rejects mismatched column counts") {
  CHECK_THROWS_AS(khatri_rao({Matrix::Ones(2, 2), Matrix::Ones(2, 3)}), InputError);
}

TEST_CASE("cp_to_dense agrees with elementwise definition") {
  std::mt19937_64 rng(11);
  for (const Shape& s : {Shape{3, 4}, Shape{2, 3, 4}, Shape{2, 2, 3, 2}}) {
    for (std::size_t rank : {1, 2, 3}) {
      std::vector<Matrix> f;
      for (std::size_t p : s.dims()) f.push_back(random_matrix(rng, static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(rank)));
      const CpTensor cp(s, f);
      const DenseTensor dense = cp_to_dense(cp);
      for (std::size_t j = 1; j <= s.total_size(); ++j)
        REQUIRE_THAT(dense[j - 1], WithinAbs(cp_entry(cp, multi_index(j, s)), 1e-12));
    }
  }
}

TEST_CASE("mode unfolding identity B(d) = B_d (KR of the rest)^T") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    std::uniform_int_distribution<std::size_t> order(2, 4), dim(1, 4), rk(1, 3);
    std::vector<std::size_t> dims(order(rng));
    for (auto& p : dims) p = dim(rng);
    const Shape s(dims);
    const auto rank = static_cast<Eigen::Index>(rk(rng));
    std::vector<Matrix> f;
    for (std::size_t p : dims) f.push_back(random_matrix(rng, static_cast<Eigen::Index>(p), rank));
    const DenseTensor dense = cp_to_dense(CpTensor(s, f));
    for (std::size_t d = 0; d < dims.size(); ++d) {
      const Matrix lhs = mode_matricize(dense, d);
      const Matrix rhs = f[d] * khatri_rao_except(f, d).transpose();
      REQUIRE((lhs - rhs).cwiseAbs().maxCoeff() <= 1e-10);
    }
  }
}

TEST_CASE("mode_matricize places entries by definition") {
  const Shape s{2, 3, 2};
  DenseTensor t(s);
  for (std::size_t k = 0; k < t.size(); ++k) t[k] = static_cast<double>(k + 1);
  const Matrix m1 = mode_matricize(t, 1);
  REQUIRE(m1.rows() == 3);
  REQUIRE(m1.cols() == 4);
  // column (i1, i3) with i1 fastest
  for (std::size_t i1 = 1; i1 <= 2; ++i1)
    for (std::size_t i2 = 1; i2 <= 3; ++i2)
      for (std::size_t i3 = 1; i3 <= 2; ++i3)
        CHECK(m1(static_cast<Eigen::Index>(i2 - 1), static_cast<Eigen::Index>((i1 - 1) + 2 * (i3 - 1))) ==
              t.at({i1, i2, i3}));
  CHECK_THROWS_AS(mode_matricize(t, 3), InputError);
}

TEST_CASE("inner product is linear and symmetric") {
  std::mt19937_64 rng(5);
  const Shape s{3, 4, 2};
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    const DenseTensor a = random_tensor(rng, s), b = random_tensor(rng, s), c = random_tensor(rng, s);
    const double alpha = g(rng), beta = g(rng);
    DenseTensor mix(s);
    mix.vec() = alpha * a.vec() + beta * b.vec();
    CHECK_THAT(inner_product(mix, c), WithinAbs(alpha * inner_product(a, c) + beta * inner_product(b, c), 1e-10));
    CHECK(inner_product(a, b) == Catch::Approx(inner_product(b, a)));
  }
  CHECK_THROWS_AS(inner_product(DenseTensor(Shape{2, 2}), DenseTensor(Shape{4})), InputError);
}

TEST_CASE("axpy_cp and balance_columns preserve the represented tensor") {
  std::mt19937_64 rng(9);
  const Shape s{4, 3, 5};
  std::vector<CpTensor> cps;
  for (std::size_t r : {1, 2}) {
    std::vector<Matrix> f;
    for (std::size_t p : s.dims()) f.push_back(random_matrix(rng, static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(r)));
    cps.emplace_back(s, f);
  }
  const std::vector<double> w{0.25, 0.75};
  const DenseTensor mix = axpy_cp(w, cps);
  const Vector expect = 0.25 * cp_to_dense(cps[0]).vec() + 0.75 * cp_to_dense(cps[1]).vec();
  CHECK((mix.vec() - expect).cwiseAbs().maxCoeff() < 1e-12);

  CpTensor scaled = cps[1];
  scaled.factor(0) *= 1000.0;
  scaled.factor(2) /= 1000.0;
  const DenseTensor before = cp_to_dense(scaled);
  balance_columns(scaled);
  CHECK((cp_to_dense(scaled).vec() - before.vec()).cwiseAbs().maxCoeff() < 1e-10);
  for (Eigen::Index r = 0; r < 2; ++r)
    CHECK_THAT(scaled.factor(0).col(r).norm(), WithinAbs(scaled.factor(2).col(r).norm(), 1e-9));
}

TEST_CASE("rank-0 CP tensor is zero") {
  const CpTensor zero(Shape{3, 3}, 0);
  CHECK(cp_to_dense(zero).vec().squaredNorm() == 0.0);
}
