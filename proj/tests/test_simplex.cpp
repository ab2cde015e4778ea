#include <catch_amalgamated.hpp>

#include <random>

#include "tenma/simplex.hpp"

using namespace tenma;

namespace {

struct Problem {
  Matrix theta;
  Vector target;
  Family family;
};

// Candidate predictors = truth + candidate-specific distortion, so the
// optimum is typically interior.
Problem make_problem(std::size_t seed, Eigen::Index n, Eigen::Index s, Family family) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  Vector truth(n);
  for (Eigen::Index i = 0; i < n; ++i) truth[i] = 0.8 * g(rng);
  Matrix theta(n, s);
  for (Eigen::Index k = 0; k < s; ++k) {
    const double bias = 0.3 * g(rng);
    for (Eigen::Index i = 0; i < n; ++i) theta(i, k) = truth[i] * (1.0 + 0.3 * g(rng)) + bias + 0.2 * g(rng);
  }
  const auto y = sample(family, std::span<const double>(truth.data(), n), seed + 7);
  return {theta, Eigen::Map<const Vector>(y.data(), n), family};
}

Vector random_simplex_point(Rng& rng, Eigen::Index s) {
  std::exponential_distribution<double> e(1.0);
  Vector w(s);
  for (Eigen::Index k = 0; k < s; ++k) w[k] = e(rng);
  return w / w.sum();
}

const Family kFamilies[] = {Family::gaussian(0.7), Family::bernoulli(), Family::poisson()};

}  // namespace

TEST_CASE("projection onto the simplex") {
  Vector v(3);
  v << 0.2, 0.3, 0.5;
  CHECK((project_to_simplex(v) - v).norm() < 1e-15);
  v << 2.0, 0.0, 0.0;
  CHECK(project_to_simplex(v).isApprox(Vector::Unit(3, 0)));
  v << 1.0, 1.0, -5.0;
  Vector expect(3);
  expect << 0.5, 0.5, 0.0;
  CHECK((project_to_simplex(v) - expect).norm() < 1e-15);

  // KKT: the projection p of v satisfies (v - p) . (q - p) <= 0 for all simplex q.
  Rng rng(3);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 100; ++trial) {
    Vector u(5);
    for (Eigen::Index k = 0; k < 5; ++k) u[k] = 2 * g(rng);
    const Vector p = project_to_simplex(u);
    REQUIRE(p.minCoeff() >= 0.0);
    REQUIRE(std::abs(p.sum() - 1.0) < 1e-14);
    for (Eigen::Index k = 0; k < 5; ++k) REQUIRE((u - p).dot(Vector::Unit(5, k) - p) <= 1e-12);
  }
}

TEST_CASE("weight vector invariants") {
  CHECK_THROWS_AS(WeightVector(Vector::Constant(2, 0.6)), InputError);
  Vector neg(2);
  neg << 1.5, -0.5;
  CHECK_THROWS_AS(WeightVector(neg), InputError);
  CHECK(WeightVector::uniform(4)[2] == 0.25);
  CHECK(WeightVector::vertex(3, 1)[1] == 1.0);
}

TEST_CASE("objective gradient matches finite differences") {
  std::size_t seed = 10;
  for (const Family& f : kFamilies) {
    const Problem p = make_problem(seed++, 200, 4, f);
    const SimplexObjective obj(p.theta, p.target, f);
    Rng rng(seed);
    for (int trial = 0; trial < 10; ++trial) {
      const Vector w = random_simplex_point(rng, 4);
      const Vector grad = obj.gradient(w);
      for (Eigen::Index k = 0; k < 4; ++k) {
        const double h = 1e-6;
        Vector up = w, dn = w;
        up[k] += h;
        dn[k] -= h;
        const double fd = (obj.value(up) - obj.value(dn)) / (2 * h);
        CHECK(std::abs(fd - grad[k]) <= 1e-5 * std::max(1.0, std::abs(grad[k])));
      }
    }
  }
}

TEST_CASE("objective is convex along random segments") {
  std::size_t seed = 50;
  int passed = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const Family& f = kFamilies[trial % 3];
    const Problem p = make_problem(seed++, 80, 3, f);
    const SimplexObjective obj(p.theta, p.target, f);
    Rng rng(seed);
    const Vector a = random_simplex_point(rng, 3), b = random_simplex_point(rng, 3);
    std::uniform_real_distribution<double> u(0, 1);
    const double t = u(rng);
    const double lhs = obj.value(t * a + (1 - t) * b);
    const double rhs = t * obj.value(a) + (1 - t) * obj.value(b);
    if (lhs <= rhs + 1e-10 * (1 + std::abs(rhs))) ++passed;
  }
  CHECK(passed == 100);
}

TEST_CASE("S=2 Gaussian weight has a closed form") {
  for (std::size_t seed = 70; seed < 80; ++seed) {
    const Problem p = make_problem(seed, 150, 2, Family::gaussian(1.3));
    const SimplexObjective obj(p.theta, p.target, p.family);
    // minimize ||y - theta_2 - w (theta_1 - theta_2)||^2 over w in [0,1]
    const Vector d = p.theta.col(0) - p.theta.col(1);
    const Vector r = p.target - p.theta.col(1);
    const double w1 = std::clamp(d.dot(r) / d.squaredNorm(), 0.0, 1.0);
    const OptimizerResult res = minimize_on_simplex(obj);
    CHECK(std::abs(res.weights[0] - w1) <= 1e-6);
  }
}

TEST_CASE("S=3 optimum dominates a dense grid") {
  std::size_t seed = 90;
  for (const Family& f : kFamilies) {
    for (int rep = 0; rep < 3; ++rep) {
      const Problem p = make_problem(seed++, 120, 3, f);
      const SimplexObjective obj(p.theta, p.target, f);
      const OptimizerResult res = minimize_on_simplex(obj);
      const int grid = 200;
      double best = std::numeric_limits<double>::infinity();
      Vector w(3);
      for (int a = 0; a <= grid; ++a)
        for (int b = 0; a + b <= grid; ++b) {
          w << a / double(grid), b / double(grid), (grid - a - b) / double(grid);
          best = std::min(best, obj.value(w));
        }
      CHECK(res.value <= best + 1e-8);
      CHECK(res.value <= res.diagnostics.best_vertex_value + 1e-12 * (1 + std::abs(res.value)));
      CHECK(res.value <= res.diagnostics.eqma_value + 1e-12 * (1 + std::abs(res.value)));
    }
  }
}

TEST_CASE("optimizer result is never worse than vertices or the uniform point") {
  std::size_t seed = 200;
  for (int trial = 0; trial < 30; ++trial) {
    const Family& f = kFamilies[trial % 3];
    const Eigen::Index s = 2 + trial % 5;
    const Problem p = make_problem(seed++, 100, s, f);
    const SimplexObjective obj(p.theta, p.target, f);
    const OptimizerResult res = minimize_on_simplex(obj);
    for (Eigen::Index k = 0; k < s; ++k) CHECK(res.value <= obj.value(WeightVector::vertex(s, k).values()) + 1e-9);
    CHECK(res.value <= obj.value(WeightVector::uniform(s).values()) + 1e-9);
  }
}

TEST_CASE("identical candidates give a valid weight vector") {
  const Problem p = make_problem(300, 50, 1, Family::gaussian());
  Matrix dup(50, 3);
  dup << p.theta, p.theta, p.theta;
  const SimplexObjective obj(dup, p.target, p.family);
  const OptimizerResult res = minimize_on_simplex(obj);
  CHECK(std::abs(res.weights.values().sum() - 1.0) < 1e-12);
}
