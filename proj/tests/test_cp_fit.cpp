#include <catch_amalgamated.hpp>

#include <random>

#include "tenma/cp_fit.hpp"

using namespace tenma;

namespace {

TensorStack gaussian_stack(const Shape& s, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(s.total_size() * n);
  for (double& x : v) x = g(rng);
  return TensorStack(s, n, std::move(v));
}

CpTensor random_cp(const Shape& s, std::size_t rank, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  std::vector<Matrix> f;
  for (std::size_t p : s.dims()) {
    Matrix m(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(rank));
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = g(rng);
    f.push_back(std::move(m));
  }
  return CpTensor(s, std::move(f));
}

RegressionData simulate(const Shape& s, std::size_t n, const CpTensor& truth, Family family, double theta_scale,
                        std::uint64_t seed) {
  TensorStack x = gaussian_stack(s, n, seed);
  Vector theta = theta_scale * predict_theta(truth, x);
  auto y = sample(family, std::span<const double>(theta.data(), n), seed + 1);
  return RegressionData(std::move(x), std::move(y), family);
}

}  // namespace

TEST_CASE("mode design matrix reproduces the linear predictor") {
  const Shape s{4, 3, 5};
  const CpTensor b = random_cp(s, 2, 1);
  const TensorStack x = gaussian_stack(s, 7, 2);
  const RegressionData data(x, std::vector<double>(7, 0.0), Family::gaussian());
  const Vector theta = predict_theta(b, x);
  const detail::ModeLayouts layouts(data.covariates);
  for (std::size_t m = 0; m < 3; ++m) {
    const Matrix design = mode_design_matrix(data, b, m);
    const Eigen::Map<const Vector> beta(b.factor(m).data(), b.factor(m).size());
    CHECK((design * beta - theta).cwiseAbs().maxCoeff() < 1e-10);
    const Matrix dt = layouts.design_transposed(b.factors(), m);
    CHECK((dt.transpose() * detail::factor_to_coefficients(b.factor(m)) - theta).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("coefficient and factor layouts are inverse") {
  const CpTensor b = random_cp(Shape{5, 3}, 3, 4);
  const Vector beta = detail::factor_to_coefficients(b.factor(0));
  CHECK(detail::coefficients_to_factor(beta, 5, 3) == b.factor(0));
}

TEST_CASE("line polynomial expands the predictor along a direction") {
  for (const Shape& s : {Shape{3, 4, 2}, Shape{5, 6}, Shape{7}}) {
    const CpTensor from = random_cp(s, 2, 5), delta = random_cp(s, 2, 6);
    const TensorStack x = gaussian_stack(s, 9, 7);
    const detail::ModeLayouts layouts(x);
    const std::size_t last = s.order() - 1;
    Matrix both(from.factor(last).rows(), 4);
    both << from.factor(last), delta.factor(last);
    const Matrix terms = detail::line_polynomial(layouts, layouts.contract_last(both), from.factors(), delta.factors());
    REQUIRE(terms.cols() == static_cast<Eigen::Index>(s.order() + 1));
    for (double t : {0.0, 0.4, 1.7}) {
      std::vector<Matrix> moved;
      for (std::size_t d = 0; d < s.order(); ++d) moved.push_back(from.factor(d) + t * delta.factor(d));
      const Vector direct = predict_theta(CpTensor(s, moved), x);
      Vector poly = terms.col(terms.cols() - 1);
      for (Eigen::Index k = terms.cols() - 2; k >= 0; --k) poly = poly * t + terms.col(k);
      CHECK((poly - direct).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("log-likelihood trace never decreases") {
  struct Case {
    Shape shape;
    std::size_t rank;
    Family family;
    double scale;
  };
  const Case cases[] = {
      {Shape{6, 5}, 1, Family::gaussian(0.5), 1.0},     {Shape{6, 5}, 2, Family::bernoulli(), 0.5},
      {Shape{4, 3, 5}, 2, Family::poisson(), 0.15},     {Shape{4, 3, 5}, 3, Family::gaussian(1.0), 1.0},
      {Shape{5, 4, 3}, 1, Family::bernoulli(), 0.6},
  };
  std::uint64_t seed = 100;
  for (const Case& c : cases) {
    const CpTensor truth = random_cp(c.shape, c.rank, seed++);
    const RegressionData data = simulate(c.shape, 150, truth, c.family, c.scale, seed++);
    FitConfig cfg;
    cfg.rank = c.rank;
    cfg.init_seed = seed;
    const FitResult fit = fit_cp_glm(data, cfg);
    REQUIRE(fit.loglik_trace.size() == static_cast<std::size_t>(fit.cycles_used) + 1);
    for (std::size_t k = 1; k < fit.loglik_trace.size(); ++k)
      CHECK(fit.loglik_trace[k] >= fit.loglik_trace[k - 1] - 1e-8 * (1.0 + std::abs(fit.loglik_trace[k - 1])));
    const Vector theta = predict_theta(fit.estimate, data.covariates);
    CHECK(std::abs(log_likelihood(data.family, data.responses, std::span<const double>(theta.data(), data.size())) -
                   fit.log_likelihood) < 1e-6 * (1.0 + std::abs(fit.log_likelihood)));
  }
}

TEST_CASE("noiseless rank-1 Gaussian problem is recovered") {
  const Shape s{8, 6};
  const CpTensor truth = random_cp(s, 1, 31);
  TensorStack x = gaussian_stack(s, 120, 32);
  const Vector theta = predict_theta(truth, x);
  RegressionData data(std::move(x), std::vector<double>(theta.data(), theta.data() + theta.size()),
                      Family::gaussian());
  FitConfig cfg;
  cfg.rank = 1;
  cfg.rel_tol = 1e-15;
  cfg.max_cycles = 500;
  const FitResult fit = fit_cp_glm(data, cfg);
  const Vector err = cp_to_dense(fit.estimate).vec() - cp_to_dense(truth).vec();
  CHECK(err.norm() < 1e-6);
}

TEST_CASE("fits are deterministic in the seed and restarts keep the best") {
  const Shape s{5, 5};
  const CpTensor truth = random_cp(s, 2, 41);
  const RegressionData data = simulate(s, 100, truth, Family::gaussian(0.25), 1.0, 42);
  FitConfig cfg;
  cfg.rank = 2;
  cfg.init_seed = 9;
  const FitResult a = fit_cp_glm(data, cfg);
  const FitResult b = fit_cp_glm(data, cfg);
  CHECK(a.loglik_trace == b.loglik_trace);
  CHECK(cp_to_dense(a.estimate) == cp_to_dense(b.estimate));
  cfg.n_restarts = 4;
  const FitResult c = fit_cp_glm(data, cfg);
  CHECK(c.diagnostics.restarts_used == 4);
  CHECK(c.log_likelihood >= a.log_likelihood - 1e-9);
}

TEST_CASE("fit input validation") {
  const Shape s{3, 3};
  const TensorStack x = gaussian_stack(s, 4, 1);
  CHECK_THROWS_AS(RegressionData(x, std::vector<double>{1, 2, 3}, Family::gaussian()), InputError);
  CHECK_THROWS_AS(RegressionData(x, std::vector<double>{0, 1, 2, 1}, Family::bernoulli()), InputError);
  const RegressionData ok(x, std::vector<double>{0, 1, 0, 1}, Family::bernoulli());
  FitConfig cfg;
  cfg.rank = 0;
  CHECK_THROWS_AS(fit_cp_glm(ok, cfg), InputError);
  CHECK_THROWS_AS(predict_theta(DenseTensor(Shape{3, 4}), x), InputError);
}

TEST_CASE("subset keeps the selected observations in order") {
  const Shape s{2, 2};
  const TensorStack x = gaussian_stack(s, 5, 3);
  const RegressionData data(x, std::vector<double>{1, 2, 3, 4, 5}, Family::gaussian());
  const std::vector<std::size_t> rows{4, 1};
  const RegressionData sub = data.subset(rows);
  CHECK(sub.responses == std::vector<double>{5, 2});
  CHECK(sub.covariates.observation(0) == x.observation(4));
  CHECK(sub.covariates.observation(1) == x.observation(1));
}
