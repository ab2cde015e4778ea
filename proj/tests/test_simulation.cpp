#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>

#include "tenma/simulation.hpp"

using namespace tenma;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

ExperimentPlan small_plan(FamilyKind family) {
  ExperimentPlan p;
  p.signal = "signal1";
  p.family = family;
  p.n_train = 60;
  p.n_test = 40;
  p.replications = 2;
  p.base_seed = 77;
  p.ranks = {1, 2};
  p.candidates.fit.max_cycles = 30;
  return p;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST_CASE("relative noise is calibrated to the spread of the training predictor") {
  ExperimentPlan p = small_plan(FamilyKind::gaussian);
  p.noise.level = 0.25;
  const GeneratedData g = generate_dataset(p, 0);
  CHECK_THAT(g.truth.sigma, WithinRel(0.25 * sample_sd(g.truth.theta_train), 1e-12));
  CHECK_THAT(g.train.family.dispersion, WithinRel(g.truth.sigma * g.truth.sigma, 1e-12));
  CHECK(g.train.size() == 60);
  CHECK(g.test.size() == 40);
  CHECK(g.truth.coefficient.vec() == g.truth.signal.vec());

  p.noise = {2.0, true};
  CHECK(generate_dataset(p, 0).truth.sigma == 2.0);
}

TEST_CASE("datasets are reproducible per replication") {
  const ExperimentPlan p = small_plan(FamilyKind::poisson);
  const GeneratedData a = generate_dataset(p, 1);
  const GeneratedData b = generate_dataset(p, 1);
  const GeneratedData c = generate_dataset(p, 2);
  CHECK(a.train.responses == b.train.responses);
  CHECK(a.train.covariates.values().size() == b.train.covariates.values().size());
  CHECK(std::equal(a.train.covariates.values().begin(), a.train.covariates.values().end(),
                   b.train.covariates.values().begin()));
  CHECK(a.train.responses != c.train.responses);
}

TEST_CASE("non-Gaussian truth lives on the scaled natural parameter") {
  const GeneratedData g = generate_dataset(small_plan(FamilyKind::bernoulli), 0);
  CHECK(g.truth.sigma == 0.0);
  CHECK_THAT((g.truth.coefficient.vec() - 0.1 * g.truth.signal.vec()).norm(), WithinAbs(0.0, 1e-15));
  for (double y : g.train.responses) CHECK((y == 0.0 || y == 1.0));
  for (Eigen::Index i = 0; i < g.truth.mu_train.size(); ++i)
    CHECK_THAT(g.truth.mu_train[i], WithinRel(1.0 / (1.0 + std::exp(-g.truth.theta_train[i])), 1e-12));
  REQUIRE(g.truth.mu_test.size() == 40);
  CHECK_THAT(g.truth.mu_test[3], WithinRel(1.0 / (1.0 + std::exp(-g.truth.theta_test[3])), 1e-12));
}

TEST_CASE("zero noise level is rejected") {
  ExperimentPlan p = small_plan(FamilyKind::gaussian);
  p.noise.level = 0.0;
  CHECK_THROWS_AS(generate_dataset(p, 0), InputError);
  p.noise.level = 0.1;
  p.n_train = 3;
  CHECK_THROWS_AS(p.validate(), InputError);
}

TEST_CASE("rmse_B on small tensors") {
  const DenseTensor ones(Shape{2, 2}, std::vector<double>(4, 1.0));
  const DenseTensor zeros(Shape{2, 2}, std::vector<double>(4, 0.0));
  CHECK(rmse_B(zeros, ones) == 1.0);
  CHECK(rmse_B(ones, ones) == 0.0);
  const DenseTensor partial(Shape{2, 2}, {1.0, 1.0, 1.0, 3.0});
  CHECK_THAT(rmse_B(partial, ones), WithinRel(1.0, 1e-15));
  CHECK_THAT(frobenius_error(partial, ones), WithinRel(2.0, 1e-15));
  CHECK_THROWS_AS(rmse_B(DenseTensor(Shape{4}, std::vector<double>(4, 0.0)), ones), InputError);
}

TEST_CASE("Gaussian KL loss is the scaled squared predictor error") {
  const Family f = Family::gaussian(2.0);
  Vector t0(4), th(4);
  t0 << 0.5, -1.0, 2.0, 0.0;
  th << 0.0, -1.5, 2.5, 1.0;
  CHECK_THAT(kl_loss(f, t0, t0, th), WithinRel((th - t0).squaredNorm() / 2.0, 1e-14));
  CHECK(kl_loss(f, t0, t0, t0) == 0.0);
}

TEST_CASE("Poisson and Bernoulli KL loss match the direct formula") {
  Vector t0(3), th(3);
  t0 << 0.2, -0.4, 1.1;
  th << 0.3, -0.1, 0.9;
  {
    const Vector mu = t0.array().exp();
    double direct = 0.0;
    for (int i = 0; i < 3; ++i) direct += std::exp(th[i]) - mu[i] * th[i] - std::exp(t0[i]) + mu[i] * t0[i];
    CHECK_THAT(kl_loss(Family::poisson(), t0, mu, th), WithinRel(2.0 * direct, 1e-13));
  }
  {
    const Vector mu = (1.0 + (-t0.array()).exp()).inverse();
    double direct = 0.0;
    for (int i = 0; i < 3; ++i)
      direct += mu[i] * std::log(mu[i] / (1.0 / (1.0 + std::exp(-th[i])))) +
                (1 - mu[i]) * std::log((1 - mu[i]) / (1.0 - 1.0 / (1.0 + std::exp(-th[i]))));
    CHECK_THAT(kl_loss(Family::bernoulli(), t0, mu, th), WithinRel(2.0 * direct, 1e-12));
    CHECK(kl_loss(Family::bernoulli(), t0, mu, th) > 0.0);
  }
  CHECK_THROWS_AS(kl_loss(Family::poisson(), t0, t0, Vector::Zero(2)), InputError);
}

TEST_CASE("KL ratio is at least one and equals one at the optimum") {
  const Family f = Family::gaussian(1.0);
  const Vector t0 = Vector::LinSpaced(30, -1.0, 1.0);
  Matrix cols(30, 3);
  cols.col(0) = 0.5 * t0;
  cols.col(1) = t0.array().square();
  cols.col(2) = 1.2 * t0 + Vector::Constant(30, 0.1);
  const SimplexObjective kl = kl_objective(cols, f, t0, t0);

  Vector w(3);
  w << 1.0 / 3, 1.0 / 3, 1.0 / 3;
  const KlRatio r = kl_ratio(kl, WeightVector(w));
  CHECK(r.ratio >= 1.0);
  CHECK(r.denominator <= r.numerator);
  CHECK_THAT(r.numerator, WithinRel(kl_loss(f, t0, t0, cols * w), 1e-12));

  const WeightVector best = minimize_on_simplex(kl).weights;
  CHECK_THAT(kl_ratio(kl, best).ratio, WithinAbs(1.0, 1e-9));
}

TEST_CASE("grid minimum on the 2-simplex") {
  const Vector t0 = Vector::Ones(5);
  Matrix cols(5, 2);
  cols.col(0) = Vector::Zero(5);
  cols.col(1) = Vector::Constant(5, 4.0);
  // KL(w) = 5 (4 w_2 - 1)^2, minimized at w_2 = 1/4
  const SimplexObjective kl = kl_objective(cols, Family::gaussian(1.0), t0, t0);
  CHECK_THAT(simplex_grid_min(kl, 200), WithinAbs(0.0, 1e-12));
  CHECK_THAT(simplex_grid_min(kl, 3), WithinRel(5.0 / 9.0, 1e-12));
}

TEST_CASE("prediction error per family") {
  const std::vector<double> y{1.0, 0.0, 1.0, 1.0};
  Vector th(4);
  th << 2.0, 0.5, -1.0, 0.1;
  CHECK(prediction_error(Family::bernoulli(), th, y) == 0.5);
  CHECK_THAT(prediction_error(Family::gaussian(1.0), th, y), WithinRel(std::sqrt((1 + 0.25 + 4 + 0.81) / 4.0), 1e-14));
  const std::vector<double> counts{1.0, 2.0};
  Vector z = Vector::Zero(2);
  CHECK_THAT(prediction_error(Family::poisson(), z, counts), WithinRel(std::sqrt(0.5), 1e-14));
  CHECK_THROWS_AS(prediction_error(Family::poisson(), z, y), InputError);
}

TEST_CASE("summaries drop missing values") {
  const Summary s = summarize({3.0, 1.0, std::nan(""), 2.0, 10.0});
  CHECK(s.mean == 4.0);
  CHECK(s.median == 2.5);
  CHECK_THAT(s.sd, WithinRel(std::sqrt(50.0 / 3.0), 1e-14));
  CHECK(std::isnan(summarize({}).mean));
}

TEST_CASE("experiment writers") {
  const ExperimentPlan p = small_plan(FamilyKind::gaussian);
  const ExperimentResult r = run_experiment(p, 1);
  CHECK(r.failures == 0);
  REQUIRE(r.replications.size() == 2);
  for (const ReplicationRecord& rec : r.replications) {
    REQUIRE(rec.methods.size() == kAllMethods.size());
    CHECK(rec.trma_kl_ratio.ratio >= 1.0);
    for (const MethodRecord& m : rec.methods) CHECK_THAT(m.weights.sum(), WithinAbs(1.0, 1e-12));
  }

  std::ostringstream reps, agg;
  write_replications_csv(reps, r);
  write_aggregate_csv(agg, r);
  CHECK(count_lines(reps.str()) == 1 + 2 * kAllMethods.size());
  CHECK(count_lines(agg.str()) == 1 + kAllMethods.size());
  CHECK_THAT(reps.str(), ContainsSubstring(",kl,kl_in_sample,"));
  CHECK_THAT(reps.str(), ContainsSubstring("w_rank1,w_rank2\n"));
  CHECK_THAT(agg.str(), ContainsSubstring("\n60,TRMA,2,0,"));

  std::ostringstream again;
  write_replications_csv(again, run_experiment(p, 2));
  CHECK(again.str() == reps.str());

  const ExperimentResult both[] = {r, r};
  std::ostringstream sweep;
  write_sweep_csv(sweep, both, SweepSeries::underfit_weight);
  CHECK(count_lines(sweep.str()) == 3);
  CHECK_THAT(sweep.str(), ContainsSubstring("n_train,mean_underfit_mass\n60,0\n"));
}
