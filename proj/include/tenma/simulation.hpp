#pragma once

// Synthetic experiments: data generation from catalog signals, the
// evaluation metrics, and replicated runs of all seven methods.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tenma/averaging.hpp"
#include "tenma/cp_fit.hpp"
#include "tenma/errors.hpp"
#include "tenma/family.hpp"
#include "tenma/parallel.hpp"
#include "tenma/rng.hpp"
#include "tenma/signals.hpp"
#include "tenma/simplex.hpp"

namespace tenma {

struct NoiseSpec {
  /// Relative: sigma = level * sd(eta_train). Absolute: sigma = level.
  double level = 0.05;
  bool absolute = false;

  void validate() const {
    if (!(level > 0.0) || !std::isfinite(level))
      throw InputError("noise level must be positive (zero-signal/zero-noise degenerate)");
  }
};

/// theta = scale * eta under the canonical link.
inline double default_link_scale(FamilyKind kind) {
  switch (kind) {
    case FamilyKind::gaussian: return 1.0;
    case FamilyKind::bernoulli: return 0.1;
    case FamilyKind::poisson: return 0.01;
  }
  return 1.0;
}

struct ExperimentPlan {
  std::string signal = "signal1";
  FamilyKind family = FamilyKind::gaussian;
  std::size_t n_train = 500;
  std::size_t n_test = 500;
  NoiseSpec noise;
  std::optional<double> link_scale;  // default_link_scale(family) when unset
  std::size_t replications = 20;
  std::uint64_t base_seed = 1;
  std::vector<std::size_t> ranks{1, 2, 3, 4, 5};
  std::size_t folds = 5;
  bool shuffle_folds = false;
  CandidateOptions candidates = [] {
    CandidateOptions o;
    o.high_rank_restarts = 3;
    o.high_rank_threshold = 3;
    return o;
  }();
  OptimizerConfig optimizer;
  DfFormula df_formula = DfFormula::standard;
  int kl_grid_resolution = 200;

  [[nodiscard]] double scale() const { return link_scale.value_or(default_link_scale(family)); }

  void validate() const {
    find_signal(signal);
    if (n_train < folds || n_train < 2) throw InputError("n_train must be at least the fold count");
    if (n_test < 1) throw InputError("n_test must be >= 1");
    if (replications < 1) throw InputError("replications must be >= 1");
    if (folds < 2) throw InputError("folds must be >= 2");
    validate_ranks(ranks);
    candidates.fit.validate();
    if (family == FamilyKind::gaussian) noise.validate();
    if (!(scale() > 0.0) || !std::isfinite(scale())) throw InputError("link scale must be positive");
    if (kl_grid_resolution < 1) throw InputError("KL grid resolution must be >= 1");
  }
};

struct Truth {
  DenseTensor signal;       // B_0 on the eta scale (the 0/1 mask)
  DenseTensor coefficient;  // scale * B_0, the natural-parameter coefficient
  Vector theta_train;
  Vector mu_train;
  Vector theta_test;
  Vector mu_test;
  double sigma = 0.0;  // Gaussian noise sd, 0 otherwise
  Family family;
};

struct GeneratedData {
  RegressionData train;
  RegressionData test;
  Truth truth;
};

inline std::uint64_t replication_seed(std::uint64_t base_seed, std::size_t replication) {
  return derive_seed(base_seed, {0x7265706cULL, replication});
}

inline TensorStack standard_normal_stack(const Shape& shape, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> g;
  std::vector<double> v(shape.total_size() * n);
  for (double& x : v) x = g(rng);
  return TensorStack(shape, n, std::move(v));
}

inline double sample_sd(const Vector& v) {
  if (v.size() < 2) return 0.0;
  const double m = v.mean();
  return std::sqrt((v.array() - m).square().sum() / static_cast<double>(v.size() - 1));
}

inline GeneratedData generate_dataset(const ExperimentPlan& plan, std::size_t replication) {
  plan.validate();
  const std::uint64_t seed = replication_seed(plan.base_seed, replication);
  const SignalSpec& spec = find_signal(plan.signal);
  Truth truth;
  truth.signal = make_signal(spec);
  truth.coefficient = truth.signal;
  truth.coefficient.vec() *= plan.scale();

  TensorStack x_train = standard_normal_stack(spec.shape, plan.n_train, derive_seed(seed, {1}));
  TensorStack x_test = standard_normal_stack(spec.shape, plan.n_test, derive_seed(seed, {3}));
  const Vector eta_train = predict_theta(truth.signal, x_train);
  const Vector eta_test = predict_theta(truth.signal, x_test);
  const double sd_eta = sample_sd(eta_train);
  if (!(sd_eta > 0.0)) throw InputError("zero-signal: the linear predictor has no variation");

  Family family = make_family(plan.family);
  if (plan.family == FamilyKind::gaussian) {
    truth.sigma = plan.noise.absolute ? plan.noise.level : plan.noise.level * sd_eta;
    family = Family::gaussian(truth.sigma * truth.sigma);
  }
  truth.family = family;
  truth.theta_train = plan.scale() * eta_train;
  truth.theta_test = plan.scale() * eta_test;
  truth.mu_train = truth.theta_train.unaryExpr([&](double t) { return mean(family, t); });
  truth.mu_test = truth.theta_test.unaryExpr([&](double t) { return mean(family, t); });

  const auto span_of = [](const Vector& v) { return std::span<const double>(v.data(), static_cast<std::size_t>(v.size())); };
  auto y_train = sample(family, span_of(truth.theta_train), derive_seed(seed, {2}));
  auto y_test = sample(family, span_of(truth.theta_test), derive_seed(seed, {4}));
  return {RegressionData(std::move(x_train), std::move(y_train), family),
          RegressionData(std::move(x_test), std::move(y_test), family), std::move(truth)};
}

/// ||vec(estimate) - vec(truth)|| / sqrt(number of entries)
inline double rmse_B(const DenseTensor& estimate, const DenseTensor& truth) {
  if (!(estimate.shape() == truth.shape()))
    throw InputError("rmse_B shape mismatch: " + estimate.shape().to_string() + " vs " + truth.shape().to_string());
  return (estimate.vec() - truth.vec()).norm() / std::sqrt(static_cast<double>(truth.size()));
}

/// ||vec(estimate) - vec(truth)||
inline double frobenius_error(const DenseTensor& estimate, const DenseTensor& truth) {
  if (!(estimate.shape() == truth.shape()))
    throw InputError("error shape mismatch: " + estimate.shape().to_string() + " vs " + truth.shape().to_string());
  return (estimate.vec() - truth.vec()).norm();
}

/// 2/phi * sum_i [ b(theta_hat_i) - mu_i theta_hat_i - b(theta0_i) + mu_i theta0_i ]
inline double kl_loss(const Family& family, const Vector& theta0, const Vector& mu, const Vector& theta_hat) {
  if (theta0.size() != mu.size() || theta0.size() != theta_hat.size())
    throw InputError("kl_loss: predictor lengths disagree");
  double s = 0.0;
  for (Eigen::Index i = 0; i < theta0.size(); ++i)
    s += cumulant(family, theta_hat[i]) - mu[i] * theta_hat[i] - cumulant(family, theta0[i]) + mu[i] * theta0[i];
  return 2.0 / family.dispersion * s;
}

/// KL(w) over candidate predictors theta_columns (n x S), evaluated at the
/// observations whose true natural parameters and means are theta0 and mu.
inline SimplexObjective kl_objective(const Matrix& theta_columns, const Family& family, const Vector& theta0,
                                     const Vector& mu) {
  if (theta_columns.rows() != theta0.size() || theta0.size() != mu.size())
    throw InputError("kl_objective: predictor lengths disagree");
  double offset = 0.0;
  for (Eigen::Index i = 0; i < theta0.size(); ++i) offset += mu[i] * theta0[i] - cumulant(family, theta0[i]);
  offset *= 2.0 / family.dispersion;
  return SimplexObjective(theta_columns, mu, family, offset);
}

/// min of the objective over the grid {w : w = k / resolution} (S <= 3).
inline double simplex_grid_min(const SimplexObjective& obj, int resolution) {
  const Eigen::Index s = obj.dimension();
  if (s > 3) throw InputError("grid minimization supports at most 3 candidates");
  const double h = 1.0 / resolution;
  double best = std::numeric_limits<double>::infinity();
  Vector w(s);
  if (s == 1) return obj.value(Vector::Ones(1));
  for (int a = 0; a <= resolution; ++a) {
    if (s == 2) {
      w << a * h, (resolution - a) * h;
      best = std::min(best, obj.value(w));
      continue;
    }
    for (int b = 0; a + b <= resolution; ++b) {
      w << a * h, b * h, (resolution - a - b) * h;
      best = std::min(best, obj.value(w));
    }
  }
  return best;
}

struct KlRatio {
  double ratio = 1.0;
  double numerator = 0.0;
  double denominator = 0.0;
};

/// KL(w_hat) / min_w KL(w). The denominator is the grid minimum for S <= 3
/// (never above the convex-optimizer minimum), the optimizer minimum otherwise.
inline KlRatio kl_ratio(const SimplexObjective& kl, const WeightVector& w_hat, int grid_resolution = 200) {
  KlRatio out;
  out.numerator = kl.value(w_hat.values());
  double best = out.numerator;
  if (kl.dimension() > 1) {
    best = std::min(best, minimize_on_simplex(kl).value);
    if (kl.dimension() <= 3) best = std::min(best, simplex_grid_min(kl, grid_resolution));
  }
  out.denominator = best;
  out.ratio = best > 0.0 ? out.numerator / best : 1.0;
  return out;
}

/// Gaussian: ||y_hat - y|| / sqrt(n); Bernoulli: misclassification rate at
/// 0.5; Poisson: ||b'(theta_hat) - y|| / sqrt(n).
inline double prediction_error(const Family& family, const Vector& theta_hat, std::span<const double> y) {
  if (static_cast<std::size_t>(theta_hat.size()) != y.size())
    throw InputError("prediction_error: " + std::to_string(theta_hat.size()) + " predictions vs " +
                     std::to_string(y.size()) + " responses");
  if (y.empty()) throw InputError("prediction_error needs at least one observation");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double t = theta_hat[static_cast<Eigen::Index>(i)];
    switch (family.kind) {
      case FamilyKind::gaussian: s += (t - y[i]) * (t - y[i]); break;
      case FamilyKind::bernoulli: s += ((mean(family, t) > 0.5 ? 1.0 : 0.0) != y[i]) ? 1.0 : 0.0; break;
      case FamilyKind::poisson: {
        const double d = mean(family, t) - y[i];
        s += d * d;
        break;
      }
    }
  }
  const double n = static_cast<double>(y.size());
  return family.kind == FamilyKind::bernoulli ? s / n : std::sqrt(s / n);
}

struct MethodRecord {
  Method method = Method::trma;
  double rmse_b = 0.0;
  double frobenius = 0.0;
  double kl = 0.0;  // at the test covariates
  double kl_in_sample = 0.0;
  double train_error = 0.0;
  double test_error = 0.0;
  std::optional<std::size_t> selected_rank;
  double underfit_mass = std::numeric_limits<double>::quiet_NaN();
  Vector weights;
};

struct ReplicationRecord {
  std::size_t replication = 0;
  bool failed = false;
  std::string failure;
  double sigma = 0.0;
  double cv_value = 0.0;
  KlRatio trma_kl_ratio;
  int max_cycles_used = 0;
  int ridge_events = 0;
  std::vector<MethodRecord> methods;
};

inline ReplicationRecord run_replication(const ExperimentPlan& plan, std::size_t replication,
                                         std::size_t inner_jobs = 1) {
  const GeneratedData gen = generate_dataset(plan, replication);
  const std::uint64_t seed = replication_seed(plan.base_seed, replication);
  const FoldPlan folds =
      FoldPlan::make(gen.train.size(), plan.folds,
                     plan.shuffle_folds ? std::optional<std::uint64_t>(derive_seed(seed, {5})) : std::nullopt);
  CandidateOptions opts = plan.candidates;
  opts.fit.init_seed = derive_seed(seed, {6, plan.candidates.fit.init_seed});
  opts.jobs = inner_jobs;
  const CandidateSet cs = build_candidates(gen.train, plan.ranks, folds, opts);
  const AveragedModel trma = optimize_weights(cs, gen.train, plan.optimizer);
  const InformationCriteria ic = information_criteria(cs, gen.train, plan.df_formula);
  const std::vector<MethodOutcome> outcomes = all_method_weights(cs, ic, trma);

  const Matrix theta_in = cs.in_sample_theta(gen.train.covariates);
  const Matrix theta_out = cs.in_sample_theta(gen.test.covariates);
  const SimplexObjective kl = kl_objective(theta_out, gen.truth.family, gen.truth.theta_test, gen.truth.mu_test);
  const SimplexObjective kl_in = kl_objective(theta_in, gen.truth.family, gen.truth.theta_train, gen.truth.mu_train);
  const std::vector<CpTensor> estimates = cs.estimates();

  std::size_t underfit = 0;
  const std::optional<std::size_t> true_rank = find_signal(plan.signal).cp_rank;
  if (true_rank)
    for (std::size_t r : plan.ranks)
      if (r < *true_rank) ++underfit;

  ReplicationRecord rec;
  rec.replication = replication;
  rec.sigma = gen.truth.sigma;
  rec.cv_value = trma.criterion_value;
  for (const FitResult& f : cs.full_fits) {
    rec.max_cycles_used = std::max(rec.max_cycles_used, f.cycles_used);
    rec.ridge_events += f.diagnostics.ridge_events;
  }
  for (const MethodOutcome& o : outcomes) {
    MethodRecord m;
    m.method = o.method;
    m.weights = o.weights.values();
    m.selected_rank = o.selected_rank;
    const DenseTensor est = axpy_cp(std::span<const double>(m.weights.data(), cs.size()), estimates);
    m.rmse_b = rmse_B(est, gen.truth.coefficient);
    m.frobenius = frobenius_error(est, gen.truth.coefficient);
    const Vector th_train = theta_in * m.weights;
    const Vector th_test = theta_out * m.weights;
    m.kl = kl.value(m.weights);
    m.kl_in_sample = kl_in.value(m.weights);
    m.train_error = prediction_error(gen.train.family, th_train, gen.train.responses);
    m.test_error = prediction_error(gen.test.family, th_test, gen.test.responses);
    if (true_rank) m.underfit_mass = underfit_weight_mass(o.weights, underfit);
    rec.methods.push_back(std::move(m));
  }
  rec.trma_kl_ratio = kl_ratio(kl, trma.weights, plan.kl_grid_resolution);
  return rec;
}

struct ExperimentResult {
  ExperimentPlan plan;
  std::vector<ReplicationRecord> replications;  // in replication order, failures included
  std::size_t failures = 0;
};

using ProgressCallback = std::function<void(const ReplicationRecord&)>;

/// Replications run concurrently on `jobs` workers; results do not depend
/// on `jobs`. Numerical failures are recorded; more than 10% aborts.
inline ExperimentResult run_experiment(const ExperimentPlan& plan, std::size_t jobs = 1,
                                       const ProgressCallback& progress = {}) {
  plan.validate();
  ExperimentResult result;
  result.plan = plan;
  result.replications.resize(plan.replications);
  const std::size_t outer = std::clamp<std::size_t>(jobs, 1, plan.replications);
  const std::size_t inner = std::max<std::size_t>(1, jobs / outer);
  std::mutex report;
  parallel_for(plan.replications, outer, [&](std::size_t r) {
    ReplicationRecord rec;
    try {
      rec = run_replication(plan, r, inner);
    } catch (const NumericalError& e) {
      rec = ReplicationRecord{};
      rec.replication = r;
      rec.failed = true;
      rec.failure = e.what();
    }
    result.replications[r] = rec;
    if (progress) {
      std::lock_guard lock(report);
      progress(rec);
    }
  });
  for (const ReplicationRecord& r : result.replications) result.failures += r.failed ? 1 : 0;
  if (10 * result.failures > plan.replications)
    throw NumericalError(std::to_string(result.failures) + " of " + std::to_string(plan.replications) +
                         " replications failed (limit 10%); first failure: " +
                         std::find_if(result.replications.begin(), result.replications.end(),
                                      [](const ReplicationRecord& r) { return r.failed; })
                             ->failure);
  return result;
}

struct Summary {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double sd = std::numeric_limits<double>::quiet_NaN();
  double median = std::numeric_limits<double>::quiet_NaN();
};

inline Summary summarize(std::vector<double> v) {
  v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }), v.end());
  Summary s;
  if (v.empty()) return s;
  const double n = static_cast<double>(v.size());
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t k = v.size() / 2;
  s.median = v.size() % 2 ? v[k] : 0.5 * (v[k - 1] + v[k]);
  return s;
}

struct AggregateRow {
  Method method = Method::trma;
  std::size_t completed = 0;
  Summary rmse_b, frobenius, kl, kl_in_sample, train_error, test_error, underfit_mass, kl_ratio;
  std::vector<double> mean_weights;
};

/// Per-method summaries over completed replications.
inline std::vector<AggregateRow> aggregate(const ExperimentResult& result) {
  std::vector<AggregateRow> rows;
  for (std::size_t k = 0; k < kAllMethods.size(); ++k) {
    AggregateRow row;
    row.method = kAllMethods[k];
    std::vector<double> a, b, c, c_in, d, e, f, g;
    row.mean_weights.assign(result.plan.ranks.size(), 0.0);
    for (const ReplicationRecord& rec : result.replications) {
      if (rec.failed) continue;
      const MethodRecord& m = rec.methods.at(k);
      ++row.completed;
      a.push_back(m.rmse_b);
      b.push_back(m.frobenius);
      c.push_back(m.kl);
      c_in.push_back(m.kl_in_sample);
      d.push_back(m.train_error);
      e.push_back(m.test_error);
      f.push_back(m.underfit_mass);
      if (m.method == Method::trma) g.push_back(rec.trma_kl_ratio.ratio);
      for (std::size_t s = 0; s < row.mean_weights.size(); ++s) row.mean_weights[s] += m.weights[static_cast<Eigen::Index>(s)];
    }
    if (row.completed > 0)
      for (double& w : row.mean_weights) w /= static_cast<double>(row.completed);
    row.rmse_b = summarize(a);
    row.frobenius = summarize(b);
    row.kl = summarize(c);
    row.kl_in_sample = summarize(c_in);
    row.train_error = summarize(d);
    row.test_error = summarize(e);
    row.underfit_mass = summarize(f);
    row.kl_ratio = summarize(g);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string format_number(double v) {
  if (std::isnan(v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

inline void write_replications_csv(std::ostream& os, const ExperimentResult& result, bool header = true) {
  if (header) {
    os << "n_train,replication,method,status,rmse_b,frobenius_error,kl,kl_in_sample,train_error,"
          "test_error,selected_rank,underfit_mass,kl_ratio,sigma,cv_criterion";
    for (std::size_t r : result.plan.ranks) os << ",w_rank" << r;
    os << '\n';
  }
  const std::size_t n = result.plan.n_train;
  for (const ReplicationRecord& rec : result.replications) {
    if (rec.failed) {
      os << n << ',' << rec.replication + 1 << ",NA,failed";
      for (int k = 0; k < 11; ++k) os << ",NA";
      for (std::size_t s = 0; s < result.plan.ranks.size(); ++s) os << ",NA";
      os << '\n';
      continue;
    }
    for (const MethodRecord& m : rec.methods) {
      os << n << ',' << rec.replication + 1 << ',' << method_name(m.method) << ",ok," << format_number(m.rmse_b)
         << ',' << format_number(m.frobenius) << ',' << format_number(m.kl) << ',' << format_number(m.kl_in_sample)
         << ',' << format_number(m.train_error)
         << ',' << format_number(m.test_error) << ',' << (m.selected_rank ? std::to_string(*m.selected_rank) : "NA")
         << ',' << format_number(m.underfit_mass) << ','
         << (m.method == Method::trma ? format_number(rec.trma_kl_ratio.ratio) : "NA") << ','
         << format_number(rec.sigma) << ',' << format_number(rec.cv_value);
      for (Eigen::Index s = 0; s < m.weights.size(); ++s) os << ',' << format_number(m.weights[s]);
      os << '\n';
    }
  }
}

inline void write_aggregate_csv(std::ostream& os, const ExperimentResult& result, bool header = true) {
  if (header) {
    os << "n_train,method,completed,failed,mean_rmse_b,sd_rmse_b,mean_frobenius_error,sd_frobenius_error,mean_kl,"
          "sd_kl,mean_kl_in_sample,sd_kl_in_sample,mean_train_error,sd_train_error,mean_test_error,sd_test_error,mean_underfit_mass,sd_underfit_mass,"
          "median_kl_ratio";
    for (std::size_t r : result.plan.ranks) os << ",mean_w_rank" << r;
    os << '\n';
  }
  for (const AggregateRow& row : aggregate(result)) {
    os << result.plan.n_train << ',' << method_name(row.method) << ',' << row.completed << ',' << result.failures;
    for (const Summary* s : {&row.rmse_b, &row.frobenius, &row.kl, &row.kl_in_sample, &row.train_error, &row.test_error, &row.underfit_mass})
      os << ',' << format_number(s->mean) << ',' << format_number(s->sd);
    os << ',' << format_number(row.kl_ratio.median);
    for (double w : row.mean_weights) os << ',' << format_number(w);
    os << '\n';
  }
}

/// Plot data over a sample-size sweep, one row per n.
enum class SweepSeries { kl_ratio, trma_error, underfit_weight };

inline void write_sweep_csv(std::ostream& os, std::span<const ExperimentResult> results, SweepSeries series) {
  switch (series) {
    case SweepSeries::kl_ratio: os << "n_train,median_kl_ratio\n"; break;
    case SweepSeries::trma_error: os << "n_train,mean_frobenius_error,mean_rmse_b\n"; break;
    case SweepSeries::underfit_weight: os << "n_train,mean_underfit_mass\n"; break;
  }
  for (const ExperimentResult& r : results) {
    const std::vector<AggregateRow> rows = aggregate(r);
    const AggregateRow& t = rows.back();
    os << r.plan.n_train;
    switch (series) {
      case SweepSeries::kl_ratio: os << ',' << format_number(t.kl_ratio.median); break;
      case SweepSeries::trma_error:
        os << ',' << format_number(t.frobenius.mean) << ',' << format_number(t.rmse_b.mean);
        break;
      case SweepSeries::underfit_weight: os << ',' << format_number(t.underfit_mass.mean); break;
    }
    os << '\n';
  }
}

}  // namespace tenma
