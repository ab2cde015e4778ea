#pragma once

// Candidate CP models of ascending rank, J-fold cross-validated weight
// choice, and the selection/weighting baselines it is compared against.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tenma/cp_fit.hpp"
#include "tenma/errors.hpp"
#include "tenma/parallel.hpp"
#include "tenma/rng.hpp"
#include "tenma/simplex.hpp"
#include "tenma/tensor.hpp"

namespace tenma {

class FoldPlan {
public:
  FoldPlan() = default;

  /// Near-equal contiguous folds over the observation order, or over a
  /// seeded shuffle of it when `shuffle_seed` is set. With no shuffle and
  /// J | n, fold j is exactly {j*n/J, ..., (j+1)*n/J - 1}.
  static FoldPlan make(std::size_t n, std::size_t folds, std::optional<std::uint64_t> shuffle_seed = std::nullopt) {
    if (folds < 2) throw InputError("cross-validation needs at least 2 folds");
    if (n < folds)
      throw InputError(std::to_string(n) + " observations cannot fill " + std::to_string(folds) + " folds");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (shuffle_seed) {
      Rng rng = make_rng(*shuffle_seed, {0xf01d});
      std::shuffle(order.begin(), order.end(), rng);
    }
    FoldPlan plan;
    plan.folds_ = folds;
    plan.shuffle_seed_ = shuffle_seed;
    plan.assignment_.assign(n, 0);
    const std::size_t base = n / folds;
    const std::size_t extra = n % folds;
    std::size_t pos = 0;
    for (std::size_t j = 0; j < folds; ++j) {
      const std::size_t len = base + (j < extra ? 1 : 0);
      for (std::size_t k = 0; k < len; ++k) plan.assignment_[order[pos++]] = j;
    }
    return plan;
  }

  [[nodiscard]] std::size_t folds() const noexcept { return folds_; }
  [[nodiscard]] std::size_t size() const noexcept { return assignment_.size(); }
  [[nodiscard]] const std::vector<std::size_t>& assignment() const noexcept { return assignment_; }
  [[nodiscard]] std::optional<std::uint64_t> shuffle_seed() const noexcept { return shuffle_seed_; }

  [[nodiscard]] std::vector<std::size_t> members(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment_.size(); ++i)
      if (assignment_[i] == fold) out.push_back(i);
    return out;
  }

  [[nodiscard]] std::vector<std::size_t> complement(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < assignment_.size(); ++i)
      if (assignment_[i] != fold) out.push_back(i);
    return out;
  }

private:
  std::size_t folds_ = 0;
  std::vector<std::size_t> assignment_;
  std::optional<std::uint64_t> shuffle_seed_;
};

struct CandidateOptions {
  FitConfig fit;  // rank and init_seed are set per candidate
  /// Restart count used for ranks >= high_rank_threshold.
  int high_rank_restarts = 1;
  std::size_t high_rank_threshold = 3;
  std::size_t jobs = 1;
};

struct CandidateSet {
  std::vector<std::size_t> ranks;
  std::vector<FitResult> full_fits;               // S
  std::vector<std::vector<FitResult>> fold_fits;  // S x J, (s, j) trained without fold j
  FoldPlan fold_plan;
  /// n x S; entry (i, s) is theta_i from the rank-s fit that did not see i.
  Matrix out_of_fold_theta;

  [[nodiscard]] std::size_t size() const noexcept { return ranks.size(); }

  [[nodiscard]] std::vector<CpTensor> estimates() const {
    std::vector<CpTensor> out;
    out.reserve(full_fits.size());
    for (const FitResult& f : full_fits) out.push_back(f.estimate);
    return out;
  }

  /// n x S in-sample predictors of the full-data fits.
  [[nodiscard]] Matrix in_sample_theta(const TensorStack& covariates) const {
    Matrix out(static_cast<Eigen::Index>(covariates.count()), static_cast<Eigen::Index>(size()));
    for (std::size_t s = 0; s < size(); ++s)
      out.col(static_cast<Eigen::Index>(s)) = predict_theta(full_fits[s].estimate, covariates);
    return out;
  }
};

inline void validate_ranks(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw InputError("candidate rank list is empty");
  for (std::size_t s = 0; s < ranks.size(); ++s) {
    if (ranks[s] < 1) throw InputError("candidate ranks must be >= 1");
    if (s > 0 && ranks[s] <= ranks[s - 1]) throw InputError("candidate ranks must be strictly ascending");
  }
}

inline FitConfig candidate_fit_config(const CandidateOptions& opts, std::size_t rank, std::size_t fold_tag) {
  FitConfig cfg = opts.fit;
  cfg.rank = rank;
  cfg.init_seed = derive_seed(opts.fit.init_seed, {rank, fold_tag});
  if (rank >= opts.high_rank_threshold) cfg.n_restarts = std::max(cfg.n_restarts, opts.high_rank_restarts);
  return cfg;
}

/// Fits every rank on all data and on each fold complement: S * (J + 1) fits.
inline CandidateSet build_candidates(const RegressionData& data, std::span<const std::size_t> ranks,
                                     const FoldPlan& plan, const CandidateOptions& opts) {
  validate_ranks(ranks);
  data.validate();
  if (plan.size() != data.size())
    throw InputError("fold plan covers " + std::to_string(plan.size()) + " observations, data has " +
                     std::to_string(data.size()));
  const std::size_t S = ranks.size();
  const std::size_t J = plan.folds();

  CandidateSet cs;
  cs.ranks.assign(ranks.begin(), ranks.end());
  cs.fold_plan = plan;
  cs.full_fits.resize(S);
  cs.fold_fits.assign(S, std::vector<FitResult>(J));
  cs.out_of_fold_theta = Matrix::Zero(static_cast<Eigen::Index>(data.size()), static_cast<Eigen::Index>(S));

  // Task 0 is the full data; task j+1 leaves out fold j.
  parallel_for(J + 1, opts.jobs, [&](std::size_t task) {
    std::optional<RegressionData> subset;
    if (task > 0) subset.emplace(data.subset(plan.complement(task - 1)));
    const RegressionData& train = subset ? *subset : data;
    const detail::ModeLayouts layouts(train.covariates);
    for (std::size_t s = 0; s < S; ++s) {
      FitResult fit;
      try {
        fit = fit_cp_glm(train, layouts, candidate_fit_config(opts, ranks[s], task));
      } catch (const NumericalError& e) {
        throw NumericalError("candidate rank " + std::to_string(ranks[s]) +
                             (task == 0 ? std::string(" (full data)") : ", fold " + std::to_string(task)) +
                             ": " + e.what());
      }
      if (task == 0) {
        cs.full_fits[s] = std::move(fit);
      } else {
        cs.fold_fits[s][task - 1] = std::move(fit);
      }
    }
  });

  for (std::size_t j = 0; j < J; ++j) {
    const std::vector<std::size_t> held = plan.members(j);
    for (std::size_t s = 0; s < S; ++s) {
      const DenseTensor b = cp_to_dense(cs.fold_fits[s][j].estimate);
      const auto x = data.covariates.as_matrix();
      for (std::size_t i : held)
        cs.out_of_fold_theta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(s)) =
            x.col(static_cast<Eigen::Index>(i)).dot(b.vec());
    }
  }
  return cs;
}

inline SimplexObjective cv_objective(const CandidateSet& cs, const RegressionData& data) {
  const Vector y = Eigen::Map<const Vector>(data.responses.data(), static_cast<Eigen::Index>(data.size()));
  return SimplexObjective(cs.out_of_fold_theta, y, data.family);
}

/// CV_J(w) = 2/phi * sum_j sum_{i in fold j} [ b(theta_ji(w)) - y_ji * theta_ji(w) ]
inline double cv_criterion(const CandidateSet& cs, const RegressionData& data, const WeightVector& w) {
  return cv_objective(cs, data).value(w.values());
}

inline Vector cv_gradient(const CandidateSet& cs, const RegressionData& data, const WeightVector& w) {
  return cv_objective(cs, data).gradient(w.values());
}

struct AveragedModel {
  WeightVector weights;
  DenseTensor estimate_dense;
  double criterion_value = 0.0;
  OptimizerDiagnostics diagnostics;
};

inline AveragedModel optimize_weights(const CandidateSet& cs, const RegressionData& data,
                                      const OptimizerConfig& cfg = {}) {
  if (cs.size() == 0 || cs.fold_fits.size() != cs.size())
    throw InputError("candidate set is incomplete");
  const SimplexObjective obj = cv_objective(cs, data);
  AveragedModel model;
  if (cs.size() == 1) {
    model.weights = WeightVector::vertex(1, 0);
    model.criterion_value = obj.value(model.weights.values());
  } else {
    OptimizerResult res = minimize_on_simplex(obj, cfg);
    model.weights = std::move(res.weights);
    model.criterion_value = res.value;
    model.diagnostics = res.diagnostics;
  }
  const std::vector<CpTensor> est = cs.estimates();
  model.estimate_dense = axpy_cp(std::span<const double>(model.weights.values().data(), cs.size()), est);
  return model;
}

enum class DfFormula {
  /// R * sum_d p_d - R^2 + R  (620 for R = 5 on 64 x 64)
  standard,
  /// R * (sum_d p_d - D + 1)
  per_mode,
};

inline std::size_t effective_df(std::size_t rank, const Shape& shape, DfFormula formula = DfFormula::standard) {
  if (rank < 1) throw InputError("effective_df needs rank >= 1");
  const auto r = static_cast<long long>(rank);
  const auto sum_p = static_cast<long long>(shape.dim_sum());
  long long df = 0;
  switch (formula) {
    case DfFormula::standard: df = r * sum_p - r * r + r; break;
    case DfFormula::per_mode: df = r * (sum_p - static_cast<long long>(shape.order()) + 1); break;
  }
  if (df < 1) throw InputError("effective degrees of freedom not positive for this rank/shape");
  return static_cast<std::size_t>(df);
}

inline DfFormula parse_df_formula(std::string_view token) {
  if (token == "standard") return DfFormula::standard;
  if (token == "per_mode") return DfFormula::per_mode;
  throw InputError("unknown df formula '" + std::string(token) + "' (expected standard|per_mode)");
}

struct InformationCriteria {
  std::vector<double> log_likelihood;
  std::vector<double> df;
  std::vector<double> aic;
  std::vector<double> bic;
};

enum class GaussianScale {
  /// Use data.family.dispersion as the known variance.
  given,
  /// Profile the variance out per candidate: sigma_s^2 = RSS_s / n.
  profiled,
};

/// Log-likelihoods are evaluated from the full-data fits under `data.family`
/// (with the Gaussian variance profiled out unless `scale` is given).
inline InformationCriteria information_criteria(const CandidateSet& cs, const RegressionData& data,
                                                DfFormula formula = DfFormula::standard,
                                                GaussianScale scale = GaussianScale::profiled) {
  InformationCriteria ic;
  const double n = static_cast<double>(data.size());
  const double log_n = std::log(n);
  const bool profile = data.family.kind == FamilyKind::gaussian && scale == GaussianScale::profiled;
  for (std::size_t s = 0; s < cs.size(); ++s) {
    const Vector theta = predict_theta(cs.full_fits[s].estimate, data.covariates);
    const std::span<const double> th(theta.data(), static_cast<std::size_t>(theta.size()));
    double ll = 0.0;
    if (profile) {
      double rss = 0.0;
      for (std::size_t i = 0; i < data.size(); ++i) rss += (data.responses[i] - th[i]) * (data.responses[i] - th[i]);
      const double var = std::max(rss / n, std::numeric_limits<double>::min());
      ll = -0.5 * n * (std::log(2.0 * std::numbers::pi * var) + 1.0);
    } else {
      ll = log_likelihood(data.family, data.responses, th);
    }
    const auto df = static_cast<double>(effective_df(cs.ranks[s], data.shape(), formula));
    ic.log_likelihood.push_back(ll);
    ic.df.push_back(df);
    ic.aic.push_back(-2.0 * ll + 2.0 * df);
    ic.bic.push_back(-2.0 * ll + log_n * df);
  }
  return ic;
}

/// argmin with ties broken toward the smaller index (smaller rank).
inline std::size_t argmin_first(std::span<const double> values) {
  if (values.empty()) throw InputError("argmin of an empty list");
  std::size_t best = 0;
  for (std::size_t s = 1; s < values.size(); ++s)
    if (values[s] < values[best]) best = s;
  return best;
}

inline std::size_t select_aic(const InformationCriteria& ic) { return argmin_first(ic.aic); }
inline std::size_t select_bic(const InformationCriteria& ic) { return argmin_first(ic.bic); }

/// w_s = exp(-c_s) / sum_k exp(-c_k), with max-subtraction; weights whose
/// exponent underflows are exactly zero.
inline WeightVector smoothed_weights(std::span<const double> criterion) {
  if (criterion.empty()) throw InputError("smoothed weights of an empty list");
  const double best = *std::min_element(criterion.begin(), criterion.end());
  Vector w(static_cast<Eigen::Index>(criterion.size()));
  for (std::size_t s = 0; s < criterion.size(); ++s) w[static_cast<Eigen::Index>(s)] = std::exp(-(criterion[s] - best));
  return WeightVector::normalized(std::move(w));
}

inline WeightVector saic_weights(const InformationCriteria& ic) { return smoothed_weights(ic.aic); }
inline WeightVector sbic_weights(const InformationCriteria& ic) { return smoothed_weights(ic.bic); }

inline WeightVector max_weight(std::size_t size) {
  if (size == 0) throw InputError("weight vector size must be positive");
  return WeightVector::vertex(static_cast<Eigen::Index>(size), static_cast<Eigen::Index>(size - 1));
}

inline WeightVector eqma_weight(std::size_t size) {
  if (size == 0) throw InputError("weight vector size must be positive");
  return WeightVector::uniform(static_cast<Eigen::Index>(size));
}

/// Total weight on the first `underfit_count` (underfitted) candidates.
inline double underfit_weight_mass(const WeightVector& w, std::size_t underfit_count) {
  if (underfit_count > static_cast<std::size_t>(w.size()))
    throw InputError("underfit count exceeds number of candidates");
  return w.values().head(static_cast<Eigen::Index>(underfit_count)).sum();
}

enum class Method { aic, bic, saic, sbic, max, eqma, trma };

inline constexpr std::array<Method, 7> kAllMethods{Method::aic,  Method::bic,  Method::saic, Method::sbic,
                                                   Method::max,  Method::eqma, Method::trma};

inline std::string_view method_name(Method m) {
  switch (m) {
    case Method::aic: return "AIC";
    case Method::bic: return "BIC";
    case Method::saic: return "SAIC";
    case Method::sbic: return "SBIC";
    case Method::max: return "MAX";
    case Method::eqma: return "EQMA";
    case Method::trma: return "TRMA";
  }
  return "?";
}

struct MethodOutcome {
  Method method = Method::trma;
  WeightVector weights;
  std::optional<std::size_t> selected_rank;  // selection methods only
  double criterion = std::numeric_limits<double>::quiet_NaN();  // AIC/BIC of the pick, CV for TRMA
};

/// Weights of all seven methods. `trma` must come from optimize_weights on
/// the same candidate set.
inline std::vector<MethodOutcome> all_method_weights(const CandidateSet& cs, const InformationCriteria& ic,
                                                     const AveragedModel& trma) {
  const std::size_t S = cs.size();
  const auto Si = static_cast<Eigen::Index>(S);
  std::vector<MethodOutcome> out;
  const std::size_t a = select_aic(ic);
  const std::size_t b = select_bic(ic);
  out.push_back({Method::aic, WeightVector::vertex(Si, static_cast<Eigen::Index>(a)), cs.ranks[a], ic.aic[a]});
  out.push_back({Method::bic, WeightVector::vertex(Si, static_cast<Eigen::Index>(b)), cs.ranks[b], ic.bic[b]});
  out.push_back({Method::saic, saic_weights(ic), std::nullopt, std::numeric_limits<double>::quiet_NaN()});
  out.push_back({Method::sbic, sbic_weights(ic), std::nullopt, std::numeric_limits<double>::quiet_NaN()});
  out.push_back({Method::max, max_weight(S), cs.ranks.back(), std::numeric_limits<double>::quiet_NaN()});
  out.push_back({Method::eqma, eqma_weight(S), std::nullopt, std::numeric_limits<double>::quiet_NaN()});
  out.push_back({Method::trma, trma.weights, std::nullopt, trma.criterion_value});
  return out;
}

/// Gaussian dispersion estimate RSS / (n - df) from the largest-rank full
/// fit (RSS / n when n <= df).
inline double estimate_dispersion(const CandidateSet& cs, const RegressionData& data,
                                  DfFormula formula = DfFormula::standard) {
  const Vector theta = predict_theta(cs.full_fits.back().estimate, data.covariates);
  const Vector y = Eigen::Map<const Vector>(data.responses.data(), static_cast<Eigen::Index>(data.size()));
  const double rss = (y - theta).squaredNorm();
  const double df = static_cast<double>(effective_df(cs.ranks.back(), data.shape(), formula));
  const double n = static_cast<double>(data.size());
  const double phi = n > df ? rss / (n - df) : rss / n;
  return phi > 0 ? phi : std::numeric_limits<double>::min();
}

}  // namespace tenma
