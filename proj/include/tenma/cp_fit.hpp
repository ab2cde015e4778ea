#pragma once

// Rank-R CP tensor GLM fitted by block relaxation: each cycle updates the
// factor matrices one mode at a time, each update being an ordinary GLM in
// p_d * R coefficients solved by Newton/IRLS with step-halving.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "tenma/errors.hpp"
#include "tenma/family.hpp"
#include "tenma/rng.hpp"
#include "tenma/tensor.hpp"

namespace tenma {

/// n tensors of a common shape, stored observation after observation, each
/// linearized first-index-fastest.
class TensorStack {
public:
  TensorStack() = default;

  TensorStack(Shape shape, std::size_t count, std::vector<double> values)
      : shape_(std::move(shape)), count_(count), values_(std::move(values)) {
    if (values_.size() != shape_.total_size() * count_)
      throw InputError("tensor stack of " + std::to_string(count_) + " x " + shape_.to_string() +
                       " needs " + std::to_string(shape_.total_size() * count_) + " values, got " +
                       std::to_string(values_.size()));
  }

  explicit TensorStack(std::span<const DenseTensor> tensors) {
    if (tensors.empty()) throw InputError("tensor stack needs at least one observation");
    shape_ = tensors[0].shape();
    count_ = tensors.size();
    values_.reserve(count_ * shape_.total_size());
    for (const DenseTensor& t : tensors) {
      if (!(t.shape() == shape_))
        throw InputError("observation shape " + t.shape().to_string() + " differs from " +
                         shape_.to_string());
      values_.insert(values_.end(), t.values().begin(), t.values().end());
    }
  }

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t count() const noexcept { return count_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
  [[nodiscard]] const double* data() const noexcept { return values_.data(); }

  [[nodiscard]] std::span<const double> observation_values(std::size_t i) const {
    return std::span<const double>(values_).subspan(i * shape_.total_size(), shape_.total_size());
  }

  [[nodiscard]] DenseTensor observation(std::size_t i) const {
    auto v = observation_values(i);
    return DenseTensor(shape_, std::vector<double>(v.begin(), v.end()));
  }

  /// Column i is vec(X_i).
  [[nodiscard]] Eigen::Map<const Matrix> as_matrix() const {
    return {values_.data(), static_cast<Eigen::Index>(shape_.total_size()),
            static_cast<Eigen::Index>(count_)};
  }

  [[nodiscard]] TensorStack subset(std::span<const std::size_t> rows) const {
    std::vector<double> out;
    out.reserve(rows.size() * shape_.total_size());
    for (std::size_t i : rows) {
      auto v = observation_values(i);
      out.insert(out.end(), v.begin(), v.end());
    }
    return TensorStack(shape_, rows.size(), std::move(out));
  }

private:
  Shape shape_;
  std::size_t count_ = 0;
  std::vector<double> values_;
};

struct RegressionData {
  TensorStack covariates;
  std::vector<double> responses;
  Family family;

  RegressionData() = default;
  RegressionData(TensorStack x, std::vector<double> y, Family f)
      : covariates(std::move(x)), responses(std::move(y)), family(f) {
    validate();
  }

  [[nodiscard]] std::size_t size() const noexcept { return responses.size(); }
  [[nodiscard]] const Shape& shape() const noexcept { return covariates.shape(); }

  void validate() const {
    if (responses.empty()) throw InputError("regression data needs at least one observation");
    if (covariates.count() != responses.size())
      throw InputError(std::to_string(covariates.count()) + " covariate tensors but " +
                       std::to_string(responses.size()) + " responses");
    validate_responses(family, responses);
  }

  [[nodiscard]] RegressionData subset(std::span<const std::size_t> rows) const {
    std::vector<double> y;
    y.reserve(rows.size());
    for (std::size_t i : rows) y.push_back(responses.at(i));
    return RegressionData(covariates.subset(rows), std::move(y), family);
  }
};

struct FitConfig {
  std::size_t rank = 1;
  int max_cycles = 200;
  double rel_tol = 1e-6;
  int irls_max_iter = 100;
  double irls_tol = 1e-8;
  std::uint64_t init_seed = 0;
  double init_scale = 0.1;
  int n_restarts = 1;
  /// Line search along the previous-to-current factor direction after each
  /// cycle; a step is kept only if it raises the log-likelihood.
  bool extrapolate = true;

  void validate() const {
    if (rank < 1) throw InputError("fit rank must be >= 1");
    if (max_cycles < 1 || irls_max_iter < 1 || n_restarts < 1)
      throw InputError("fit iteration limits and restart count must be >= 1");
    if (!(rel_tol > 0) || !(irls_tol > 0) || !(init_scale > 0))
      throw InputError("fit tolerances and init_scale must be positive");
  }
};

struct FitDiagnostics {
  int restarts_used = 0;
  int failed_attempts = 0;
  int ridge_events = 0;
  int best_restart = 0;
  /// Most negative log-likelihood change seen across block updates (0 if none).
  double worst_block_change = 0.0;
};

struct FitResult {
  CpTensor estimate;
  double log_likelihood = -std::numeric_limits<double>::infinity();
  int cycles_used = 0;
  bool converged = false;
  std::vector<double> loglik_trace;  // initial value, then one entry per cycle
  FitDiagnostics diagnostics;
};

/// theta_i = <X_i, B>
inline Vector predict_theta(const DenseTensor& estimate, const TensorStack& covariates) {
  if (!(estimate.shape() == covariates.shape()))
    throw InputError("estimate shape " + estimate.shape().to_string() + " does not match covariates " +
                     covariates.shape().to_string());
  return covariates.as_matrix().transpose() * estimate.vec();
}

inline Vector predict_theta(const CpTensor& estimate, const TensorStack& covariates) {
  return predict_theta(cp_to_dense(estimate), covariates);
}

/// Reference construction of the mode-`mode` block design: row i is
/// vec(X_i(mode) * khatri_rao(other factors)) so that theta_i = row_i . vec(B_mode).
inline Matrix mode_design_matrix(const RegressionData& data, const CpTensor& factors, std::size_t mode) {
  if (!(factors.shape() == data.shape()))
    throw InputError("factor shape " + factors.shape().to_string() + " does not match covariates " +
                     data.shape().to_string());
  if (mode >= data.shape().order()) throw InputError("mode out of range");
  const Matrix kr = khatri_rao_except(factors.factors(), mode);
  const auto pm = static_cast<Eigen::Index>(data.shape().dim(mode));
  const auto r = static_cast<Eigen::Index>(factors.rank());
  Matrix design(static_cast<Eigen::Index>(data.size()), pm * r);
  for (std::size_t i = 0; i < data.size(); ++i) {
    Matrix z = mode_matricize(data.covariates.observation(i), mode) * kr;
    design.row(static_cast<Eigen::Index>(i)) = Eigen::Map<const Vector>(z.data(), z.size()).transpose();
  }
  return design;
}

struct IrlsResult {
  Vector coefficients;
  double log_likelihood = 0.0;  // dispersion-free core: sum y*theta - b(theta)
  int iterations = 0;
  int ridge_events = 0;
  bool converged = false;
};

namespace detail {

inline double core_loglik(const Family& f, const Vector& y, const Vector& theta) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) s += y[i] * theta[i] - cumulant(f, theta[i]);
  return s;
}

/// Solves H x = g for symmetric positive semi-definite H (lower triangle
/// filled), adding the ridge lambda = 1e-8 * trace(H) / p when H is singular
/// or badly conditioned.
inline Vector spd_solve(Matrix& h, const Vector& g, int& ridge_events) {
  Eigen::LLT<Matrix> llt(h.selfadjointView<Eigen::Lower>());
  if (llt.info() == Eigen::Success && llt.rcond() > 1e-13) {
    Vector x = llt.solve(g);
    if (x.allFinite()) return x;
  }
  ++ridge_events;
  const double p = static_cast<double>(h.rows());
  double lambda = 1e-8 * h.diagonal().sum() / p;
  if (!(lambda > 0)) lambda = 1e-8;
  for (int attempt = 0; attempt < 8; ++attempt, lambda *= 100) {
    Matrix hr = h;
    hr.diagonal().array() += lambda;
    Eigen::LLT<Matrix> ridge(hr.selfadjointView<Eigen::Lower>());
    if (ridge.info() == Eigen::Success) {
      Vector x = ridge.solve(g);
      if (x.allFinite()) return x;
    }
  }
  return Vector::Zero(g.size());
}

/// Weighted Gram  sum_i w_i d_i d_i^T  where d_i is column i of `dt`.
inline Matrix weighted_gram(const Matrix& dt, const Vector* weights) {
  Matrix h = Matrix::Zero(dt.rows(), dt.rows());
  if (weights == nullptr) {
    h.selfadjointView<Eigen::Lower>().rankUpdate(dt);
  } else {
    Matrix scaled = dt * weights->cwiseSqrt().asDiagonal();
    h.selfadjointView<Eigen::Lower>().rankUpdate(scaled);
  }
  return h;
}

/// IRLS on a transposed design (one column per observation).
inline IrlsResult irls_transposed(const Matrix& dt, const Vector& y, const Family& family,
                                  const Vector& start, double tol, int max_iter) {
  IrlsResult res;
  res.coefficients = start;
  Vector theta = dt.transpose() * start;
  double ll = core_loglik(family, y, theta);
  if (!std::isfinite(ll)) ll = -std::numeric_limits<double>::infinity();

  const bool gaussian = family.kind == FamilyKind::gaussian;
  for (int it = 0; it < max_iter; ++it) {
    res.iterations = it + 1;
    Matrix h;
    Vector grad;
    if (gaussian) {
      h = weighted_gram(dt, nullptr);
      grad = dt * y;
    } else {
      Vector w(theta.size());
      Vector resid(theta.size());
      for (Eigen::Index i = 0; i < theta.size(); ++i) {
        w[i] = variance(family, theta[i]);
        resid[i] = y[i] - mean(family, theta[i]);
      }
      h = weighted_gram(dt, &w);
      grad = dt * resid;
    }
    Vector proposal;
    if (gaussian) {
      proposal = spd_solve(h, grad, res.ridge_events);
    } else {
      proposal = res.coefficients + spd_solve(h, grad, res.ridge_events);
    }
    const Vector step = proposal - res.coefficients;

    // Step-halving until the objective does not decrease.
    double t = 1.0;
    bool accepted = false;
    Vector cand;
    Vector cand_theta;
    double cand_ll = 0.0;
    for (int halving = 0; halving <= 30; ++halving, t *= 0.5) {
      cand = res.coefficients + t * step;
      cand_theta = dt.transpose() * cand;
      cand_ll = core_loglik(family, y, cand_theta);
      if (std::isfinite(cand_ll) && cand_ll >= ll) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      res.converged = true;
      break;
    }
    const double gain = cand_ll - ll;
    res.coefficients = std::move(cand);
    theta = std::move(cand_theta);
    ll = cand_ll;
    if (gaussian || gain <= tol * (std::abs(ll) + 1.0)) {
      res.converged = true;
      break;
    }
  }
  res.log_likelihood = ll;
  return res;
}

/// Contractions of the covariate stack used by block relaxation. With L the
/// last mode, each X_i is read as a P x p_L matrix (P = prod_{d<L} p_d), so
///   X_i x_L B  = X_i * B          (the "partial" for the modes before L)
///   design_L   = KR^T * [X_1 ... X_n]
/// and the designs for modes d < L are cheap contractions of the partial.
class ModeLayouts {
public:
  explicit ModeLayouts(const TensorStack& x) : stack_(&x) {
    const Shape& s = x.shape();
    last_ = s.order() - 1;
    rest_ = s.size_except(last_);
  }

  [[nodiscard]] const TensorStack& stack() const noexcept { return *stack_; }
  [[nodiscard]] std::size_t last_mode() const noexcept { return last_; }

  /// P x (c * n): block i (c columns) is X_i * b for the p_L x c matrix b.
  [[nodiscard]] Matrix contract_last(const Matrix& b) const {
    const auto pl = static_cast<Eigen::Index>(stack_->shape().dim(last_));
    const auto rest = static_cast<Eigen::Index>(rest_);
    const auto n = static_cast<Eigen::Index>(stack_->count());
    const Eigen::Index c = b.cols();
    Matrix out(rest, c * n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const Eigen::Map<const Matrix> xi(stack_->data() + i * rest * pl, rest, pl);
      out.middleCols(i * c, c).noalias() = xi * b;
    }
    return out;
  }

  /// (R * p_m) x n; column i is vec(Z_i^T) for Z_i = X_i(m) * KR, so
  /// theta_i = column_i . vec(B_m^T).
  [[nodiscard]] Matrix design_transposed(const std::vector<Matrix>& factors, std::size_t m) const {
    if (m == last_) return design_last(factors);
    return design_from_partial(contract_last(factors[last_]), factors, m);
  }

  [[nodiscard]] Matrix design_last(const std::vector<Matrix>& factors) const {
    const auto pl = static_cast<Eigen::Index>(stack_->shape().dim(last_));
    const auto n = static_cast<Eigen::Index>(stack_->count());
    const Matrix kr = khatri_rao_except(factors, last_);
    const auto r = kr.cols();
    Matrix out(r * pl, n);
    Eigen::Map<Matrix> blocks(out.data(), r, pl * n);
    const Eigen::Map<const Matrix> view(stack_->data(), static_cast<Eigen::Index>(rest_), pl * n);
    blocks.noalias() = kr.transpose() * view;
    return out;
  }

  /// Mode-m (m < L) design from the partial of the current last factor.
  [[nodiscard]] Matrix design_from_partial(const Matrix& partial, const std::vector<Matrix>& factors,
                                           std::size_t m) const {
    const Shape& s = stack_->shape();
    const auto r = static_cast<Eigen::Index>(factors[0].cols());
    const auto n = static_cast<Eigen::Index>(stack_->count());
    const auto pm = static_cast<Eigen::Index>(s.dim(m));
    std::vector<Matrix> lo_f(factors.begin(), factors.begin() + static_cast<std::ptrdiff_t>(m));
    std::vector<Matrix> hi_f(factors.begin() + static_cast<std::ptrdiff_t>(m) + 1,
                             factors.begin() + static_cast<std::ptrdiff_t>(last_));
    const Matrix w_lo = lo_f.empty() ? Matrix::Ones(1, r) : khatri_rao(lo_f);
    const Matrix w_hi = hi_f.empty() ? Matrix::Ones(1, r) : khatri_rao(hi_f);
    const Eigen::Index below = w_lo.rows();
    const Eigen::Index above = w_hi.rows();
    Matrix out(r * pm, n);
    Eigen::RowVectorXd tmp(pm * above);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index c = 0; c < r; ++c) {
        const Eigen::Map<const Matrix> t(partial.col(i * r + c).data(), below, pm * above);
        if (below == 1) {
          tmp = t.row(0);
        } else {
          tmp.noalias() = w_lo.col(c).transpose() * t;
        }
        const Eigen::Map<const Matrix> folded(tmp.data(), pm, above);
        Vector z = folded * w_hi.col(c);
        for (Eigen::Index k = 0; k < pm; ++k) out(c + r * k, i) = z[k];
      }
    }
    return out;
  }

  /// theta_i = sum_c partial_i[:, c] . kr[:, c] with kr the Khatri-Rao of
  /// the modes before L (ones for order-1 tensors).
  [[nodiscard]] Vector theta_from_partial(const Matrix& partial, const Matrix& kr) const {
    const auto n = static_cast<Eigen::Index>(stack_->count());
    const Eigen::Map<const Matrix> blocks(partial.data(), partial.size() / n, n);
    const Eigen::Map<const Vector> k(kr.data(), kr.size());
    return blocks.transpose() * k;
  }

  [[nodiscard]] Matrix kr_before_last(const std::vector<Matrix>& factors) const {
    if (last_ == 0) return Matrix::Ones(1, factors[0].cols());
    return khatri_rao(std::span<const Matrix>(factors.data(), last_));
  }

private:
  const TensorStack* stack_;
  std::size_t last_ = 0;
  std::size_t rest_ = 1;
};

inline Vector factor_to_coefficients(const Matrix& factor) {
  Matrix t = factor.transpose();
  return Eigen::Map<const Vector>(t.data(), t.size());
}

inline Matrix coefficients_to_factor(const Vector& beta, Eigen::Index rows, Eigen::Index rank) {
  return Eigen::Map<const Matrix>(beta.data(), rank, rows).transpose();
}

/// Columns k = 0..D of the linear predictor along the line
///   [[N_1 + t D_1, ..., N_D + t D_D]] = sum_k t^k C_k,
/// given the partial [X_i N_L | X_i D_L] (2R columns per observation).
inline Matrix line_polynomial(const ModeLayouts& layouts, const Matrix& partial2, const std::vector<Matrix>& now,
                              const std::vector<Matrix>& delta) {
  const std::size_t last = layouts.last_mode();
  const auto n = static_cast<Eigen::Index>(layouts.stack().count());
  const Eigen::Index r = now[0].cols();
  const Eigen::Index block = partial2.rows() * r;
  const auto masks = static_cast<Eigen::Index>(std::size_t{1} << last);
  // Column mask of `weights` pairs the N half, column masks + mask the D half.
  Matrix weights = Matrix::Zero(2 * block, 2 * masks);
  std::vector<Matrix> picked(last);
  std::vector<int> moving(static_cast<std::size_t>(masks), 0);
  for (Eigen::Index mask = 0; mask < masks; ++mask) {
    for (std::size_t d = 0; d < last; ++d) {
      const bool m = (mask >> d) & 1;
      picked[d] = m ? delta[d] : now[d];
      moving[static_cast<std::size_t>(mask)] += m ? 1 : 0;
    }
    const Matrix kr = last == 0 ? Matrix::Ones(1, r) : khatri_rao(picked);
    const Eigen::Map<const Vector> k(kr.data(), kr.size());
    weights.col(mask).head(block) = k;
    weights.col(masks + mask).tail(block) = k;
  }
  const Eigen::Map<const Matrix> blocks(partial2.data(), 2 * block, n);
  const Matrix dots = blocks.transpose() * weights;
  Matrix terms = Matrix::Zero(n, static_cast<Eigen::Index>(last + 2));
  for (Eigen::Index mask = 0; mask < masks; ++mask) {
    const int k = moving[static_cast<std::size_t>(mask)];
    terms.col(k) += dots.col(mask);
    terms.col(k + 1) += dots.col(masks + mask);
  }
  return terms;
}

/// Core log-likelihood that refuses (returns -inf) predictors beyond the
/// Poisson guard instead of clamping them; used for exploratory evaluations.
inline double probe_loglik(const Family& f, const Vector& y, const Vector& theta) {
  if (f.kind == FamilyKind::poisson && theta.maxCoeff() > kPoissonThetaGuard)
    return -std::numeric_limits<double>::infinity();
  const double v = core_loglik(f, y, theta);
  return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
}

/// Searches t >= 0 along the line from the current factors N in the
/// direction D = N - previous. `theta_terms` holds the polynomial
/// coefficients in t. Returns the best t and its core log-likelihood;
/// t = 0 means "stay".
inline std::pair<double, double> search_extrapolation(const Matrix& theta_terms, const Vector& y,
                                                      const Family& f, double current_core) {
  const auto eval = [&](double t) {
    Vector theta = theta_terms.col(theta_terms.cols() - 1);
    for (Eigen::Index k = theta_terms.cols() - 2; k >= 0; --k) theta = theta * t + theta_terms.col(k);
    return probe_loglik(f, y, theta);
  };
  double best_t = 0.0;
  double best_v = current_core;
  const double ladder[] = {0.25, 0.6, 1.0, 1.5, 2.2, 3.0, 4.0, 5.4, 7.0, 9.0, 12.0, 15.0, 19.0, 24.0, 31.0};
  double lo = 0.0;
  double hi = ladder[0];
  double prev = 0.0;
  for (double t : ladder) {
    const double v = eval(t);
    if (v > best_v) {
      best_v = v;
      best_t = t;
      lo = prev;
      hi = t;
    } else if (best_t == prev) {
      hi = t;
      break;
    }
    prev = t;
  }
  if (best_t == 0.0) return {0.0, current_core};
  // Golden-section refinement on [lo, hi] around the best ladder point.
  constexpr double g = 0.6180339887498949;
  double a = lo;
  double b = hi;
  double c = b - g * (b - a);
  double d = a + g * (b - a);
  double fc = eval(c);
  double fd = eval(d);
  for (int it = 0; it < 24; ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = eval(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = eval(d);
    }
  }
  if (fc > best_v) {
    best_v = fc;
    best_t = c;
  }
  if (fd > best_v) {
    best_v = fd;
    best_t = d;
  }
  return {best_t, best_v};
}

/// Per-component scales that equalize column norms across modes (see
/// balance_columns); scale[d](r) multiplies column r of factor d.
inline std::vector<Vector> balancing_scales(const std::vector<Matrix>& factors) {
  const std::size_t order = factors.size();
  const Eigen::Index r = factors[0].cols();
  std::vector<Vector> scale(order, Vector::Ones(r));
  for (Eigen::Index c = 0; c < r; ++c) {
    double log_prod = 0.0;
    bool zero = false;
    for (std::size_t d = 0; d < order; ++d) {
      const double nrm = factors[d].col(c).norm();
      if (nrm == 0.0) {
        zero = true;
        break;
      }
      log_prod += std::log(nrm);
    }
    if (zero) continue;
    const double target = std::exp(log_prod / static_cast<double>(order));
    for (std::size_t d = 0; d < order; ++d) scale[d][c] = target / factors[d].col(c).norm();
  }
  return scale;
}

struct SingleRun {
  CpTensor estimate;
  double log_likelihood = 0.0;
  int cycles = 0;
  bool converged = false;
  std::vector<double> trace;
  int ridge_events = 0;
  int extrapolations = 0;
  double worst_block_change = 0.0;
};

inline SingleRun run_block_relaxation(const RegressionData& data, const ModeLayouts& layouts,
                                      const FitConfig& cfg, std::uint64_t seed) {
  const Shape& shape = data.shape();
  const std::size_t order = shape.order();
  const std::size_t last = order - 1;
  const auto rank = static_cast<Eigen::Index>(cfg.rank);
  const Vector yv = Eigen::Map<const Vector>(data.responses.data(), static_cast<Eigen::Index>(data.size()));

  std::vector<Matrix> factors;
  Rng rng = make_rng(seed, {0xc0ffee});
  std::normal_distribution<double> init(0.0, cfg.init_scale);
  for (std::size_t d = 0; d < order; ++d) {
    Matrix f(static_cast<Eigen::Index>(shape.dim(d)), rank);
    for (Eigen::Index c = 0; c < f.cols(); ++c)
      for (Eigen::Index r = 0; r < f.rows(); ++r) f(r, c) = init(rng);
    factors.push_back(std::move(f));
  }

  // Constant part of the log-likelihood so the trace is the full objective.
  double normalizer = 0.0;
  for (double v : data.responses) normalizer += log_normalizer(data.family, v);
  const double phi = data.family.dispersion;
  const auto full_ll = [&](double core) { return core / phi + normalizer; };

  SingleRun run;
  // partial = X x_L B_L for the current last factor
  Matrix partial = layouts.contract_last(factors[last]);
  {
    const Vector theta = layouts.theta_from_partial(partial, layouts.kr_before_last(factors));
    run.trace.push_back(full_ll(core_loglik(data.family, yv, theta)));
  }
  double current = run.trace.back();
  if (!std::isfinite(current)) current = -std::numeric_limits<double>::infinity();

  const auto update_block = [&](const Matrix& dt, std::size_t m, double& block_ll) {
    const IrlsResult res = irls_transposed(dt, yv, data.family, factor_to_coefficients(factors[m]),
                                           cfg.irls_tol, cfg.irls_max_iter);
    run.ridge_events += res.ridge_events;
    const double updated = full_ll(res.log_likelihood);
    if (std::isfinite(block_ll)) run.worst_block_change = std::min(run.worst_block_change, updated - block_ll);
    block_ll = updated;
    factors[m] = coefficients_to_factor(res.coefficients, factors[m].rows(), rank);
  };

  for (int cycle = 0; cycle < cfg.max_cycles; ++cycle) {
    const std::vector<Matrix> previous = factors;
    double block_ll = current;
    for (std::size_t m = 0; m < last; ++m) update_block(layouts.design_from_partial(partial, factors, m), m, block_ll);
    update_block(layouts.design_last(factors), last, block_ll);

    bool moved = false;
    if (cfg.extrapolate && cycle > 0 && std::isfinite(block_ll)) {
      std::vector<Matrix> delta(order);
      for (std::size_t d = 0; d < order; ++d) delta[d] = factors[d] - previous[d];
      Matrix both(factors[last].rows(), 2 * rank);
      both << factors[last], delta[last];
      const Matrix partial2 = layouts.contract_last(both);
      const Matrix terms = line_polynomial(layouts, partial2, factors, delta);
      const double core_now = (block_ll - normalizer) * phi;
      const auto [step, core] = search_extrapolation(terms, yv, data.family, core_now);
      partial.resize(partial2.rows(), rank * static_cast<Eigen::Index>(data.size()));
      for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(data.size()); ++i) {
        partial.middleCols(i * rank, rank) = partial2.middleCols(2 * rank * i, rank);
        if (step > 0.0 && full_ll(core) > block_ll)
          partial.middleCols(i * rank, rank) += step * partial2.middleCols(2 * rank * i + rank, rank);
      }
      if (step > 0.0 && full_ll(core) > block_ll) {
        for (std::size_t d = 0; d < order; ++d) factors[d] += step * delta[d];
        block_ll = full_ll(core);
        ++run.extrapolations;
      }
      moved = true;
    }
    if (!moved) partial = layouts.contract_last(factors[last]);

    const std::vector<Vector> scale = balancing_scales(factors);
    for (std::size_t d = 0; d < order; ++d) factors[d] *= scale[d].asDiagonal();
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(data.size()); ++i)
      partial.middleCols(i * rank, rank) *= scale[last].asDiagonal();

    run.trace.push_back(block_ll);
    run.cycles = cycle + 1;
    if (!std::isfinite(block_ll)) break;
    const double change = block_ll - current;
    current = block_ll;
    if (std::abs(change) <= cfg.rel_tol * (std::abs(current) + 1.0)) {
      run.converged = true;
      break;
    }
  }
  run.log_likelihood = current;
  run.estimate = CpTensor(shape, std::move(factors));
  return run;
}

}  // namespace detail

/// Standalone IRLS for a GLM with design `design` (n x p). The returned
/// log-likelihood includes dispersion and normalizer.
inline IrlsResult irls_glm(const Matrix& design, std::span<const double> y, const Family& family,
                           const Vector& start, double tol = 1e-8, int max_iter = 100) {
  if (static_cast<std::size_t>(design.rows()) != y.size())
    throw InputError("design has " + std::to_string(design.rows()) + " rows, responses " +
                     std::to_string(y.size()));
  if (start.size() != design.cols()) throw InputError("start vector length does not match design");
  validate_responses(family, y);
  const Vector yv = Eigen::Map<const Vector>(y.data(), static_cast<Eigen::Index>(y.size()));
  const Matrix dt = design.transpose();
  IrlsResult res = detail::irls_transposed(dt, yv, family, start, tol, max_iter);
  double normalizer = 0.0;
  for (double v : y) normalizer += log_normalizer(family, v);
  res.log_likelihood = res.log_likelihood / family.dispersion + normalizer;
  return res;
}

/// Block relaxation over precomputed layouts of `data.covariates`; lets
/// callers reuse the layouts across ranks.
inline FitResult fit_cp_glm(const RegressionData& data, const detail::ModeLayouts& layouts,
                            const FitConfig& config) {
  config.validate();
  data.validate();
  FitResult best;
  bool have = false;
  constexpr int kAttemptsPerRestart = 3;
  for (int restart = 0; restart < config.n_restarts; ++restart) {
    for (int attempt = 0; attempt < kAttemptsPerRestart; ++attempt) {
      const std::uint64_t seed = derive_seed(config.init_seed, {static_cast<std::uint64_t>(restart),
                                                                static_cast<std::uint64_t>(attempt)});
      detail::SingleRun run = detail::run_block_relaxation(data, layouts, config, seed);
      best.diagnostics.ridge_events += run.ridge_events;
      best.diagnostics.worst_block_change =
          std::min(best.diagnostics.worst_block_change, run.worst_block_change);
      if (!std::isfinite(run.log_likelihood)) {
        ++best.diagnostics.failed_attempts;
        continue;
      }
      ++best.diagnostics.restarts_used;
      if (!have || run.log_likelihood > best.log_likelihood) {
        have = true;
        best.estimate = std::move(run.estimate);
        best.log_likelihood = run.log_likelihood;
        best.cycles_used = run.cycles;
        best.converged = run.converged;
        best.loglik_trace = std::move(run.trace);
        best.diagnostics.best_restart = restart;
      }
      break;
    }
  }
  if (!have)
    throw NumericalError("rank-" + std::to_string(config.rank) + " fit failed: all " +
                         std::to_string(best.diagnostics.failed_attempts) +
                         " attempts produced a non-finite log-likelihood");
  return best;
}

inline FitResult fit_cp_glm(const RegressionData& data, const FitConfig& config) {
  data.validate();
  const detail::ModeLayouts layouts(data.covariates);
  return fit_cp_glm(data, layouts, config);
}

}  // namespace tenma
