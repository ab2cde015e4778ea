#pragma once

// Minimization over the probability simplex of GLM-deviance objectives that
// are linear in the weights through theta(w) = Theta * w:
//
//   f(w) = (2 / phi) * sum_i [ b(theta_i(w)) - t_i * theta_i(w) ] + offset
//
// With t = y and out-of-fold predictors in Theta this is the J-fold CV
// criterion; with t = mu and in-sample predictors (plus the constant offset)
// it is the KL loss. f is convex because theta is linear in w and b is convex.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tenma/errors.hpp"
#include "tenma/family.hpp"
#include "tenma/tensor.hpp"

namespace tenma {

/// Weight vector on the probability simplex.
class WeightVector {
public:
  WeightVector() = default;

  explicit WeightVector(Vector w) : w_(std::move(w)) {
    if (w_.size() == 0) throw InputError("weight vector must be non-empty");
    for (Eigen::Index s = 0; s < w_.size(); ++s)
      if (!(w_[s] >= 0.0 && w_[s] <= 1.0))
        throw InputError("weight " + std::to_string(s + 1) + " = " + std::to_string(w_[s]) +
                         " outside [0,1]");
    if (std::abs(w_.sum() - 1.0) > 1e-12)
      throw InputError("weights sum to " + std::to_string(w_.sum()) + ", not 1");
  }

  /// Rescales a nonnegative vector to sum exactly (to rounding) to 1.
  static WeightVector normalized(Vector w) {
    for (Eigen::Index s = 0; s < w.size(); ++s) w[s] = std::max(w[s], 0.0);
    const double total = w.sum();
    if (!(total > 0)) throw InputError("cannot normalize an all-zero weight vector");
    w /= total;
    return WeightVector(std::move(w));
  }

  static WeightVector vertex(Eigen::Index size, Eigen::Index s) {
    Vector w = Vector::Zero(size);
    w[s] = 1.0;
    return WeightVector(std::move(w));
  }

  static WeightVector uniform(Eigen::Index size) {
    return WeightVector(Vector::Constant(size, 1.0 / static_cast<double>(size)));
  }

  [[nodiscard]] const Vector& values() const noexcept { return w_; }
  [[nodiscard]] Eigen::Index size() const noexcept { return w_.size(); }
  double operator[](Eigen::Index s) const { return w_[s]; }

private:
  Vector w_;
};

/// Euclidean projection onto {w >= 0, sum w = 1} (sort-based).
inline Vector project_to_simplex(const Vector& v) {
  const Eigen::Index n = v.size();
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double tau = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    cumulative += u[static_cast<std::size_t>(k)];
    const double candidate = (cumulative - 1.0) / static_cast<double>(k + 1);
    if (u[static_cast<std::size_t>(k)] - candidate > 0) tau = candidate;
  }
  Vector w = (v.array() - tau).max(0.0).matrix();
  const double total = w.sum();
  if (total > 0) w /= total;
  return w;
}

class SimplexObjective {
public:
  SimplexObjective(Matrix theta_columns, Vector target, Family family, double offset = 0.0)
      : theta_(std::move(theta_columns)), target_(std::move(target)), family_(family), offset_(offset) {
    if (theta_.rows() != target_.size())
      throw InputError("objective: " + std::to_string(theta_.rows()) + " predictor rows vs " +
                       std::to_string(target_.size()) + " targets");
    if (theta_.cols() == 0) throw InputError("objective needs at least one candidate column");
  }

  [[nodiscard]] Eigen::Index dimension() const noexcept { return theta_.cols(); }
  [[nodiscard]] const Matrix& theta_columns() const noexcept { return theta_; }
  [[nodiscard]] const Family& family() const noexcept { return family_; }

  [[nodiscard]] Vector theta(const Vector& w) const { return theta_ * w; }

  [[nodiscard]] double value(const Vector& w) const {
    const Vector th = theta(w);
    double s = 0.0;
    for (Eigen::Index i = 0; i < th.size(); ++i) s += cumulant(family_, th[i]) - target_[i] * th[i];
    return 2.0 / family_.dispersion * s + offset_;
  }

  [[nodiscard]] Vector gradient(const Vector& w) const {
    const Vector th = theta(w);
    Vector r(th.size());
    for (Eigen::Index i = 0; i < th.size(); ++i) r[i] = mean(family_, th[i]) - target_[i];
    return 2.0 / family_.dispersion * (theta_.transpose() * r);
  }

  [[nodiscard]] Matrix hessian(const Vector& w) const {
    const Vector th = theta(w);
    Vector v(th.size());
    for (Eigen::Index i = 0; i < th.size(); ++i) v[i] = variance(family_, th[i]);
    return 2.0 / family_.dispersion * (theta_.transpose() * v.asDiagonal() * theta_);
  }

private:
  Matrix theta_;
  Vector target_;
  Family family_;
  double offset_ = 0.0;
};

struct OptimizerConfig {
  int max_iter = 5000;
  double rel_tol = 1e-10;  // stop when a step lowers f by less than rel_tol * (1 + |f|)
  double armijo = 1e-4;
  int newton_polish_iter = 50;
};

struct OptimizerDiagnostics {
  int iterations = 0;
  int newton_steps = 0;
  int restarts = 0;
  bool hit_iteration_limit = false;
  double best_vertex_value = 0.0;
  double eqma_value = 0.0;
};

struct OptimizerResult {
  WeightVector weights;
  double value = 0.0;
  OptimizerDiagnostics diagnostics;
};

namespace detail {

/// Projected gradient with Armijo backtracking along the projection arc.
inline int projected_gradient(const SimplexObjective& obj, Vector& w, double& f,
                              const OptimizerConfig& cfg, bool& hit_limit) {
  double step = 1.0;
  int it = 0;
  for (; it < cfg.max_iter; ++it) {
    const Vector g = obj.gradient(w);
    bool moved = false;
    Vector next;
    double f_next = f;
    for (int bt = 0; bt < 60; ++bt) {
      next = project_to_simplex(w - step * g);
      const Vector d = next - w;
      if (d.norm() == 0.0) break;
      f_next = obj.value(next);
      if (f_next <= f + cfg.armijo * g.dot(d)) {
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) return it;
    const double decrease = f - f_next;
    w = std::move(next);
    f = f_next;
    if (decrease < cfg.rel_tol * (1.0 + std::abs(f))) return it + 1;
    step *= 2.0;
  }
  hit_limit = true;
  return it;
}

/// Newton steps restricted to the current support face {w_s > 0}, keeping
/// feasibility by truncating the step; accepts only decreases.
inline int newton_on_face(const SimplexObjective& obj, Vector& w, double& f, const OptimizerConfig& cfg) {
  int steps = 0;
  for (int it = 0; it < cfg.newton_polish_iter; ++it) {
    std::vector<Eigen::Index> support;
    for (Eigen::Index s = 0; s < w.size(); ++s)
      if (w[s] > 0.0) support.push_back(s);
    const auto k = static_cast<Eigen::Index>(support.size());
    if (k < 2) break;
    const Vector g = obj.gradient(w);
    const Matrix h = obj.hessian(w);
    Matrix kkt = Matrix::Zero(k + 1, k + 1);
    Vector rhs = Vector::Zero(k + 1);
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index b = 0; b < k; ++b) kkt(a, b) = h(support[a], support[b]);
      kkt(a, k) = 1.0;
      kkt(k, a) = 1.0;
      rhs[a] = -g[support[a]];
    }
    const double scale = kkt.topLeftCorner(k, k).diagonal().cwiseAbs().maxCoeff();
    kkt.topLeftCorner(k, k).diagonal().array() += 1e-14 * std::max(scale, 1e-300);
    const Vector sol = kkt.completeOrthogonalDecomposition().solve(rhs);
    Vector dir = Vector::Zero(w.size());
    for (Eigen::Index a = 0; a < k; ++a) dir[support[a]] = sol[a];
    if (!dir.allFinite() || dir.norm() == 0.0) break;
    double tmax = 1.0;
    for (Eigen::Index s = 0; s < w.size(); ++s)
      if (dir[s] < 0) tmax = std::min(tmax, -w[s] / dir[s]);
    bool accepted = false;
    for (double t = tmax; t > 1e-12; t *= 0.5) {
      Vector cand = w + t * dir;
      for (Eigen::Index s = 0; s < cand.size(); ++s)
        if (cand[s] < 1e-15) cand[s] = 0.0;
      cand /= cand.sum();
      const double fc = obj.value(cand);
      if (fc < f) {
        const double decrease = f - fc;
        w = std::move(cand);
        f = fc;
        accepted = true;
        ++steps;
        if (decrease < cfg.rel_tol * (1.0 + std::abs(f)) * 1e-3) return steps;
        break;
      }
    }
    if (!accepted) break;
  }
  return steps;
}

}  // namespace detail

/// argmin over the simplex, starting from the uniform point. The result is
/// post-checked to be no worse than every vertex and the uniform point.
inline OptimizerResult minimize_on_simplex(const SimplexObjective& obj, const OptimizerConfig& cfg = {}) {
  const Eigen::Index size = obj.dimension();
  OptimizerResult out;
  OptimizerDiagnostics& diag = out.diagnostics;

  Vector w = Vector::Constant(size, 1.0 / static_cast<double>(size));
  double f = obj.value(w);
  diag.eqma_value = f;
  diag.best_vertex_value = std::numeric_limits<double>::infinity();
  Eigen::Index best_vertex = 0;
  for (Eigen::Index s = 0; s < size; ++s) {
    const double v = obj.value(WeightVector::vertex(size, s).values());
    if (v < diag.best_vertex_value) {
      diag.best_vertex_value = v;
      best_vertex = s;
    }
  }
  if (!std::isfinite(f) || !std::isfinite(diag.best_vertex_value))
    throw NumericalError("simplex objective is not finite at the starting points");

  const auto refine = [&](Vector& x, double& fx) {
    for (int round = 0; round < 4; ++round) {
      const double before = fx;
      diag.iterations += detail::projected_gradient(obj, x, fx, cfg, diag.hit_iteration_limit);
      diag.newton_steps += detail::newton_on_face(obj, x, fx, cfg);
      if (!(fx < before - cfg.rel_tol * (1.0 + std::abs(fx)))) break;
    }
  };
  refine(w, f);

  const double slack = 1e-12 * (1.0 + std::abs(f));
  if (f > diag.best_vertex_value + slack) {
    ++diag.restarts;
    Vector v = WeightVector::vertex(size, best_vertex).values();
    double fv = diag.best_vertex_value;
    refine(v, fv);
    if (fv < f) {
      w = std::move(v);
      f = fv;
    }
  }
  if (f > diag.best_vertex_value + slack || f > diag.eqma_value + slack)
    throw NumericalError("weight optimizer failed: criterion " + std::to_string(f) +
                         " exceeds best vertex " + std::to_string(diag.best_vertex_value) +
                         " or uniform point " + std::to_string(diag.eqma_value));
  out.weights = WeightVector::normalized(w);
  out.value = obj.value(out.weights.values());
  return out;
}

}  // namespace tenma
