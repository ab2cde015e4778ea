#pragma once

// Exponential families under canonical links:
//   Pr(y | theta, phi) = exp{ (y theta - b(theta)) / phi + c(y, phi) }.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tenma/errors.hpp"
#include "tenma/rng.hpp"

namespace tenma {

enum class FamilyKind { gaussian, bernoulli, poisson };

/// Natural parameters above this are clamped inside exp() for the Poisson family.
inline constexpr double kPoissonThetaGuard = 30.0;

/// Number of times the Poisson guard has fired in this process.
inline std::atomic<std::uint64_t>& poisson_clamp_count() {
  static std::atomic<std::uint64_t> count{0};
  return count;
}

struct Family {
  FamilyKind kind = FamilyKind::gaussian;
  double dispersion = 1.0;  // phi; sigma^2 for Gaussian, 1 otherwise

  static Family gaussian(double sigma2 = 1.0) {
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2))
      throw InputError("Gaussian dispersion must be positive and finite");
    return {FamilyKind::gaussian, sigma2};
  }
  static Family bernoulli() { return {FamilyKind::bernoulli, 1.0}; }
  static Family poisson() { return {FamilyKind::poisson, 1.0}; }

  [[nodiscard]] Family with_dispersion(double phi) const {
    if (kind == FamilyKind::gaussian) return gaussian(phi);
    return *this;
  }

  friend bool operator==(const Family&, const Family&) = default;
};

inline std::string_view family_token(FamilyKind kind) {
  switch (kind) {
    case FamilyKind::gaussian: return "gaussian";
    case FamilyKind::bernoulli: return "bernoulli";
    case FamilyKind::poisson: return "poisson";
  }
  return "unknown";
}

inline FamilyKind parse_family_kind(std::string_view token) {
  if (token == "gaussian") return FamilyKind::gaussian;
  if (token == "bernoulli") return FamilyKind::bernoulli;
  if (token == "poisson") return FamilyKind::poisson;
  throw InputError("unknown family '" + std::string(token) + "' (expected gaussian|bernoulli|poisson)");
}

inline Family make_family(FamilyKind kind, double phi = 1.0) {
  switch (kind) {
    case FamilyKind::gaussian: return Family::gaussian(phi);
    case FamilyKind::bernoulli: return Family::bernoulli();
    case FamilyKind::poisson: return Family::poisson();
  }
  throw InputError("unknown family kind");
}

namespace detail {

inline double guarded_exp(double theta) {
  if (theta > kPoissonThetaGuard) {
    poisson_clamp_count().fetch_add(1, std::memory_order_relaxed);
    theta = kPoissonThetaGuard;
  }
  return std::exp(theta);
}

inline double logistic(double theta) {
  if (theta >= 0) return 1.0 / (1.0 + std::exp(-theta));
  const double e = std::exp(theta);
  return e / (1.0 + e);
}

}  // namespace detail

/// b(theta)
inline double cumulant(const Family& f, double theta) {
  switch (f.kind) {
    case FamilyKind::gaussian: return 0.5 * theta * theta;
    case FamilyKind::bernoulli: return std::max(theta, 0.0) + std::log1p(std::exp(-std::abs(theta)));
    case FamilyKind::poisson: return detail::guarded_exp(theta);
  }
  return 0.0;
}

/// b'(theta), the mean.
inline double mean(const Family& f, double theta) {
  switch (f.kind) {
    case FamilyKind::gaussian: return theta;
    case FamilyKind::bernoulli: return detail::logistic(theta);
    case FamilyKind::poisson: return detail::guarded_exp(theta);
  }
  return 0.0;
}

/// b''(theta); the response variance is phi * b''(theta).
inline double variance(const Family& f, double theta) {
  switch (f.kind) {
    case FamilyKind::gaussian: return 1.0;
    case FamilyKind::bernoulli: {
      const double p = detail::logistic(theta);
      return p * (1.0 - p);
    }
    case FamilyKind::poisson: return detail::guarded_exp(theta);
  }
  return 0.0;
}

/// c(y, phi)
inline double log_normalizer(const Family& f, double y) {
  switch (f.kind) {
    case FamilyKind::gaussian:
      return -y * y / (2.0 * f.dispersion) - 0.5 * std::log(2.0 * std::numbers::pi * f.dispersion);
    case FamilyKind::bernoulli: return 0.0;
    case FamilyKind::poisson: return -std::lgamma(y + 1.0);
  }
  return 0.0;
}

/// Throws InputError at the first response outside the family's support.
inline void validate_responses(const Family& f, std::span<const double> y) {
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double v = y[i];
    const auto where = [&] { return " at observation " + std::to_string(i + 1); };
    if (!std::isfinite(v)) throw InputError("non-finite response" + where());
    if (f.kind == FamilyKind::bernoulli && v != 0.0 && v != 1.0)
      throw InputError("Bernoulli response must be 0 or 1, got " + std::to_string(v) + where());
    if (f.kind == FamilyKind::poisson && (v < 0.0 || v != std::floor(v)))
      throw InputError("Poisson response must be a nonnegative integer, got " + std::to_string(v) +
                       where());
  }
}

/// sum_i [y_i theta_i - b(theta_i)] / phi + sum_i c(y_i, phi)
inline double log_likelihood(const Family& f, std::span<const double> y, std::span<const double> theta) {
  if (y.size() != theta.size())
    throw InputError("log_likelihood: " + std::to_string(y.size()) + " responses vs " +
                     std::to_string(theta.size()) + " linear predictors");
  validate_responses(f, y);
  double core = 0.0;
  double norm = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    core += y[i] * theta[i] - cumulant(f, theta[i]);
    norm += log_normalizer(f, y[i]);
  }
  return core / f.dispersion + norm;
}

/// Independent draws with mean b'(theta_i); deterministic in `seed`.
inline std::vector<double> sample(const Family& f, std::span<const double> theta, std::uint64_t seed) {
  Rng rng = make_rng(seed, {0x5a3d1e});
  std::vector<double> y(theta.size());
  switch (f.kind) {
    case FamilyKind::gaussian: {
      std::normal_distribution<double> noise(0.0, std::sqrt(f.dispersion));
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = theta[i] + noise(rng);
      break;
    }
    case FamilyKind::bernoulli: {
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = u(rng) < mean(f, theta[i]) ? 1.0 : 0.0;
      break;
    }
    case FamilyKind::poisson: {
      for (std::size_t i = 0; i < y.size(); ++i) {
        std::poisson_distribution<long long> draw(mean(f, theta[i]));
        y[i] = static_cast<double>(draw(rng));
      }
      break;
    }
  }
  return y;
}

}  // namespace tenma
