#pragma once

// Catalog of 0/1 signal tensors used by the simulations. Indices below are
// 0-based (row, column[, slice]).

#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/SVD>

#include "tenma/errors.hpp"
#include "tenma/tensor.hpp"

namespace tenma {

/// Bumped whenever any shape below changes geometry.
inline constexpr int kSignalCatalogVersion = 1;

struct SignalSpec {
  std::string name;
  Shape shape;
  /// CP rank of the mask when it is low-rank; empty for the misspecified shapes.
  std::optional<std::size_t> cp_rank;
  std::string description;
};

inline const std::vector<SignalSpec>& signal_catalog() {
  static const std::vector<SignalSpec> catalog{
      {"signal1", Shape{64, 64}, 1, "square, rows/cols 20-43"},
      {"signal2", Shape{64, 64}, 2, "cross, bars of width 8 and length 40 centred at 31.5"},
      {"signal3", Shape{64, 64}, 3, "three rectangles on disjoint row and column ranges"},
      {"signal4", Shape{64, 64}, std::nullopt, "disk, radius 18 about (31.5, 31.5)"},
      {"signal5", Shape{64, 64}, std::nullopt, "triangle, apex (10, 32), base row 54"},
      {"signal6", Shape{64, 64}, std::nullopt, "butterfly, two triangles meeting at the centre"},
      {"signal3d1", Shape{32, 32, 32}, 2, "two cubes [4,13]^3 and [18,27]^3"},
      {"signal3d2", Shape{32, 32, 32}, std::nullopt, "ball, radius 10 about (15.5, 15.5, 15.5)"},
  };
  return catalog;
}

inline const SignalSpec& find_signal(std::string_view name) {
  for (const SignalSpec& s : signal_catalog())
    if (s.name == name) return s;
  std::string known;
  for (const SignalSpec& s : signal_catalog()) known += (known.empty() ? "" : ", ") + s.name;
  throw InputError("unknown signal '" + std::string(name) + "' (known: " + known + ")");
}

namespace detail {

inline bool in_range(std::size_t v, std::size_t lo, std::size_t hi) { return v >= lo && v <= hi; }

inline bool signal2d_member(std::string_view name, std::size_t r, std::size_t c) {
  const double dr = static_cast<double>(r) - 31.5;
  const double dc = static_cast<double>(c) - 31.5;
  if (name == "signal1") return in_range(r, 20, 43) && in_range(c, 20, 43);
  if (name == "signal2")
    return (in_range(r, 28, 35) && in_range(c, 12, 51)) || (in_range(r, 12, 51) && in_range(c, 28, 35));
  if (name == "signal3")
    return (in_range(r, 6, 17) && in_range(c, 8, 21)) || (in_range(r, 24, 39) && in_range(c, 40, 55)) ||
           (in_range(r, 46, 57) && in_range(c, 22, 33));
  if (name == "signal4") return dr * dr + dc * dc <= 18.0 * 18.0;
  if (name == "signal5") {
    if (!in_range(r, 10, 54)) return false;
    return std::abs(static_cast<double>(c) - 32.0) <= 0.5 * static_cast<double>(r - 10);
  }
  if (name == "signal6") return std::abs(dc) <= 24.0 && std::abs(dr) <= 0.8 * std::abs(dc);
  throw InputError("no 2-D rule for signal '" + std::string(name) + "'");
}

inline bool signal3d_member(std::string_view name, std::size_t i, std::size_t j, std::size_t k) {
  if (name == "signal3d1")
    return (in_range(i, 4, 13) && in_range(j, 4, 13) && in_range(k, 4, 13)) ||
           (in_range(i, 18, 27) && in_range(j, 18, 27) && in_range(k, 18, 27));
  if (name == "signal3d2") {
    const double a = static_cast<double>(i) - 15.5, b = static_cast<double>(j) - 15.5,
                 c = static_cast<double>(k) - 15.5;
    return a * a + b * b + c * c <= 100.0;
  }
  throw InputError("no 3-D rule for signal '" + std::string(name) + "'");
}

}  // namespace detail

inline DenseTensor make_signal(const SignalSpec& spec) {
  DenseTensor out(spec.shape);
  const auto& p = spec.shape.dims();
  if (spec.shape.order() == 2) {
    for (std::size_t c = 0; c < p[1]; ++c)
      for (std::size_t r = 0; r < p[0]; ++r)
        out[r + p[0] * c] = detail::signal2d_member(spec.name, r, c) ? 1.0 : 0.0;
  } else if (spec.shape.order() == 3) {
    for (std::size_t k = 0; k < p[2]; ++k)
      for (std::size_t j = 0; j < p[1]; ++j)
        for (std::size_t i = 0; i < p[0]; ++i)
          out[i + p[0] * (j + p[1] * k)] = detail::signal3d_member(spec.name, i, j, k) ? 1.0 : 0.0;
  } else {
    throw InputError("signals are 2-D or 3-D");
  }
  return out;
}

inline DenseTensor make_signal(std::string_view name) { return make_signal(find_signal(name)); }

/// Singular values of a 2-D tensor, descending.
inline Vector singular_values(const DenseTensor& t) {
  if (t.shape().order() != 2) throw InputError("singular values need a 2-D tensor");
  const Eigen::Map<const Matrix> m(t.data(), static_cast<Eigen::Index>(t.shape().dim(0)),
                                   static_cast<Eigen::Index>(t.shape().dim(1)));
  return Eigen::JacobiSVD<Matrix>(m).singularValues();
}

/// Number of singular values above rel_tol * sigma_1.
inline std::size_t numerical_rank(const DenseTensor& t, double rel_tol = 1e-10) {
  const Vector sv = singular_values(t);
  if (sv.size() == 0 || sv[0] == 0.0) return 0;
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > rel_tol * sv[0]) ++k;
  return k;
}

}  // namespace tenma
