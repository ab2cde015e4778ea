#pragma once

// Dense and CP tensor algebra.
//
// Linearization is first-index-fastest throughout: element (i_1, ..., i_D)
// of a p_1 x ... x p_D tensor lives at flat offset
//   sum_d (i_d - 1) * prod_{d' < d} p_{d'}
// which is also the layout of the TNSR container format.

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tenma/errors.hpp"

namespace tenma {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

class Shape {
public:
  Shape() = default;

  explicit Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
    if (dims_.empty()) throw InputError("shape must have at least one mode");
    total_ = 1;
    for (std::size_t p : dims_) {
      if (p == 0) throw InputError("shape dimensions must be positive: " + to_string());
      if (total_ > std::numeric_limits<std::size_t>::max() / p)
        throw InputError("shape total size overflows: " + to_string());
      total_ *= p;
    }
  }

  Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

  [[nodiscard]] std::size_t order() const noexcept { return dims_.size(); }
  [[nodiscard]] std::size_t dim(std::size_t mode) const { return dims_.at(mode); }
  [[nodiscard]] const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  [[nodiscard]] std::size_t total_size() const noexcept { return total_; }
  [[nodiscard]] bool empty() const noexcept { return dims_.empty(); }

  /// Product of all dims except `mode`.
  [[nodiscard]] std::size_t size_except(std::size_t mode) const { return total_ / dim(mode); }

  [[nodiscard]] std::size_t dim_sum() const noexcept {
    return std::accumulate(dims_.begin(), dims_.end(), std::size_t{0});
  }

  [[nodiscard]] std::string to_string() const {
    std::ostringstream os;
    os << '(';
    for (std::size_t d = 0; d < dims_.size(); ++d) os << (d ? "," : "") << dims_[d];
    os << ')';
    return os.str();
  }

  friend bool operator==(const Shape& a, const Shape& b) { return a.dims_ == b.dims_; }

private:
  std::vector<std::size_t> dims_;
  std::size_t total_ = 0;
};

/// 1-based flat position of a 1-based multi-index.
inline std::size_t vec_index(std::span<const std::size_t> index, const Shape& shape) {
  if (index.size() != shape.order())
    throw InputError("multi-index has " + std::to_string(index.size()) + " entries, shape " +
                     shape.to_string() + " has " + std::to_string(shape.order()) + " modes");
  std::size_t j = 0;
  std::size_t stride = 1;
  for (std::size_t d = 0; d < index.size(); ++d) {
    if (index[d] < 1 || index[d] > shape.dim(d))
      throw InputError("index " + std::to_string(index[d]) + " out of bounds [1," +
                       std::to_string(shape.dim(d)) + "] in mode " + std::to_string(d + 1));
    j += (index[d] - 1) * stride;
    stride *= shape.dim(d);
  }
  return j + 1;
}

inline std::size_t vec_index(std::initializer_list<std::size_t> index, const Shape& shape) {
  return vec_index(std::span<const std::size_t>(index.begin(), index.size()), shape);
}

/// Inverse of vec_index: 1-based flat position to 1-based multi-index.
inline std::vector<std::size_t> multi_index(std::size_t flat, const Shape& shape) {
  if (flat < 1 || flat > shape.total_size())
    throw InputError("flat index " + std::to_string(flat) + " out of bounds for shape " +
                     shape.to_string());
  std::vector<std::size_t> idx(shape.order());
  std::size_t rem = flat - 1;
  for (std::size_t d = 0; d < shape.order(); ++d) {
    idx[d] = rem % shape.dim(d) + 1;
    rem /= shape.dim(d);
  }
  return idx;
}

class DenseTensor {
public:
  DenseTensor() = default;

  explicit DenseTensor(Shape shape) : shape_(std::move(shape)), values_(shape_.total_size(), 0.0) {}

  DenseTensor(Shape shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_.total_size())
      throw InputError("tensor of shape " + shape_.to_string() + " needs " +
                       std::to_string(shape_.total_size()) + " values, got " +
                       std::to_string(values_.size()));
  }

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t size() const noexcept { return values_.size(); }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
  [[nodiscard]] std::span<double> values() noexcept { return values_; }
  [[nodiscard]] const double* data() const noexcept { return values_.data(); }
  [[nodiscard]] double* data() noexcept { return values_.data(); }

  double operator[](std::size_t flat) const { return values_[flat]; }
  double& operator[](std::size_t flat) { return values_[flat]; }

  /// Element access by 1-based multi-index.
  [[nodiscard]] double at(std::initializer_list<std::size_t> index) const {
    return values_[vec_index(index, shape_) - 1];
  }
  double& at(std::initializer_list<std::size_t> index) { return values_[vec_index(index, shape_) - 1]; }
  [[nodiscard]] double at(std::span<const std::size_t> index) const { return values_[vec_index(index, shape_) - 1]; }

  [[nodiscard]] Eigen::Map<const Vector> vec() const {
    return {values_.data(), static_cast<Eigen::Index>(values_.size())};
  }
  [[nodiscard]] Eigen::Map<Vector> vec() {
    return {values_.data(), static_cast<Eigen::Index>(values_.size())};
  }

  friend bool operator==(const DenseTensor& a, const DenseTensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

private:
  Shape shape_;
  std::vector<double> values_;
};

/// B = [[B_1, ..., B_D]]: factor d is p_d x R. Rank 0 is the zero tensor.
class CpTensor {
public:
  CpTensor() = default;

  CpTensor(Shape shape, std::size_t rank) : shape_(std::move(shape)) {
    factors_.reserve(shape_.order());
    for (std::size_t p : shape_.dims())
      factors_.emplace_back(Matrix::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(rank)));
  }

  CpTensor(Shape shape, std::vector<Matrix> factors)
      : shape_(std::move(shape)), factors_(std::move(factors)) {
    if (factors_.size() != shape_.order())
      throw InputError("CP tensor of shape " + shape_.to_string() + " needs " +
                       std::to_string(shape_.order()) + " factors, got " +
                       std::to_string(factors_.size()));
    for (std::size_t d = 0; d < factors_.size(); ++d) {
      if (static_cast<std::size_t>(factors_[d].rows()) != shape_.dim(d))
        throw InputError("factor " + std::to_string(d + 1) + " has " +
                         std::to_string(factors_[d].rows()) + " rows, expected " +
                         std::to_string(shape_.dim(d)));
      if (factors_[d].cols() != factors_[0].cols())
        throw InputError("CP factors disagree on rank");
    }
  }

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t rank() const noexcept {
    return factors_.empty() ? 0 : static_cast<std::size_t>(factors_[0].cols());
  }
  [[nodiscard]] const std::vector<Matrix>& factors() const noexcept { return factors_; }
  [[nodiscard]] const Matrix& factor(std::size_t mode) const { return factors_.at(mode); }
  Matrix& factor(std::size_t mode) { return factors_.at(mode); }

private:
  Shape shape_;
  std::vector<Matrix> factors_;
};

/// Column-wise Kronecker product with the FIRST input's row index varying
/// fastest, i.e. row (i_1, ..., i_K) sits at i_1 + p_1 * (i_2 + p_2 * ...).
/// This matches the column order produced by mode_matricize.
inline Matrix khatri_rao(std::span<const Matrix> mats) {
  if (mats.empty()) throw InputError("khatri_rao needs at least one matrix");
  const Eigen::Index r = mats[0].cols();
  for (const Matrix& m : mats)
    if (m.cols() != r)
      throw InputError("khatri_rao inputs disagree on column count (" + std::to_string(r) + " vs " +
                       std::to_string(m.cols()) + ")");
  Matrix out = mats[0];
  for (std::size_t k = 1; k < mats.size(); ++k) {
    const Matrix& next = mats[k];
    Matrix grown(out.rows() * next.rows(), r);
    for (Eigen::Index c = 0; c < r; ++c)
      for (Eigen::Index j = 0; j < next.rows(); ++j)
        grown.col(c).segment(j * out.rows(), out.rows()) = out.col(c) * next(j, c);
    out = std::move(grown);
  }
  return out;
}

inline Matrix khatri_rao(std::initializer_list<Matrix> mats) {
  return khatri_rao(std::span<const Matrix>(mats.begin(), mats.size()));
}

/// Khatri-Rao of all factors except `mode`, in ascending mode order.
/// For a single-mode tensor this is a 1 x R row of ones.
inline Matrix khatri_rao_except(std::span<const Matrix> factors, std::size_t mode) {
  std::vector<Matrix> rest;
  rest.reserve(factors.size());
  for (std::size_t d = 0; d < factors.size(); ++d)
    if (d != mode) rest.push_back(factors[d]);
  if (rest.empty()) return Matrix::Ones(1, factors.empty() ? 0 : factors[0].cols());
  return khatri_rao(rest);
}

inline DenseTensor cp_to_dense(const CpTensor& t) {
  DenseTensor out(t.shape());
  if (t.rank() == 0) return out;
  const auto& f = t.factors();
  Matrix rest = khatri_rao_except(f, 0);
  Eigen::Map<Matrix> unfolded(out.data(), f[0].rows(), rest.rows());
  unfolded.noalias() = f[0] * rest.transpose();
  return out;
}

inline double inner_product(const DenseTensor& a, const DenseTensor& b) {
  if (!(a.shape() == b.shape()))
    throw InputError("inner product of mismatched shapes " + a.shape().to_string() + " and " +
                     b.shape().to_string());
  return a.vec().dot(b.vec());
}

/// Mode-`mode` unfolding (0-based mode): p_mode rows; the remaining modes
/// index the columns in ascending order, first remaining mode fastest.
inline Matrix mode_matricize(const DenseTensor& t, std::size_t mode) {
  const Shape& s = t.shape();
  if (mode >= s.order())
    throw InputError("mode " + std::to_string(mode) + " out of range for order-" +
                     std::to_string(s.order()) + " tensor");
  const std::size_t below = [&] {
    std::size_t p = 1;
    for (std::size_t d = 0; d < mode; ++d) p *= s.dim(d);
    return p;
  }();
  const std::size_t pm = s.dim(mode);
  const std::size_t above = s.total_size() / (below * pm);
  Matrix out(static_cast<Eigen::Index>(pm), static_cast<Eigen::Index>(below * above));
  const double* v = t.data();
  for (std::size_t hi = 0; hi < above; ++hi)
    for (std::size_t k = 0; k < pm; ++k)
      for (std::size_t lo = 0; lo < below; ++lo)
        out(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(lo + below * hi)) =
            v[lo + below * (k + pm * hi)];
  return out;
}

/// sum_s weights[s] * dense(tensors[s]).
inline DenseTensor axpy_cp(std::span<const double> weights, std::span<const CpTensor> tensors) {
  if (weights.size() != tensors.size() || tensors.empty())
    throw InputError("axpy_cp needs equal, nonzero numbers of weights and tensors");
  DenseTensor out(tensors[0].shape());
  for (std::size_t s = 0; s < tensors.size(); ++s) {
    if (!(tensors[s].shape() == out.shape()))
      throw InputError("axpy_cp shape mismatch: " + tensors[s].shape().to_string() + " vs " +
                       out.shape().to_string());
    if (weights[s] == 0.0 || tensors[s].rank() == 0) continue;
    out.vec() += weights[s] * cp_to_dense(tensors[s]).vec();
  }
  return out;
}

/// Rescale columns so that, for each component, every mode carries the same
/// column norm. The represented tensor is unchanged.
inline void balance_columns(CpTensor& t) {
  const std::size_t order = t.shape().order();
  for (Eigen::Index r = 0; r < static_cast<Eigen::Index>(t.rank()); ++r) {
    double log_prod = 0.0;
    bool zero = false;
    for (std::size_t d = 0; d < order; ++d) {
      const double nrm = t.factor(d).col(r).norm();
      if (nrm == 0.0) {
        zero = true;
        break;
      }
      log_prod += std::log(nrm);
    }
    if (zero) continue;
    const double target = std::exp(log_prod / static_cast<double>(order));
    for (std::size_t d = 0; d < order; ++d) {
      auto col = t.factor(d).col(r);
      col *= target / col.norm();
    }
  }
}

}  // namespace tenma
