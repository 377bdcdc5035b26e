// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bcu/error.hpp"

namespace bcu {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major n-d array backed by an Eigen vector.
template <typename Scalar>
class Tensor {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
  using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)), values_(Vector::Zero(checked_size(shape_))) {}

  Tensor(Shape shape, Vector values) : shape_(std::move(shape)), values_(std::move(values)) {
    if (checked_size(shape_) != values_.size()) {
      throw ConfigError("tensor shape " + shape_string(shape_) + " does not match " +
                        std::to_string(values_.size()) + " values");
    }
  }

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.values_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  Index size() const { return values_.size(); }
  bool empty() const { return shape_.empty(); }

  Vector& values() { return values_; }
  const Vector& values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  Scalar& operator[](Index i) { return values_[i]; }
  Scalar operator[](Index i) const { return values_[i]; }

  /// View as rows x (size/rows), row-major.
  MatrixMap matrix(Index rows) { return MatrixMap(values_.data(), rows, rows ? size() / rows : 0); }
  ConstMatrixMap matrix(Index rows) const {
    return ConstMatrixMap(values_.data(), rows, rows ? size() / rows : 0);
  }

  /// Same values under a new shape of equal element count.
  Tensor reshaped(Shape shape) const { return Tensor(std::move(shape), values_); }

  template <typename To>
  Tensor<To> cast() const {
    return Tensor<To>(shape_, values_.template cast<To>());
  }

  bool all_finite() const { return values_.allFinite(); }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.values_.size() == b.values_.size() &&
           (a.values_.array() == b.values_.array()).all();
  }

 private:
  static Index checked_size(const Shape& shape) {
    for (Index d : shape) {
      if (d < 0) throw ConfigError("negative dimension in shape " + shape_string(shape));
    }
    return shape.empty() ? 0 : shape_size(shape);
  }

  Shape shape_;
  Vector values_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Rows [begin, begin+count) of the leading axis.
template <typename Scalar>
Tensor<Scalar> slice_leading(const Tensor<Scalar>& t, Index begin, Index count) {
  Shape shape = t.shape();
  const Index stride = t.size() / shape.at(0);
  shape[0] = count;
  return Tensor<Scalar>(shape, t.values().segment(begin * stride, count * stride));
}

}  // namespace bcu
