// Copyright 2026 The fedacc Authors
// SPDX-License-Identifier: Apache-2.0

#include "fedacc/numerics/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

namespace fedacc {

std::size_t NumElements(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string ShapeToString(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void RequireSameShape(const Shape& a, const Shape& b, std::string_view what) {
  if (a != b) {
    throw Error(ErrorKind::kShape, std::string(what) + ": shape mismatch " +
                                       ShapeToString(a) + " vs " +
                                       ShapeToString(b));
  }
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (NumElements(shape_) != data_.size()) {
    throw Error(ErrorKind::kShape,
                "tensor data length " + std::to_string(data_.size()) +
                    " does not match shape " + ShapeToString(shape_));
  }
}

template <typename T>
void Tensor<T>::Fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
void Tensor<T>::Reshape(Shape shape) {
  if (NumElements(shape) != data_.size()) {
    throw Error(ErrorKind::kShape, "cannot reshape " + ShapeToString(shape_) +
                                       " to " + ShapeToString(shape));
  }
  shape_ = std::move(shape);
}

template <typename T>
bool Tensor<T>::AllFinite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](T v) { return std::isfinite(v); });
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace fedacc
