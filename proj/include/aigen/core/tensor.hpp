#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "aigen/core/error.hpp"

namespace aigen {

/// Dense row-major array. Every tensor is viewed as a matrix: the last extent
/// is the column count and the product of the leading extents the row count.
template <class T>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<T> data;

  Tensor() = default;

  Tensor(std::size_t rows, std::size_t cols, T fill = T{0})
      : shape{rows, cols}, data(rows * cols, fill) {
    detail::require(rows > 0 && cols > 0, "tensor extents must be positive");
  }

  Tensor(std::vector<std::size_t> extents, std::vector<T> values)
      : shape(std::move(extents)), data(std::move(values)) {
    detail::require(!shape.empty(), "tensor shape must not be empty");
    std::size_t count = 1;
    for (auto e : shape) {
      detail::require(e > 0, "tensor extents must be positive");
      count *= e;
    }
    detail::require(count == data.size(),
                    "tensor data length " + std::to_string(data.size()) +
                        " does not match shape product " + std::to_string(count));
  }

  static Tensor row_vector(std::vector<T> values) {
    const std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  std::size_t cols() const { return shape.empty() ? 0 : shape.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : data.size() / cols(); }

  T& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }

  bool same_shape(const Tensor& other) const {
    return rows() == other.rows() && cols() == other.cols();
  }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

template <class T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(), [](T v) { return std::isfinite(v); });
}

template <class T>
bool all_finite(const Tensor<T>& t) {
  return all_finite(std::span<const T>(t.data));
}

}  // namespace aigen
