// SPDX-License-Identifier: Apache-2.0
#ifndef NEURALECHO_TENSOR_HPP
#define NEURALECHO_TENSOR_HPP

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <vector>

#include "neuralecho/common.hpp"

namespace neuralecho {

// Dense row-major tensor. Real is float for training and double for the
// gradient-verification mode.
template <typename Real>
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<Real> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, Real fill = Real(0)) : shape(std::move(s)) {
    data.assign(numel_of(shape), fill);
  }

  static std::size_t numel_of(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
  }

  std::size_t numel() const { return data.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  std::size_t rank() const { return shape.size(); }

  Real& operator[](std::size_t i) { return data[i]; }
  const Real& operator[](std::size_t i) const { return data[i]; }

  // 2-D accessors (rows x cols)
  Real& at(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  const Real& at(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  // 3-D accessors
  Real& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  const Real& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  void fill(Real v) { std::fill(data.begin(), data.end(), v); }

  bool finite() const {
    for (Real v : data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i)
      out.data[i] = static_cast<Other>(data[i]);
    return out;
  }
};

template <typename Real>
bool same_shape(const Tensor<Real>& a, const Tensor<Real>& b) {
  return a.shape == b.shape;
}

}  // namespace neuralecho

#endif  // NEURALECHO_TENSOR_HPP
