#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "lsas/errors.hpp"

namespace lsas {

/// Dense row-major tensor. Activations use NCHW, matrices use (rows, cols),
/// channel vectors use (C).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::vector<int> shape, T fill = T(0)) : shape_(std::move(shape)) {
    data_.assign(element_count(shape_), fill);
  }
  Tensor(std::vector<int> shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != element_count(shape_)) {
      throw InvalidArgument("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                            shape_string(shape_));
    }
  }

  [[nodiscard]] const std::vector<int>& shape() const noexcept { return shape_; }
  [[nodiscard]] int rank() const noexcept { return static_cast<int>(shape_.size()); }
  [[nodiscard]] int dim(int axis) const { return shape_.at(static_cast<std::size_t>(axis)); }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] T* data() noexcept { return data_.data(); }
  [[nodiscard]] const T* data() const noexcept { return data_.data(); }
  [[nodiscard]] std::span<T> values() noexcept { return data_; }
  [[nodiscard]] std::span<const T> values() const noexcept { return data_; }
  [[nodiscard]] std::vector<T>& storage() noexcept { return data_; }
  [[nodiscard]] const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // NCHW accessors; valid only for rank-4 tensors.
  T& at(int n, int c, int h, int w) noexcept { return data_[offset(n, c, h, w)]; }
  const T& at(int n, int c, int h, int w) const noexcept { return data_[offset(n, c, h, w)]; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }
  void reshape(std::vector<int> shape) {
    if (element_count(shape) != data_.size()) {
      throw InvalidArgument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
  }

  [[nodiscard]] bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

  static std::size_t element_count(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
      if (d < 0) throw InvalidArgument("negative tensor extent in " + shape_string(shape));
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

 private:
  [[nodiscard]] std::size_t offset(int n, int c, int h, int w) const noexcept {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

/// Per-sample activation (C, H, W).
template <class T>
using FeatureMap = Tensor<T>;

template <class T>
Tensor<T> zeros_like(const Tensor<T>& t) {
  return Tensor<T>(t.shape());
}

template <class T>
void require_rank(const Tensor<T>& t, int rank, const char* what) {
  if (t.rank() != rank) {
    throw InvalidArgument(std::string(what) + ": expected rank " + std::to_string(rank) + " tensor, got " +
                          shape_string(t.shape()));
  }
}

/// Casts element type (float <-> double), keeping the shape.
template <class To, class From>
Tensor<To> tensor_cast(const Tensor<From>& in) {
  std::vector<To> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<To>(in[i]);
  return Tensor<To>(in.shape(), std::move(out));
}

}  // namespace lsas
