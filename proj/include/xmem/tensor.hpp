#ifndef XMEM_TENSOR_HPP_
#define XMEM_TENSOR_HPP_

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "xmem/errors.hpp"

namespace xmem {

/**
 * Dense row-major matrix. Every feature vector in the library is a row of
 * one of these; a batch of B embeddings of width d is a B x d Tensor.
 */
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(size_t rows, size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Tensor(size_t rows, size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("Tensor: data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(rows, cols));
    }
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    Tensor t;
    t.rows_ = rows.size();
    t.cols_ = t.rows_ ? rows.begin()->size() : 0;
    t.data_.reserve(t.rows_ * t.cols_);
    for (const auto& r : rows) {
      if (r.size() != t.cols_) throw DimensionError("Tensor::from_rows: ragged rows");
      t.data_.insert(t.data_.end(), r.begin(), r.end());
    }
    return t;
  }

  static Tensor identity(size_t n) {
    Tensor t(n, n);
    for (size_t i = 0; i < n; ++i) t(i, i) = T(1);
    return t;
  }

  size_t rows() const { return rows_; }
  size_t cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(size_t r, size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(size_t r, size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const T> row(size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  std::string shape_str() const { return shape_string(rows_, cols_); }

  bool operator==(const Tensor&) const = default;

  static std::string shape_string(size_t r, size_t c) {
    return "[" + std::to_string(r) + "x" + std::to_string(c) + "]";
  }

 private:
  size_t rows_ = 0;
  size_t cols_ = 0;
  std::vector<T> data_;
};

/// Converts element type; used when moving between run precisions.
template <typename To, typename From>
Tensor<To> tensor_cast(const Tensor<From>& t) {
  std::vector<To> out(t.values().begin(), t.values().end());
  return Tensor<To>(t.rows(), t.cols(), std::move(out));
}

// a[n x k] * b[k x m]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + a.shape_str() + " x " + b.shape_str());
  }
  Tensor<T> out(a.rows(), b.cols());
  for (size_t i = 0; i < a.rows(); ++i) {
    auto orow = out.row(i);
    for (size_t k = 0; k < a.cols(); ++k) {
      const T aik = a(i, k);
      auto brow = b.row(k);
      for (size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

// a^T * b, with a[n x k], b[n x m] -> [k x m]
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: " + a.shape_str() + "^T x " + b.shape_str());
  }
  Tensor<T> out(a.cols(), b.cols());
  for (size_t n = 0; n < a.rows(); ++n) {
    auto arow = a.row(n);
    auto brow = b.row(n);
    for (size_t i = 0; i < a.cols(); ++i) {
      const T ai = arow[i];
      auto orow = out.row(i);
      for (size_t j = 0; j < b.cols(); ++j) orow[j] += ai * brow[j];
    }
  }
  return out;
}

// a * b^T, with a[n x k], b[m x k] -> [n x m]
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + a.shape_str() + " x " + b.shape_str() + "^T");
  }
  Tensor<T> out(a.rows(), b.rows());
  for (size_t i = 0; i < a.rows(); ++i) {
    auto arow = a.row(i);
    for (size_t j = 0; j < b.rows(); ++j) {
      auto brow = b.row(j);
      T acc = T(0);
      for (size_t k = 0; k < a.cols(); ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  return out;
}

template <typename T>
void add_inplace(Tensor<T>& dst, const Tensor<T>& src, T scale = T(1)) {
  if (!dst.same_shape(src)) {
    throw DimensionError("add_inplace: " + dst.shape_str() + " vs " + src.shape_str());
  }
  auto d = dst.values();
  auto s = src.values();
  for (size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

template <typename T>
void scale_inplace(Tensor<T>& t, T s) {
  for (auto& v : t.values()) v *= s;
}

template <typename T>
T dot(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: length " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  T acc = T(0);
  for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

/// sqrt(sum_i (a_i - b_i)^2)
template <typename T>
T euclidean_distance(std::span<const T> a, std::span<const T> b) {
  if (a.size() != b.size()) {
    throw DimensionError("euclidean_distance: length " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  T acc = T(0);
  for (size_t i = 0; i < a.size(); ++i) {
    const T diff = a[i] - b[i];
    acc += diff * diff;
  }
  return std::sqrt(acc);
}

template <typename T>
bool all_finite(std::span<const T> values) {
  for (T v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!all_finite(t.values())) {
    throw NonFiniteError(std::string("non-finite value produced by ") + op);
  }
}

}  // namespace xmem

#endif  // XMEM_TENSOR_HPP_
