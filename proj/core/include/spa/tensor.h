// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace spa {

using Shape = std::vector<int64_t>;

int64_t element_count(std::span<const int64_t> shape);
std::string shape_string(std::span<const int64_t> shape);

/// Dense row-major f32 tensor. The only element type model parameters and
/// activations are allowed to have.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<float> values);

  static Tensor filled(Shape shape, float value);
  static Tensor identity(int64_t n);

  const Shape& shape() const noexcept { return shape_; }
  int64_t rank() const noexcept { return static_cast<int64_t>(shape_.size()); }
  int64_t dim(int64_t axis) const { return shape_.at(static_cast<size_t>(axis)); }
  int64_t size() const noexcept { return static_cast<int64_t>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const float> data() const noexcept { return data_; }
  std::span<float> data() noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // rank-2 element access
  float& operator()(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * shape_[1] + c)]; }
  float operator()(int64_t r, int64_t c) const {
    return data_[static_cast<size_t>(r * shape_[1] + c)];
  }

  /// Same data, new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Rank-2 f64 matrix used where solver numerics need more headroom than f32
/// (Gram matrices, their factorizations and inverses).
class Matrix {
 public:
  Matrix() = default;
  Matrix(int64_t rows, int64_t cols);

  static Matrix identity(int64_t n);
  static Matrix from_tensor(const Tensor& t);
  Tensor to_tensor() const;

  int64_t rows() const noexcept { return rows_; }
  int64_t cols() const noexcept { return cols_; }
  double& operator()(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * cols_ + c)]; }
  double operator()(int64_t r, int64_t c) const {
    return data_[static_cast<size_t>(r * cols_ + c)];
  }
  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  int64_t rows_ = 0;
  int64_t cols_ = 0;
  std::vector<double> data_;
};

// Kernels. All reductions run in a fixed loop order with f64 accumulation so
// repeated runs are bit-identical; every result is checked for NaN/Inf.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

/// state + x·xᵀ, with x laid out features×samples. Mirrored so the result is
/// exactly symmetric.
Tensor gram_accumulate(const Tensor& state, const Tensor& x_batch);
void gram_accumulate(Matrix& state, const Tensor& x_batch);

/// Lower Cholesky factor. Throws SingularMatrixError when a pivot is not
/// safely positive.
Matrix cholesky(const Matrix& h);

/// Inverse of a symmetric positive-definite matrix through its Cholesky
/// factor. A failed factorization means the caller should raise dampening.
Matrix spd_inverse(const Matrix& h);
Tensor spd_inverse(const Tensor& h);

Matrix matmul(const Matrix& a, const Matrix& b);

/// Throws NumericError naming `what` if any value is NaN or infinite.
void check_finite(std::span<const float> values, const std::string& what);
void check_finite(std::span<const double> values, const std::string& what);

/// Copy of `t` without the given (sorted, unique) indices along `axis`.
Tensor delete_slices(const Tensor& t, int64_t axis, std::span<const int64_t> indices);
/// Sets the given indices along `axis` to zero in place.
void zero_slices(Tensor& t, int64_t axis, std::span<const int64_t> indices);
/// Concatenation along axis 0.
Tensor concat_rows(std::span<const Tensor> parts);

}  // namespace spa
