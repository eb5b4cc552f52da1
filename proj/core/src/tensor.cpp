// Copyright 2026 The spaprune Authors
// SPDX-License-Identifier: Apache-2.0

#include "spa/tensor.h"

#include <cmath>
#include <sstream>

#include "spa/error.h"

namespace spa {

int64_t element_count(std::span<const int64_t> shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw DimensionError("negative extent in shape " + shape_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_string(std::span<const int64_t> shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)), data_(static_cast<size_t>(element_count(shape_)), 0.0f) {}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (element_count(shape_) != static_cast<int64_t>(data_.size())) {
    throw DimensionError("tensor of shape " + shape_string(shape_) + " given " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::filled(Shape shape, float value) {
  Tensor t(std::move(shape));
  std::fill(t.data_.begin(), t.data_.end(), value);
  return t;
}

Tensor Tensor::identity(int64_t n) {
  Tensor t({n, n});
  for (int64_t i = 0; i < n; ++i) t(i, i) = 1.0f;
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (element_count(shape) != size()) {
    throw DimensionError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

Matrix::Matrix(int64_t rows, int64_t cols)
    : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows * cols), 0.0) {
  if (rows < 0 || cols < 0) throw DimensionError("negative matrix extent");
}

Matrix Matrix::identity(int64_t n) {
  Matrix m(n, n);
  for (int64_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_tensor(const Tensor& t) {
  if (t.rank() != 2) throw DimensionError("matrix requires a rank-2 tensor, got " + shape_string(t.shape()));
  Matrix m(t.dim(0), t.dim(1));
  for (int64_t i = 0; i < t.size(); ++i) m.data_[static_cast<size_t>(i)] = t[i];
  return m;
}

Tensor Matrix::to_tensor() const {
  Tensor t({rows_, cols_});
  for (size_t i = 0; i < data_.size(); ++i) t[static_cast<int64_t>(i)] = static_cast<float>(data_[i]);
  check_finite(t.data(), "matrix to tensor conversion");
  return t;
}

void check_finite(std::span<const float> values, const std::string& what) {
  for (float v : values) {
    if (!std::isfinite(v)) throw NumericError(what + ": non-finite value");
  }
}

void check_finite(std::span<const double> values, const std::string& what) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(what + ": non-finite value");
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_string(a.shape()) + " by " +
                         shape_string(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  std::vector<double> row(static_cast<size_t>(n));
  for (int64_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    for (int64_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      for (int64_t j = 0; j < n; ++j) row[static_cast<size_t>(j)] += aip * b(p, j);
    }
    for (int64_t j = 0; j < n; ++j) c(i, j) = static_cast<float>(row[static_cast<size_t>(j)]);
  }
  check_finite(c.data(), "matmul");
  return c;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: cannot multiply " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " by " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
  }
  Matrix c(a.rows(), b.cols());
  for (int64_t i = 0; i < a.rows(); ++i) {
    for (int64_t p = 0; p < a.cols(); ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      for (int64_t j = 0; j < b.cols(); ++j) c(i, j) += aip * b(p, j);
    }
  }
  check_finite(c.data(), "matmul");
  return c;
}

Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose requires rank 2, got " + shape_string(a.shape()));
  Tensor t({a.dim(1), a.dim(0)});
  for (int64_t i = 0; i < a.dim(0); ++i)
    for (int64_t j = 0; j < a.dim(1); ++j) t(j, i) = a(i, j);
  return t;
}

namespace {

void check_gram_operands(int64_t state_rows, int64_t state_cols, const Tensor& x) {
  if (state_rows != state_cols) throw DimensionError("gram state must be square");
  if (x.rank() != 2 || x.dim(0) != state_rows) {
    throw DimensionError("gram_accumulate: batch " + shape_string(x.shape()) +
                         " does not match state dimension " + std::to_string(state_rows));
  }
}

}  // namespace

void gram_accumulate(Matrix& state, const Tensor& x) {
  check_gram_operands(state.rows(), state.cols(), x);
  const int64_t d = x.dim(0), n = x.dim(1);
  for (int64_t i = 0; i < d; ++i) {
    const float* xi = x.data().data() + i * n;
    for (int64_t j = i; j < d; ++j) {
      const float* xj = x.data().data() + j * n;
      double acc = 0.0;
      for (int64_t s = 0; s < n; ++s) acc += static_cast<double>(xi[s]) * xj[s];
      state(i, j) += acc;
    }
  }
  for (int64_t i = 0; i < d; ++i)
    for (int64_t j = 0; j < i; ++j) state(i, j) = state(j, i);
  check_finite(state.data(), "gram_accumulate");
}

Tensor gram_accumulate(const Tensor& state, const Tensor& x) {
  if (state.rank() != 2) throw DimensionError("gram state must be rank 2");
  Matrix m = Matrix::from_tensor(state);
  gram_accumulate(m, x);
  Tensor out = m.to_tensor();
  // f32 rounding of a mirrored f64 matrix is symmetric already; re-mirror so
  // the guarantee does not depend on that.
  for (int64_t i = 0; i < out.dim(0); ++i)
    for (int64_t j = 0; j < i; ++j) out(i, j) = out(j, i);
  return out;
}

Matrix cholesky(const Matrix& h) {
  if (h.rows() != h.cols()) throw DimensionError("cholesky requires a square matrix");
  const int64_t n = h.rows();
  double max_diag = 0.0;
  for (int64_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(h(i, i)));
  // Pivots below this are indistinguishable from rank deficiency in f64.
  const double tol = std::max(max_diag, 1e-300) * 1e-12 * static_cast<double>(std::max<int64_t>(n, 1));
  Matrix l(n, n);
  for (int64_t j = 0; j < n; ++j) {
    double diag = h(j, j);
    for (int64_t k = 0; k < j; ++k) diag -= l(j, k) * l(j, k);
    if (!(diag > tol)) {
      throw SingularMatrixError("matrix is not positive definite (pivot " + std::to_string(j) +
                                " = " + std::to_string(diag) + "); increase dampening lambda");
    }
    const double ljj = std::sqrt(diag);
    l(j, j) = ljj;
    for (int64_t i = j + 1; i < n; ++i) {
      double v = h(i, j);
      for (int64_t k = 0; k < j; ++k) v -= l(i, k) * l(j, k);
      l(i, j) = v / ljj;
    }
  }
  return l;
}

Matrix spd_inverse(const Matrix& h) {
  for (int64_t i = 0; i < h.rows(); ++i)
    for (int64_t j = 0; j < i; ++j)
      if (h(i, j) != h(j, i)) {
        const double scale = std::max(std::abs(h(i, j)), std::abs(h(j, i)));
        if (std::abs(h(i, j) - h(j, i)) > 1e-9 * scale)
          throw DimensionError("spd_inverse: matrix is not symmetric");
      }
  const Matrix l = cholesky(h);
  const int64_t n = h.rows();
  // L⁻¹ by forward substitution, then H⁻¹ = L⁻ᵀ L⁻¹.
  Matrix linv(n, n);
  for (int64_t col = 0; col < n; ++col) {
    for (int64_t i = col; i < n; ++i) {
      double v = (i == col) ? 1.0 : 0.0;
      for (int64_t k = col; k < i; ++k) v -= l(i, k) * linv(k, col);
      linv(i, col) = v / l(i, i);
    }
  }
  Matrix inv(n, n);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = i; j < n; ++j) {
      double acc = 0.0;
      for (int64_t k = j; k < n; ++k) acc += linv(k, i) * linv(k, j);
      inv(i, j) = acc;
      inv(j, i) = acc;
    }
  }
  check_finite(inv.data(), "spd_inverse");
  return inv;
}

Tensor spd_inverse(const Tensor& h) {
  if (h.rank() != 2 || h.dim(0) != h.dim(1)) {
    throw DimensionError("spd_inverse requires a square matrix, got " + shape_string(h.shape()));
  }
  return spd_inverse(Matrix::from_tensor(h)).to_tensor();
}

namespace {

struct AxisLayout {
  int64_t outer = 1;
  int64_t extent = 1;
  int64_t inner = 1;
};

AxisLayout layout_of(const Shape& shape, int64_t axis) {
  if (axis < 0 || axis >= static_cast<int64_t>(shape.size())) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape));
  }
  AxisLayout l;
  for (int64_t i = 0; i < axis; ++i) l.outer *= shape[static_cast<size_t>(i)];
  l.extent = shape[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) l.inner *= shape[i];
  return l;
}

void check_indices(std::span<const int64_t> indices, int64_t extent) {
  for (size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= extent)
      throw DimensionError("slice index " + std::to_string(indices[i]) + " out of range " +
                           std::to_string(extent));
    if (i > 0 && indices[i] <= indices[i - 1])
      throw DimensionError("slice indices must be sorted and unique");
  }
}

}  // namespace

Tensor delete_slices(const Tensor& t, int64_t axis, std::span<const int64_t> indices) {
  const AxisLayout l = layout_of(t.shape(), axis);
  check_indices(indices, l.extent);
  std::vector<bool> drop(static_cast<size_t>(l.extent), false);
  for (int64_t i : indices) drop[static_cast<size_t>(i)] = true;
  Shape shape = t.shape();
  shape[static_cast<size_t>(axis)] -= static_cast<int64_t>(indices.size());
  std::vector<float> out;
  out.reserve(static_cast<size_t>(element_count(shape)));
  for (int64_t o = 0; o < l.outer; ++o)
    for (int64_t e = 0; e < l.extent; ++e) {
      if (drop[static_cast<size_t>(e)]) continue;
      const float* src = t.data().data() + (o * l.extent + e) * l.inner;
      out.insert(out.end(), src, src + l.inner);
    }
  return Tensor(std::move(shape), std::move(out));
}

void zero_slices(Tensor& t, int64_t axis, std::span<const int64_t> indices) {
  const AxisLayout l = layout_of(t.shape(), axis);
  check_indices(indices, l.extent);
  for (int64_t o = 0; o < l.outer; ++o)
    for (int64_t e : indices) {
      float* dst = t.data().data() + (o * l.extent + e) * l.inner;
      std::fill(dst, dst + l.inner, 0.0f);
    }
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  Shape shape = parts.front().shape();
  if (shape.empty()) throw DimensionError("concat requires rank >= 1");
  int64_t rows = 0;
  std::vector<float> values;
  for (const Tensor& p : parts) {
    if (p.rank() != static_cast<int64_t>(shape.size()) ||
        !std::equal(p.shape().begin() + 1, p.shape().end(), shape.begin() + 1)) {
      throw DimensionError("concat: incompatible shapes " + shape_string(shape) + " and " +
                           shape_string(p.shape()));
    }
    rows += p.dim(0);
    values.insert(values.end(), p.data().begin(), p.data().end());
  }
  shape[0] = rows;
  return Tensor(std::move(shape), std::move(values));
}

}  // namespace spa
