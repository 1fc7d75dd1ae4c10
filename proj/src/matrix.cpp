// SPDX-License-Identifier: Apache-2.0
#include "sira/matrix.hpp"

#include <cmath>

namespace sira {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

Matrix Matrix::col(std::size_t j) const {
  if (j >= cols) throw ShapeError("col: index " + std::to_string(j) + " out of range for " + shape_str(*this));
  Matrix v(rows, 1);
  for (std::size_t i = 0; i < rows; ++i) v.data[i] = data[i * cols + j];
  return v;
}

void Matrix::set_col(std::size_t j, const Matrix& v) {
  if (j >= cols || v.rows != rows || v.cols != 1)
    throw ShapeError("set_col: cannot place " + shape_str(v) + " into column " + std::to_string(j) + " of " + shape_str(*this));
  for (std::size_t i = 0; i < rows; ++i) data[i * cols + j] = v.data[i];
}

void Matrix::add_col(std::size_t j, const Matrix& v, double s) {
  if (j >= cols || v.rows != rows || v.cols != 1)
    throw ShapeError("add_col: cannot add " + shape_str(v) + " to column " + std::to_string(j) + " of " + shape_str(*this));
  for (std::size_t i = 0; i < rows; ++i) data[i * cols + j] += s * v.data[i];
}

Matrix& Matrix::operator+=(const Matrix& o) {
  if (!same_shape(o)) throw ShapeError("add: shapes differ: " + shape_str(*this) + " vs " + shape_str(o));
  for (std::size_t i = 0; i < data.size(); ++i) data[i] += o.data[i];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& o) {
  if (!same_shape(o)) throw ShapeError("sub: shapes differ: " + shape_str(*this) + " vs " + shape_str(o));
  for (std::size_t i = 0; i < data.size(); ++i) data[i] -= o.data[i];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& v : data) v *= s;
  return *this;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a) + " * " + shape_str(b));
  Matrix c(a.rows, b.cols);
  // i-k-j order keeps the inner loop contiguous in both b and c.
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[i * a.cols];
    double* crow = &c.data[i * c.cols];
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = &b.data[k * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) t.data[j * t.cols + i] = m.data[i * m.cols + j];
  return t;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("hadamard: shapes differ: " + shape_str(a) + " vs " + shape_str(b));
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] *= b.data[i];
  return c;
}

Matrix operator+(Matrix a, const Matrix& b) {
  a += b;
  return a;
}

Matrix operator-(Matrix a, const Matrix& b) {
  a -= b;
  return a;
}

Matrix operator*(Matrix a, double s) {
  a *= s;
  return a;
}

double dot(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("dot: shapes differ: " + shape_str(a) + " vs " + shape_str(b));
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

bool all_finite(const Matrix& m) {
  for (double v : m.data)
    if (!std::isfinite(v)) return false;
  return true;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shapes differ: " + shape_str(a) + " vs " + shape_str(b));
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) m = std::max(m, std::fabs(a.data[i] - b.data[i]));
  return m;
}

Matrix hcat(const std::vector<Matrix>& parts) {
  if (parts.empty()) return Matrix();
  std::size_t rows = parts[0].rows;
  std::size_t cols = 0;
  for (const Matrix& p : parts) {
    if (p.rows != rows) throw ShapeError("hcat: row counts differ: " + shape_str(parts[0]) + " vs " + shape_str(p));
    cols += p.cols;
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (const Matrix& p : parts) {
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < p.cols; ++j) out.data[i * cols + off + j] = p.data[i * p.cols + j];
    off += p.cols;
  }
  return out;
}

Matrix col_slice(const Matrix& m, std::size_t begin, std::size_t count) {
  if (begin + count > m.cols)
    throw ShapeError("col_slice: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of bounds for " + shape_str(m));
  Matrix out(m.rows, count);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < count; ++j) out.data[i * count + j] = m.data[i * m.cols + begin + j];
  return out;
}

}  // namespace sira
