// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cassert>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace sira {

/// Thrown when an operation receives operands of incompatible shape.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// Dense 2-D array of doubles, row-major. The only numeric carrier in the
/// project: activations, weights and gradients are all plain matrices.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }

  std::size_t size() const { return rows * cols; }
  bool empty() const { return size() == 0; }

  double& at(std::size_t i, std::size_t j) {
    assert(i < rows && j < cols);
    return data[i * cols + j];
  }
  double at(std::size_t i, std::size_t j) const {
    assert(i < rows && j < cols);
    return data[i * cols + j];
  }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }

  /// Copy of column j as a rows x 1 matrix.
  Matrix col(std::size_t j) const;
  void set_col(std::size_t j, const Matrix& v);
  /// column j += s * v
  void add_col(std::size_t j, const Matrix& v, double s = 1.0);

  Matrix& operator+=(const Matrix& o);
  Matrix& operator-=(const Matrix& o);
  Matrix& operator*=(double s);
};

std::string shape_str(const Matrix& m);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& m);
Matrix hadamard(const Matrix& a, const Matrix& b);
Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(Matrix a, double s);

/// Sum of the elementwise product; both shapes must match.
double dot(const Matrix& a, const Matrix& b);

bool all_finite(const Matrix& m);
double max_abs_diff(const Matrix& a, const Matrix& b);

/// Columns of several matrices stacked left to right (all must share rows).
Matrix hcat(const std::vector<Matrix>& parts);
/// Copy of the column range [begin, begin+count).
Matrix col_slice(const Matrix& m, std::size_t begin, std::size_t count);

}  // namespace sira
