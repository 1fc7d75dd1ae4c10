// SPDX-License-Identifier: Apache-2.0
#include "sira/ops.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace sira {

Matrix softmax_columns(const Matrix& m) {
  if (m.rows == 0 || m.cols == 0) throw ShapeError("softmax: empty input " + shape_str(m));
  Matrix out(m.rows, m.cols);
  for (std::size_t j = 0; j < m.cols; ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m.rows; ++i) mx = std::max(mx, m.at(i, j));
    double sum = 0.0;
    for (std::size_t i = 0; i < m.rows; ++i) {
      const double e = std::exp(m.at(i, j) - mx);
      out.at(i, j) = e;
      sum += e;
    }
    for (std::size_t i = 0; i < m.rows; ++i) out.at(i, j) /= sum;
  }
  return out;
}

Matrix softmax_column(const Matrix& v) {
  if (v.cols != 1) throw ShapeError("softmax_column: expected a column, got " + shape_str(v));
  return softmax_columns(v);
}

Matrix softmax_backward_columns(const Matrix& probs, const Matrix& upstream) {
  if (!probs.same_shape(upstream))
    throw ShapeError("softmax_backward: shapes differ: " + shape_str(probs) + " vs " + shape_str(upstream));
  Matrix out(probs.rows, probs.cols);
  for (std::size_t j = 0; j < probs.cols; ++j) {
    double inner = 0.0;
    for (std::size_t i = 0; i < probs.rows; ++i) inner += upstream.at(i, j) * probs.at(i, j);
    for (std::size_t i = 0; i < probs.rows; ++i)
      out.at(i, j) = probs.at(i, j) * (upstream.at(i, j) - inner);
  }
  return out;
}

DropoutResult dropout(const Matrix& v, double rate, RngState& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout: rate must be in [0, 1), got " + std::to_string(rate));
  DropoutResult r;
  if (!training || rate == 0.0) {
    r.value = v;
    r.mask = Matrix(v.rows, v.cols, 1.0);
    return r;
  }
  const double keep_scale = 1.0 / (1.0 - rate);
  r.value = Matrix(v.rows, v.cols);
  r.mask = Matrix(v.rows, v.cols);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    const double m = rng.next_uniform() < rate ? 0.0 : keep_scale;
    r.mask.data[i] = m;
    r.value.data[i] = v.data[i] * m;
  }
  return r;
}

}  // namespace sira
