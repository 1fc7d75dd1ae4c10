// SPDX-License-Identifier: Apache-2.0
#include "sira/grad_check.hpp"

#include <cmath>
#include <stdexcept>

namespace sira {

double grad_check(const std::function<double()>& loss,
                  const std::vector<Matrix*>& params,
                  const std::vector<const Matrix*>& analytic,
                  double eps) {
  if (params.size() != analytic.size())
    throw std::invalid_argument("grad_check: params and analytic gradients differ in count");
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");

  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& w = *params[p];
    const Matrix& g = *analytic[p];
    if (!w.same_shape(g))
      throw ShapeError("grad_check: parameter/gradient shape mismatch: " + shape_str(w) +
                       " vs " + shape_str(g));
    for (std::size_t i = 0; i < w.data.size(); ++i) {
      const double saved = w.data[i];
      w.data[i] = saved + eps;
      const double up = loss();
      w.data[i] = saved - eps;
      const double down = loss();
      w.data[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw std::runtime_error("grad_check: loss is non-finite under perturbation");
      const double numeric = (up - down) / (2.0 * eps);
      const double a = g.data[i];
      const double rel = std::abs(a - numeric) /
                         std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace sira
