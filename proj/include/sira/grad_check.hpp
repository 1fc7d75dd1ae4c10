// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "sira/matrix.hpp"

namespace sira {

/// Compares analytic gradients against central differences.
///
/// `loss` recomputes the scalar objective from the current contents of
/// `params`; it must be deterministic (fixed RNG artifacts such as dropout
/// masks and top-k selections). Each entry of every parameter matrix is
/// perturbed by +/-eps in turn and restored afterwards.
///
/// Returns the maximum over all entries of
///   |analytic - numeric| / max(1, |analytic|, |numeric|).
/// Throws std::runtime_error if the loss evaluates to a non-finite value.
double grad_check(const std::function<double()>& loss,
                  const std::vector<Matrix*>& params,
                  const std::vector<const Matrix*>& analytic,
                  double eps = 1e-5);

}  // namespace sira
