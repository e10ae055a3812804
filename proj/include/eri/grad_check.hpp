// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "eri/autodiff.hpp"
#include "eri/tensor.hpp"

namespace eri {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<param index>[<coordinate>]"
  std::size_t coordinates = 0;
};

/// Compares analytic gradients with central differences.
///
/// `loss` must build a scalar on the supplied tape from the current values of
/// `params`. Each coordinate's error is |a - n| / max(1e-8, |a| + |n|).
GradCheckResult grad_check(const std::function<ad::Var(ad::Tape&)>& loss,
                           const std::vector<Tensor*>& params, double eps = 1e-5);

}  // namespace eri
