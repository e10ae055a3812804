// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#include "eri/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "eri/errors.hpp"

namespace eri {

namespace {

double evaluate(const std::function<ad::Var(ad::Tape&)>& loss) {
  ad::Tape tape;
  ad::Var l = loss(tape);
  if (l.value().numel() != 1) throw ArgumentError("grad_check: loss must be a scalar");
  return l.value().data[0];
}

}  // namespace

GradCheckResult grad_check(const std::function<ad::Var(ad::Tape&)>& loss,
                           const std::vector<Tensor*>& params, double eps) {
  for (Tensor* p : params) p->grad.emplace(p->numel(), 0.0);
  {
    ad::Tape tape;
    ad::Var l = loss(tape);
    tape.backward(l);
  }
  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = *params[pi];
    const std::vector<double> analytic = *p.grad;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double orig = p.data[i];
      p.data[i] = orig + eps;
      const double up = evaluate(loss);
      p.data[i] = orig - eps;
      const double down = evaluate(loss);
      p.data[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) /
                         std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
      ++result.coordinates;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        result.worst = std::to_string(pi) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace eri
