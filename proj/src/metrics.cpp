// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#include "eri/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "eri/errors.hpp"
#include "eri/model.hpp"

namespace eri {

PccResult pcc(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw ArgumentError("pcc: lengths differ (" + std::to_string(x.size()) + " vs " +
                        std::to_string(y.size()) + ")");
  }
  if (x.size() < 2) throw ArgumentError("pcc: need at least two points");
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!std::isfinite(x[i]) || !std::isfinite(y[i])) throw ArgumentError("pcc: non-finite input");
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, true};
  return {std::clamp(sxy / (std::sqrt(sxx) * std::sqrt(syy)), -1.0, 1.0), false};
}

double mean_pcc(std::span<const double> rhos) {
  if (rhos.size() != kNumEmotions) {
    throw ArgumentError("mean_pcc: expected 7 correlations, got " + std::to_string(rhos.size()));
  }
  double s = 0.0;
  for (double r : rhos) s += r;
  return s / static_cast<double>(kNumEmotions);
}

}  // namespace eri
