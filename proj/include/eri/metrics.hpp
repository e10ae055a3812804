// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>

namespace eri {

struct PccResult {
  double value = 0.0;
  // Set when either input has zero variance; value is then 0.
  bool degenerate = false;
};

/// Pearson correlation of two equally long series. Throws ArgumentError for
/// fewer than two points, mismatched lengths or non-finite entries.
PccResult pcc(std::span<const double> x, std::span<const double> y);

/// Mean of exactly seven per-emotion correlations.
double mean_pcc(std::span<const double> rhos);

}  // namespace eri
