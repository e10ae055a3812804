// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "eri/tensor.hpp"

namespace eri {

/// Adam with decoupled weight decay:
///   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + lambda * theta)
/// The decay term only touches ParamStore entries flagged for decay.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.5;
  };

  AdamW() = default;
  explicit AdamW(Options opt) : opt_(opt) {}

  /// Applies one update from the gradients stored on each parameter. Throws
  /// StateError when a parameter has no gradient or the store layout changed.
  void step(ParamStore& params, double lr);

  const Options& options() const { return opt_; }
  std::uint64_t steps() const { return t_; }

  // Moment buffers, one per ParamStore entry (exposed for checkpoints).
  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  void restore(std::uint64_t steps, std::vector<std::vector<double>> m, std::vector<std::vector<double>> v);

 private:
  Options opt_;
  std::uint64_t t_ = 0;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
};

}  // namespace eri
