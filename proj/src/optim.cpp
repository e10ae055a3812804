// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#include "eri/optim.hpp"

#include <cmath>
#include <string>

#include "eri/errors.hpp"

namespace eri {

void AdamW::step(ParamStore& params, double lr) {
  auto& entries = params.entries();
  if (m_.empty()) {
    for (const auto& e : entries) {
      m_.emplace_back(e.tensor.numel(), 0.0);
      v_.emplace_back(e.tensor.numel(), 0.0);
    }
  }
  if (m_.size() != entries.size()) throw StateError("adamw: parameter store layout changed since the first step");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    if (!e.tensor.grad) throw StateError("adamw: parameter '" + e.name + "' has no gradient");
    if (m_[i].size() != e.tensor.numel()) throw StateError("adamw: parameter '" + e.name + "' changed size");
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& p = entries[i].tensor;
    const double lambda = entries[i].decay ? opt_.weight_decay : 0.0;
    const auto& g = *p.grad;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g[j];
      v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g[j] * g[j];
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      p.data[j] -= lr * (mh / (std::sqrt(vh) + opt_.eps) + lambda * p.data[j]);
    }
  }
}

void AdamW::restore(std::uint64_t steps, std::vector<std::vector<double>> m,
                    std::vector<std::vector<double>> v) {
  if (m.size() != v.size()) throw StateError("adamw: moment buffers differ in count");
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace eri
