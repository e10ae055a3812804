// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#include "eri/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "eri/errors.hpp"

namespace eri {

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
  }
  std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  if (n != data.size()) {
    throw ShapeError("tensor shape " + shape_string(shape) + " does not match " +
                     std::to_string(data.size()) + " elements");
  }
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) {
  return Tensor({rows, cols}, std::vector<double>(rows * cols, 0.0));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape_) {
  std::size_t n = std::accumulate(shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
  return Tensor(std::move(shape_), std::vector<double>(n, 0.0));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::row(std::vector<double> values) {
  std::size_t n = values.size();
  return Tensor({1, n}, std::move(values));
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor& ParamStore::add(const std::string& name, Tensor value, bool decay) {
  if (index_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
  value.requires_grad = true;
  value.grad.reset();
  index_[name] = entries_.size();
  entries_.push_back({name, std::move(value), decay});
  return entries_.back().tensor;
}

std::size_t ParamStore::add_indexed(const std::string& name, Tensor value, bool decay) {
  add(name, std::move(value), decay);
  return entries_.size() - 1;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
  return entries_[it->second].tensor;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ArgumentError("unknown parameter: " + name);
  return entries_[it->second].tensor;
}

bool ParamStore::contains(const std::string& name) const { return index_.count(name) != 0; }

void ParamStore::zero_grads() {
  for (auto& e : entries_) {
    e.tensor.grad.emplace(e.tensor.numel(), 0.0);
  }
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void fill_xavier_uniform(Tensor& t, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(t.rows());
  const double fan_out = static_cast<double>(t.cols());
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.data) v = dist(rng);
}

void fill_normal(Tensor& t, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data) v = dist(rng);
}

}  // namespace eri
