// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace eri {

/// Dense row-major array of doubles. Rank 1 tensors behave as a single row
/// (1 x n) wherever a matrix is expected.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::optional<std::vector<double>> grad;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_, std::vector<double> data_);

  static Tensor zeros(std::size_t rows, std::size_t cols);
  static Tensor zeros(std::vector<std::size_t> shape_);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  static Tensor row(std::vector<double> values);

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 0 : shape.back(); }

  double& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  std::span<double> row_span(std::size_t r) { return {data.data() + r * cols(), cols()}; }
  std::span<const double> row_span(std::size_t r) const {
    return {data.data() + r * cols(), cols()};
  }

  bool all_finite() const;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// Named trainable parameters. Insertion order is kept so that iteration,
/// checkpoints and optimizer state are reproducible. References returned by
/// add() stay valid for the lifetime of the store.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    // Decoupled weight decay applies only to entries flagged here.
    bool decay = true;
  };

  Tensor& add(const std::string& name, Tensor value, bool decay = true);
  /// Same as add() but returns the entry position, usable with at().
  std::size_t add_indexed(const std::string& name, Tensor value, bool decay = true);
  Tensor& at(std::size_t i) { return entries_.at(i).tensor; }
  const Tensor& at(std::size_t i) const { return entries_.at(i).tensor; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  void zero_grads();
  std::size_t parameter_count() const;
  std::size_t size() const { return entries_.size(); }

  std::deque<Entry>& entries() { return entries_; }
  const std::deque<Entry>& entries() const { return entries_; }

 private:
  std::deque<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

void fill_xavier_uniform(Tensor& t, std::mt19937_64& rng);
void fill_normal(Tensor& t, double stddev, std::mt19937_64& rng);

}  // namespace eri
