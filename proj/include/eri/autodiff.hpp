// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

// Reverse-mode automatic differentiation over 2-D tensors.
//
// A Tape records every op as a node holding its forward value, the indices of
// its inputs and a closure that pushes the output gradient back to the inputs.
// Nodes are appended in evaluation order, so the node list is a topological
// order and backward() simply walks it in reverse.

#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "eri/tensor.hpp"

namespace eri::ad {

class Tape;

struct Var {
  Tape* tape = nullptr;
  std::size_t index = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Value with no gradient.
  Var constant(Tensor value);
  /// Free leaf whose gradient can be read with grad() after backward.
  Var leaf(Tensor value);
  /// Leaf bound to a trainable tensor; backward accumulates into t.grad.
  /// Repeated calls with the same tensor return the same node.
  Var param(Tensor& t);

  /// Appends an op node. Throws NumericalError if value holds NaN/Inf.
  Var push(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn fn);

  const Tensor& value(std::size_t node) const { return nodes_[node].value; }
  const Tensor& value(Var v) const { return nodes_[v.index].value; }
  bool needs_grad(std::size_t node) const { return nodes_[node].needs_grad; }
  const std::vector<std::size_t>& inputs(std::size_t node) const { return nodes_[node].inputs; }

  /// Gradient of a node after backward(); zeros if nothing flowed into it.
  std::vector<double> grad(Var v) const;

  /// Upstream gradient of the node currently being differentiated.
  const std::vector<double>& out_grad(std::size_t node) const { return nodes_[node].grad; }
  /// Gradient accumulator of an input, or nullptr when it needs no gradient.
  double* accum(std::size_t node);

  /// Seeds d(loss)/d(loss) = 1 and runs every backward closure in reverse
  /// order. The loss must be a single element.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    const char* op = "";
    Tensor value;
    std::vector<std::size_t> inputs;
    std::vector<double> grad;
    bool needs_grad = false;
    BackwardFn backward;
    Tensor* param = nullptr;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> param_nodes_;
};

// ---------------------------------------------------------------------------
// Primitive ops. Shapes are explicit: the only broadcast is add_row.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// a (m x n) + bias (1 x n) added to every row.
Var add_row(Var a, Var bias);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
/// Row-wise softmax, stabilized by subtracting the row maximum.
Var softmax_rows(Var a);
/// Row-wise layer normalization with learned gain (1 x d) and shift (1 x d).
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);
/// Sum of all entries as a 1 x 1 tensor.
Var sum(Var a);
/// Mean squared difference over all entries, 1 x 1.
Var l2_loss(Var pred, Var target);

Var concat_cols(const std::vector<Var>& parts);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var a, std::size_t start, std::size_t count);
/// Output row i is input row index[i]; repeated indices accumulate in backward.
Var gather_rows(Var a, std::vector<std::size_t> index);

/// Inverted dropout: kept entries are scaled by 1/(1-p).
Var dropout(Var a, double p, std::mt19937_64& rng);

/// One GRU step for a batch.
///   gx: B x 3H input projections (with biases) ordered [z | r | n]
///   gh: B x 3H hidden projections U h_prev, same order
///   h_prev: B x H
/// Rows with active[b] == 0 carry h_prev through unchanged.
Var gru_cell(Var gx, Var gh, Var h_prev, std::span<const unsigned char> active);

/// Whole-sequence GRU layer, equivalent to chaining gru_cell over time from a
/// zero state (gh_t = h_{t-1} u), with backpropagation through time done
/// in one node.
///   gx: (T*B) x 3H time-major input projections with biases
///   u: H x 3H hidden weights [U_z | U_r | U_n]
///   valid: B*T flags indexed b*T + t
/// Returns (T*B) x H hidden states.
Var gru_sequence(Var gx, Var u, std::size_t batch, std::span<const unsigned char> valid);

/// Attention probabilities of one forward call, laid out as
/// probs[((b * heads + h) * query_len + i) * seq_len + j].
struct AttentionProbs {
  std::size_t batch = 0;
  std::size_t heads = 0;
  std::size_t query_len = 0;
  std::size_t seq_len = 0;
  std::vector<double> probs;
};

/// Scaled dot-product attention with per-key validity.
///   k, v: (B*L) x d, sample b occupying rows [b*L, (b+1)*L)
///   q: (B*Lq) x d with Lq == L, or Lq == 1 to attend from the first token of
///      each sample only
///   key_valid: B*L flags; invalid keys receive exactly zero weight.
/// Heads split d into equal contiguous slices. Output is (B*Lq) x d, the
/// per-head results concatenated along columns.
Var masked_attention(Var q, Var k, Var v, std::size_t batch, std::size_t heads,
                     std::span<const unsigned char> key_valid, AttentionProbs* record = nullptr);

/// Mean over valid time steps of a time-major stack.
///   x: (T*B) x d with row t*B + b; valid: B*T flags indexed b*T + t.
/// Returns B x d. Every sample needs at least one valid step.
Var masked_time_mean(Var x, std::size_t batch, std::span<const unsigned char> valid);

}  // namespace eri::ad
