// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#include "eri/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "eri/errors.hpp"

namespace eri::ad {

const Tensor& Var::value() const { return tape->value(*this); }

namespace {

Tensor as_matrix(Tensor t) {
  if (t.rank() == 1) t.shape = {1, t.shape[0]};
  if (t.rank() != 2) throw ShapeError("tape values must be rank 1 or 2, got " + shape_string(t.shape));
  return t;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape) + " vs " +
                     shape_string(b.shape));
  }
}

Tape& tape_of(Var a) {
  if (a.tape == nullptr) throw ArgumentError("variable is not attached to a tape");
  return *a.tape;
}

// C (m x n) += A (m x k) * B (k x n)
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// dA (m x k) += dC (m x n) * B^T, B is k x n
void gemm_nt(const double* dc, const double* b, double* da, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = dc + i * n;
    double* ai = da + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += gi[j] * bp[j];
      ai[p] += s;
    }
  }
}

// dB (k x n) += A^T * dC, A is m x k
void gemm_tn(const double* a, const double* dc, double* db, std::size_t m, std::size_t k,
             std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* gi = dc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      double* bp = db + p * n;
      for (std::size_t j = 0; j < n; ++j) bp[j] += av * gi[j];
    }
  }
}

double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Tape

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = as_matrix(std::move(value));
  if (!n.value.all_finite()) throw NumericalError("non-finite value in a constant input");
  n.value.grad.reset();
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = "leaf";
  n.value = as_matrix(std::move(value));
  if (!n.value.all_finite()) throw NumericalError("non-finite value in a leaf input");
  n.value.grad.reset();
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

Var Tape::param(Tensor& t) {
  if (auto it = param_nodes_.find(&t); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.op = "param";
  n.value = as_matrix(Tensor(t.shape, t.data));
  if (!n.value.all_finite()) throw NumericalError("non-finite value in a parameter");
  n.needs_grad = true;
  n.param = &t;
  nodes_.push_back(std::move(n));
  param_nodes_[&t] = nodes_.size() - 1;
  return {this, nodes_.size() - 1};
}

Var Tape::push(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn fn) {
  Node n;
  n.op = op;
  n.value = as_matrix(std::move(value));
  if (!n.value.all_finite()) {
    throw NumericalError(std::string("non-finite value produced by op '") + op + "'");
  }
  n.inputs.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (v.tape != this) throw ArgumentError(std::string(op) + ": input belongs to another tape");
    n.inputs.push_back(v.index);
    n.needs_grad = n.needs_grad || nodes_[v.index].needs_grad;
  }
  if (n.needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return {this, nodes_.size() - 1};
}

std::vector<double> Tape::grad(Var v) const {
  const Node& n = nodes_[v.index];
  if (n.grad.empty()) return std::vector<double>(n.value.numel(), 0.0);
  return n.grad;
}

double* Tape::accum(std::size_t node) {
  Node& n = nodes_[node];
  if (!n.needs_grad) return nullptr;
  if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0);
  return n.grad.data();
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ArgumentError("backward: loss belongs to another tape");
  if (nodes_[loss.index].value.numel() != 1) {
    throw ArgumentError("backward: loss must be a scalar, got shape " +
                        shape_string(nodes_[loss.index].value.shape));
  }
  for (auto& n : nodes_) n.grad.clear();
  if (!nodes_[loss.index].needs_grad) return;
  nodes_[loss.index].grad.assign(1, 1.0);
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) {
      Tensor& p = *n.param;
      if (!p.grad) p.grad.emplace(p.numel(), 0.0);
      auto& g = *p.grad;
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += n.grad[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Ops

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.cols() != B.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + shape_string(A.shape) + " * " +
                     shape_string(B.shape));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  Tensor C = Tensor::zeros(m, n);
  gemm_nn(A.data.data(), B.data.data(), C.data.data(), m, k, n);
  const std::size_t ia = a.index, ib = b.index;
  return t.push("matmul", std::move(C), {a, b}, [ia, ib, m, k, n](Tape& tp, std::size_t self) {
    const double* g = tp.out_grad(self).data();
    if (double* da = tp.accum(ia)) gemm_nt(g, tp.value(ib).data.data(), da, m, k, n);
    if (double* db = tp.accum(ib)) gemm_tn(tp.value(ia).data.data(), g, db, m, k, n);
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv[i];
  const std::size_t ia = a.index, ib = b.index;
  return t.push("add", std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const auto& g = tp.out_grad(self);
    if (double* da = tp.accum(ia))
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    if (double* db = tp.accum(ib))
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
  });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv[i];
  const std::size_t ia = a.index, ib = b.index;
  return t.push("sub", std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const auto& g = tp.out_grad(self);
    if (double* da = tp.accum(ia))
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    if (double* db = tp.accum(ib))
      for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
  });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  const auto& bv = b.value().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv[i];
  const std::size_t ia = a.index, ib = b.index;
  return t.push("mul", std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const auto& g = tp.out_grad(self);
    const auto& av = tp.value(ia).data;
    const auto& bv2 = tp.value(ib).data;
    if (double* da = tp.accum(ia))
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv2[i];
    if (double* db = tp.accum(ib))
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
  });
}

Var scale(Var a, double s) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data) v *= s;
  const std::size_t ia = a.index;
  return t.push("scale", std::move(out), {a}, [ia, s](Tape& tp, std::size_t self) {
    const auto& g = tp.out_grad(self);
    if (double* da = tp.accum(ia))
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += s * g[i];
  });
}

Var add_row(Var a, Var bias) {
  Tape& t = tape_of(a);
  const Tensor& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != a.cols()) {
    throw ShapeError("add_row: bias " + shape_string(bv.shape) + " does not match rows of " +
                     shape_string(a.value().shape));
  }
  Tensor out = a.value();
  const std::size_t m = out.rows(), n = out.cols();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.data[i * n + j] += bv.data[j];
  const std::size_t ia = a.index, ib = bias.index;
  return t.push("add_row", std::move(out), {a, bias}, [ia, ib, m, n](Tape& tp, std::size_t self) {
    const auto& g = tp.out_grad(self);
    if (double* da = tp.accum(ia))
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
    if (double* db = tp.accum(ib))
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) db[j] += g[i * n + j];
  });
}

Var sigmoid(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data) v = sigmoid_scalar(v);
  const std::size_t ia = a.index;
  return t.push("sigmoid", std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    const auto& g = tp.out_grad(self);
    const auto& y = tp.value(self).data;
    if (double* da = tp.accum(ia))
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var tanh(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data) v = std::tanh(v);
  const std::size_t ia = a.index;
  return t.push("tanh", std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    const auto& g = tp.out_grad(self);
    const auto& y = tp.value(self).data;
    if (double* da = tp.accum(ia))
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var relu(Var a) {
  Tape& t = tape_of(a);
  Tensor out = a.value();
  for (auto& v : out.data) v = v > 0.0 ? v : 0.0;
  const std::size_t ia = a.index;
  return t.push("relu", std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    const auto& g = tp.out_grad(self);
    const auto& x = tp.value(ia).data;
    if (double* da = tp.accum(ia))
      for (std::size_t i = 0; i < g.size(); ++i)
        if (x[i] > 0.0) da[i] += g[i];
  });
}

Var softmax_rows(Var a) {
  Tape& t = tape_of(a);
  if (a.value().numel() == 0) throw ArgumentError("softmax: empty input");
  Tensor out = a.value();
  const std::size_t m = out.rows(), n = out.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* r = out.data.data() + i * n;
    const double mx = *std::max_element(r, r + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      r[j] = std::exp(r[j] - mx);
      s += r[j];
    }
    for (std::size_t j = 0; j < n; ++j) r[j] /= s;
  }
  const std::size_t ia = a.index;
  return t.push("softmax", std::move(out), {a}, [ia, m, n](Tape& tp, std::size_t self) {
    const auto& g = tp.out_grad(self);
    const auto& y = tp.value(self).data;
    double* da = tp.accum(ia);
    if (!da) return;
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
      for (std::size_t j = 0; j < n; ++j) da[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
    }
  });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  Tape& t = tape_of(x);
  if (!(eps > 0.0)) throw ArgumentError("layer_norm: eps must be positive");
  const Tensor& X = x.value();
  const std::size_t m = X.rows(), d = X.cols();
  if (gamma.value().numel() != d || beta.value().numel() != d) {
    throw ShapeError("layer_norm: gamma/beta must have " + std::to_string(d) + " entries");
  }
  const auto& gv = gamma.value().data;
  const auto& bv = beta.value().data;
  Tensor out = Tensor::zeros(m, d);
  auto xhat = std::make_shared<std::vector<double>>(m * d);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* r = X.data.data() + i * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += r[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (r[j] - mu) * (r[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (r[j] - mu) * inv;
      (*xhat)[i * d + j] = h;
      out.data[i * d + j] = gv[j] * h + bv[j];
    }
  }
  const std::size_t ix = x.index, ig = gamma.index, ib = beta.index;
  return t.push("layer_norm", std::move(out), {x, gamma, beta},
                [ix, ig, ib, m, d, xhat, inv_std](Tape& tp, std::size_t self) {
                  const auto& g = tp.out_grad(self);
                  const auto& gam = tp.value(ig).data;
                  if (double* dg = tp.accum(ig))
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < d; ++j) dg[j] += g[i * d + j] * (*xhat)[i * d + j];
                  if (double* db = tp.accum(ib))
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < d; ++j) db[j] += g[i * d + j];
                  double* dx = tp.accum(ix);
                  if (!dx) return;
                  const double dd = static_cast<double>(d);
                  for (std::size_t i = 0; i < m; ++i) {
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dh = g[i * d + j] * gam[j];
                      mean_dh += dh;
                      mean_dh_h += dh * (*xhat)[i * d + j];
                    }
                    mean_dh /= dd;
                    mean_dh_h /= dd;
                    for (std::size_t j = 0; j < d; ++j) {
                      const double dh = g[i * d + j] * gam[j];
                      dx[i * d + j] +=
                          (*inv_std)[i] * (dh - mean_dh - (*xhat)[i * d + j] * mean_dh_h);
                    }
                  }
                });
}

Var sum(Var a) {
  Tape& t = tape_of(a);
  double s = 0.0;
  for (double v : a.value().data) s += v;
  const std::size_t ia = a.index;
  return t.push("sum", Tensor::matrix(1, 1, {s}), {a}, [ia](Tape& tp, std::size_t self) {
    const double g = tp.out_grad(self)[0];
    if (double* da = tp.accum(ia)) {
      const std::size_t n = tp.value(ia).numel();
      for (std::size_t i = 0; i < n; ++i) da[i] += g;
    }
  });
}

Var l2_loss(Var pred, Var target) {
  Tape& t = tape_of(pred);
  require_same_shape(pred.value(), target.value(), "l2_loss");
  const auto& p = pred.value().data;
  const auto& y = target.value().data;
  const double n = static_cast<double>(p.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - y[i]) * (p[i] - y[i]);
  const std::size_t ip = pred.index, iy = target.index;
  return t.push("l2_loss", Tensor::matrix(1, 1, {s / n}), {pred, target},
                [ip, iy, n](Tape& tp, std::size_t self) {
                  const double g = tp.out_grad(self)[0];
                  const auto& pv = tp.value(ip).data;
                  const auto& yv = tp.value(iy).data;
                  if (double* dp = tp.accum(ip))
                    for (std::size_t i = 0; i < pv.size(); ++i) dp[i] += g * 2.0 * (pv[i] - yv[i]) / n;
                  if (double* dy = tp.accum(iy))
                    for (std::size_t i = 0; i < pv.size(); ++i) dy[i] -= g * 2.0 * (pv[i] - yv[i]) / n;
                });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::size_t m = parts[0].rows();
  std::size_t n = 0;
  std::vector<std::size_t> widths, idx;
  for (const auto& p : parts) {
    if (p.rows() != m) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    idx.push_back(p.index);
    n += p.cols();
  }
  Tensor out = Tensor::zeros(m, n);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(v.data.data() + i * v.cols(), v.cols(), out.data.data() + i * n + off);
    off += v.cols();
  }
  return t.push("concat_cols", std::move(out), parts,
                [idx, widths, m, n](Tape& tp, std::size_t self) {
                  const auto& g = tp.out_grad(self);
                  std::size_t o = 0;
                  for (std::size_t p = 0; p < idx.size(); ++p) {
                    if (double* d = tp.accum(idx[p])) {
                      for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < widths[p]; ++j)
                          d[i * widths[p] + j] += g[i * n + o + j];
                    }
                    o += widths[p];
                  }
                });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ArgumentError("concat_rows: no inputs");
  Tape& t = tape_of(parts[0]);
  const std::size_t n = parts[0].cols();
  std::size_t m = 0;
  std::vector<std::size_t> sizes, idx;
  for (const auto& p : parts) {
    if (p.cols() != n) throw ShapeError("concat_rows: column counts differ");
    sizes.push_back(p.value().numel());
    idx.push_back(p.index);
    m += p.rows();
  }
  std::vector<double> data;
  data.reserve(m * n);
  for (const auto& p : parts) {
    const auto& v = p.value().data;
    data.insert(data.end(), v.begin(), v.end());
  }
  return t.push("concat_rows", Tensor::matrix(m, n, std::move(data)), parts,
                [idx, sizes](Tape& tp, std::size_t self) {
                  const auto& g = tp.out_grad(self);
                  std::size_t o = 0;
                  for (std::size_t p = 0; p < idx.size(); ++p) {
                    if (double* d = tp.accum(idx[p]))
                      for (std::size_t i = 0; i < sizes[p]; ++i) d[i] += g[o + i];
                    o += sizes[p];
                  }
                });
}

Var slice_rows(Var a, std::size_t start, std::size_t count) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  if (count == 0 || start + count > A.rows()) {
    throw ShapeError("slice_rows: rows [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " + shape_string(A.shape));
  }
  const std::size_t n = A.cols();
  std::vector<double> data(A.data.begin() + static_cast<std::ptrdiff_t>(start * n),
                           A.data.begin() + static_cast<std::ptrdiff_t>((start + count) * n));
  const std::size_t ia = a.index;
  return t.push("slice_rows", Tensor::matrix(count, n, std::move(data)), {a},
                [ia, start, count, n](Tape& tp, std::size_t self) {
                  const auto& g = tp.out_grad(self);
                  if (double* d = tp.accum(ia))
                    for (std::size_t i = 0; i < count * n; ++i) d[start * n + i] += g[i];
                });
}

Var gather_rows(Var a, std::vector<std::size_t> index) {
  Tape& t = tape_of(a);
  const Tensor& A = a.value();
  const std::size_t n = A.cols();
  if (index.empty()) throw ArgumentError("gather_rows: empty index");
  Tensor out = Tensor::zeros(index.size(), n);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= A.rows()) throw ShapeError("gather_rows: index out of range");
    std::copy_n(A.data.data() + index[i] * n, n, out.data.data() + i * n);
  }
  const std::size_t ia = a.index;
  return t.push("gather_rows", std::move(out), {a},
                [ia, n, index = std::move(index)](Tape& tp, std::size_t self) {
                  const auto& g = tp.out_grad(self);
                  double* d = tp.accum(ia);
                  if (!d) return;
                  for (std::size_t i = 0; i < index.size(); ++i)
                    for (std::size_t j = 0; j < n; ++j) d[index[i] * n + j] += g[i * n + j];
                });
}

Var dropout(Var a, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ArgumentError("dropout: probability must lie in [0, 1)");
  if (p == 0.0) return a;
  Tape& t = tape_of(a);
  const double keep = 1.0 / (1.0 - p);
  auto mask = std::make_shared<std::vector<double>>(a.value().numel());
  std::bernoulli_distribution drop(p);
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    (*mask)[i] = drop(rng) ? 0.0 : keep;
    out.data[i] *= (*mask)[i];
  }
  const std::size_t ia = a.index;
  return t.push("dropout", std::move(out), {a}, [ia, mask](Tape& tp, std::size_t self) {
    const auto& g = tp.out_grad(self);
    if (double* d = tp.accum(ia))
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*mask)[i];
  });
}

Var gru_cell(Var gx, Var gh, Var h_prev, std::span<const unsigned char> active) {
  Tape& t = tape_of(gx);
  const Tensor& X = gx.value();
  const Tensor& G = gh.value();
  const Tensor& Hp = h_prev.value();
  const std::size_t batch = Hp.rows(), hidden = Hp.cols();
  if (X.rows() != batch || X.cols() != 3 * hidden || G.rows() != batch || G.cols() != 3 * hidden) {
    throw ShapeError("gru_cell: projections " + shape_string(X.shape) + ", " +
                     shape_string(G.shape) + " do not match hidden state " + shape_string(Hp.shape));
  }
  if (active.size() != batch) throw ShapeError("gru_cell: activity flags must have one entry per row");
  // z, r, n per active row, saved for backward
  auto saved = std::make_shared<std::vector<double>>(batch * 3 * hidden, 0.0);
  std::vector<unsigned char> act(active.begin(), active.end());
  Tensor out = Hp;
  for (std::size_t b = 0; b < batch; ++b) {
    if (!act[b]) continue;
    const double* x = X.data.data() + b * 3 * hidden;
    const double* g = G.data.data() + b * 3 * hidden;
    double* s = saved->data() + b * 3 * hidden;
    for (std::size_t j = 0; j < hidden; ++j) {
      const double z = sigmoid_scalar(x[j] + g[j]);
      const double r = sigmoid_scalar(x[hidden + j] + g[hidden + j]);
      const double n = std::tanh(x[2 * hidden + j] + r * g[2 * hidden + j]);
      s[j] = z;
      s[hidden + j] = r;
      s[2 * hidden + j] = n;
      out.data[b * hidden + j] = (1.0 - z) * n + z * Hp.data[b * hidden + j];
    }
  }
  const std::size_t ix = gx.index, ig = gh.index, ih = h_prev.index;
  return t.push(
      "gru_cell", std::move(out), {gx, gh, h_prev},
      [ix, ig, ih, batch, hidden, saved, act = std::move(act)](Tape& tp, std::size_t self) {
        const auto& dh = tp.out_grad(self);
        const auto& hp = tp.value(ih).data;
        const auto& ghv = tp.value(ig).data;
        double* dx = tp.accum(ix);
        double* dg = tp.accum(ig);
        double* dhp = tp.accum(ih);
        for (std::size_t b = 0; b < batch; ++b) {
          if (!act[b]) {
            if (dhp)
              for (std::size_t j = 0; j < hidden; ++j) dhp[b * hidden + j] += dh[b * hidden + j];
            continue;
          }
          const double* s = saved->data() + b * 3 * hidden;
          const std::size_t o3 = b * 3 * hidden;
          for (std::size_t j = 0; j < hidden; ++j) {
            const double z = s[j], r = s[hidden + j], n = s[2 * hidden + j];
            const double g = dh[b * hidden + j];
            const double dn = g * (1.0 - z);
            const double dz = g * (hp[b * hidden + j] - n);
            const double da_n = dn * (1.0 - n * n);
            const double dr = da_n * ghv[o3 + 2 * hidden + j];
            const double da_z = dz * z * (1.0 - z);
            const double da_r = dr * r * (1.0 - r);
            if (dhp) dhp[b * hidden + j] += g * z;
            if (dx) {
              dx[o3 + j] += da_z;
              dx[o3 + hidden + j] += da_r;
              dx[o3 + 2 * hidden + j] += da_n;
            }
            if (dg) {
              dg[o3 + j] += da_z;
              dg[o3 + hidden + j] += da_r;
              dg[o3 + 2 * hidden + j] += da_n * r;
            }
          }
        }
      });
}

Var gru_sequence(Var gx, Var u, std::size_t batch, std::span<const unsigned char> valid) {
  Tape& t = tape_of(gx);
  const Tensor& X = gx.value();
  const Tensor& U = u.value();
  const std::size_t H = U.rows();
  if (U.cols() != 3 * H || X.cols() != 3 * H) {
    throw ShapeError("gru_sequence: projections " + shape_string(X.shape) + " and hidden weights " +
                     shape_string(U.shape) + " are inconsistent");
  }
  if (batch == 0 || X.rows() % batch != 0) throw ShapeError("gru_sequence: rows not divisible by batch");
  const std::size_t T = X.rows() / batch;
  if (valid.size() != batch * T) throw ShapeError("gru_sequence: validity mask size mismatch");
  std::vector<unsigned char> act(valid.begin(), valid.end());
  // per step and row: z, r, n and the hidden projection of the candidate gate
  auto saved = std::make_shared<std::vector<double>>(T * batch * 4 * H, 0.0);
  Tensor out = Tensor::zeros(T * batch, H);
  std::vector<double> h(batch * H, 0.0), gh(batch * 3 * H);
  for (std::size_t s = 0; s < T; ++s) {
    std::fill(gh.begin(), gh.end(), 0.0);
    gemm_nn(h.data(), U.data.data(), gh.data(), batch, H, 3 * H);
    for (std::size_t b = 0; b < batch; ++b) {
      double* hb = h.data() + b * H;
      if (act[b * T + s]) {
        const double* x = X.data.data() + (s * batch + b) * 3 * H;
        const double* g = gh.data() + b * 3 * H;
        double* sv = saved->data() + (s * batch + b) * 4 * H;
        for (std::size_t j = 0; j < H; ++j) {
          const double z = sigmoid_scalar(x[j] + g[j]);
          const double r = sigmoid_scalar(x[H + j] + g[H + j]);
          const double n = std::tanh(x[2 * H + j] + r * g[2 * H + j]);
          sv[j] = z;
          sv[H + j] = r;
          sv[2 * H + j] = n;
          sv[3 * H + j] = g[2 * H + j];
          hb[j] = (1.0 - z) * n + z * hb[j];
        }
      }
      std::copy_n(hb, H, out.data.data() + (s * batch + b) * H);
    }
  }
  const std::size_t ix = gx.index, iu = u.index;
  return t.push(
      "gru_sequence", std::move(out), {gx, u},
      [ix, iu, batch, T, H, saved, act = std::move(act)](Tape& tp, std::size_t self) {
        const auto& g = tp.out_grad(self);
        const auto& hs = tp.value(self).data;
        const auto& Uv = tp.value(iu).data;
        double* dx = tp.accum(ix);
        double* du = tp.accum(iu);
        std::vector<double> dh(batch * H, 0.0), dgh(batch * 3 * H), hprev(batch * H);
        for (std::size_t s = T; s-- > 0;) {
          for (std::size_t i = 0; i < batch * H; ++i) dh[i] += g[s * batch * H + i];
          if (s > 0) {
            std::copy_n(hs.data() + (s - 1) * batch * H, batch * H, hprev.data());
          } else {
            std::fill(hprev.begin(), hprev.end(), 0.0);
          }
          std::fill(dgh.begin(), dgh.end(), 0.0);
          for (std::size_t b = 0; b < batch; ++b) {
            if (!act[b * T + s]) continue;  // dh passes straight to h_{t-1}
            const double* sv = saved->data() + (s * batch + b) * 4 * H;
            double* dgb = dgh.data() + b * 3 * H;
            double* dxb = dx ? dx + (s * batch + b) * 3 * H : nullptr;
            for (std::size_t j = 0; j < H; ++j) {
              const double z = sv[j], r = sv[H + j], n = sv[2 * H + j], ghn = sv[3 * H + j];
              const double gj = dh[b * H + j];
              const double da_n = gj * (1.0 - z) * (1.0 - n * n);
              const double da_z = gj * (hprev[b * H + j] - n) * z * (1.0 - z);
              const double da_r = da_n * ghn * r * (1.0 - r);
              dgb[j] = da_z;
              dgb[H + j] = da_r;
              dgb[2 * H + j] = da_n * r;
              if (dxb) {
                dxb[j] += da_z;
                dxb[H + j] += da_r;
                dxb[2 * H + j] += da_n;
              }
              dh[b * H + j] = gj * z;
            }
          }
          if (du) gemm_tn(hprev.data(), dgh.data(), du, batch, H, 3 * H);
          gemm_nt(dgh.data(), Uv.data(), dh.data(), batch, H, 3 * H);
        }
      });
}

Var masked_attention(Var q, Var k, Var v, std::size_t batch, std::size_t heads,
                     std::span<const unsigned char> key_valid, AttentionProbs* record) {
  Tape& t = tape_of(q);
  const Tensor& Q = q.value();
  const Tensor& K = k.value();
  const Tensor& V = v.value();
  require_same_shape(K, V, "masked_attention");
  if (Q.cols() != K.cols()) throw ShapeError("masked_attention: query and key widths differ");
  if (batch == 0 || K.rows() % batch != 0 || Q.rows() % batch != 0) {
    throw ShapeError("masked_attention: rows not divisible by batch");
  }
  const std::size_t d = Q.cols();
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("masked_attention: model width " + std::to_string(d) +
                      " is not divisible by head count " + std::to_string(heads));
  }
  const std::size_t L = K.rows() / batch, Lq = Q.rows() / batch, dh = d / heads;
  if (Lq != L && Lq != 1) throw ShapeError("masked_attention: query rows must equal key rows or one per sample");
  if (key_valid.size() != batch * L) throw ShapeError("masked_attention: mask size mismatch");
  for (std::size_t b = 0; b < batch; ++b) {
    bool any = false;
    for (std::size_t j = 0; j < L; ++j) any = any || key_valid[b * L + j];
    if (!any) throw ArgumentError("masked_attention: every token of sample " + std::to_string(b) + " is masked");
  }
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  auto probs = std::make_shared<std::vector<double>>(batch * heads * Lq * L, 0.0);
  std::vector<unsigned char> valid(key_valid.begin(), key_valid.end());
  Tensor out = Tensor::zeros(batch * Lq, d);
  std::vector<double> logits(L);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs->data() + (b * heads + h) * Lq * L;
      for (std::size_t i = 0; i < Lq; ++i) {
        const double* qi = Q.data.data() + (b * Lq + i) * d + h * dh;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < L; ++j) {
          if (!valid[b * L + j]) continue;
          const double* kj = K.data.data() + (b * L + j) * d + h * dh;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          logits[j] = s * sc;
          mx = std::max(mx, logits[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          if (!valid[b * L + j]) continue;
          P[i * L + j] = std::exp(logits[j] - mx);
          z += P[i * L + j];
        }
        double* oi = out.data.data() + (b * Lq + i) * d + h * dh;
        for (std::size_t j = 0; j < L; ++j) {
          if (!valid[b * L + j]) continue;
          P[i * L + j] /= z;
          const double w = P[i * L + j];
          const double* vj = V.data.data() + (b * L + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += w * vj[c];
        }
      }
    }
  }
  if (record) {
    record->batch = batch;
    record->heads = heads;
    record->query_len = Lq;
    record->seq_len = L;
    record->probs = *probs;
  }
  const std::size_t iq = q.index, ik = k.index, iv = v.index;
  return t.push(
      "masked_attention", std::move(out), {q, k, v},
      [iq, ik, iv, batch, heads, L, Lq, d, dh, sc, probs, valid = std::move(valid)](
          Tape& tp, std::size_t self) {
        const auto& g = tp.out_grad(self);
        const auto& Qv = tp.value(iq).data;
        const auto& Kv = tp.value(ik).data;
        const auto& Vv = tp.value(iv).data;
        double* dq = tp.accum(iq);
        double* dk = tp.accum(ik);
        double* dv = tp.accum(iv);
        std::vector<double> dP(L);
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const double* P = probs->data() + (b * heads + h) * Lq * L;
            for (std::size_t i = 0; i < Lq; ++i) {
              const double* gi = g.data() + (b * Lq + i) * d + h * dh;
              double dot = 0.0;
              for (std::size_t j = 0; j < L; ++j) {
                if (!valid[b * L + j]) continue;
                const double w = P[i * L + j];
                const double* vj = Vv.data() + (b * L + j) * d + h * dh;
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) s += gi[c] * vj[c];
                dP[j] = s;
                dot += w * s;
                if (dv) {
                  double* dvj = dv + (b * L + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dvj[c] += w * gi[c];
                }
              }
              if (!dq && !dk) continue;
              const double* qi = Qv.data() + (b * Lq + i) * d + h * dh;
              double* dqi = dq ? dq + (b * Lq + i) * d + h * dh : nullptr;
              for (std::size_t j = 0; j < L; ++j) {
                if (!valid[b * L + j]) continue;
                const double ds = P[i * L + j] * (dP[j] - dot) * sc;
                if (ds == 0.0) continue;
                const double* kj = Kv.data() + (b * L + j) * d + h * dh;
                if (dqi)
                  for (std::size_t c = 0; c < dh; ++c) dqi[c] += ds * kj[c];
                if (dk) {
                  double* dkj = dk + (b * L + j) * d + h * dh;
                  for (std::size_t c = 0; c < dh; ++c) dkj[c] += ds * qi[c];
                }
              }
            }
          }
        }
      });
}

Var masked_time_mean(Var x, std::size_t batch, std::span<const unsigned char> valid) {
  Tape& t = tape_of(x);
  const Tensor& X = x.value();
  if (batch == 0 || X.rows() % batch != 0) throw ShapeError("masked_time_mean: rows not divisible by batch");
  const std::size_t steps = X.rows() / batch, d = X.cols();
  if (valid.size() != batch * steps) throw ShapeError("masked_time_mean: mask size mismatch");
  std::vector<double> inv_count(batch, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    std::size_t c = 0;
    for (std::size_t s = 0; s < steps; ++s) c += valid[b * steps + s] ? 1 : 0;
    if (c == 0) throw ArgumentError("masked_time_mean: sample " + std::to_string(b) + " has no valid steps");
    inv_count[b] = 1.0 / static_cast<double>(c);
  }
  std::vector<unsigned char> mask(valid.begin(), valid.end());
  Tensor out = Tensor::zeros(batch, d);
  for (std::size_t s = 0; s < steps; ++s)
    for (std::size_t b = 0; b < batch; ++b) {
      if (!mask[b * steps + s]) continue;
      const double* r = X.data.data() + (s * batch + b) * d;
      for (std::size_t j = 0; j < d; ++j) out.data[b * d + j] += r[j] * inv_count[b];
    }
  const std::size_t ix = x.index;
  return t.push("masked_time_mean", std::move(out), {x},
                [ix, batch, steps, d, inv_count = std::move(inv_count), mask = std::move(mask)](
                    Tape& tp, std::size_t self) {
                  const auto& g = tp.out_grad(self);
                  double* dx = tp.accum(ix);
                  if (!dx) return;
                  for (std::size_t s = 0; s < steps; ++s)
                    for (std::size_t b = 0; b < batch; ++b) {
                      if (!mask[b * steps + s]) continue;
                      for (std::size_t j = 0; j < d; ++j)
                        dx[(s * batch + b) * d + j] += g[b * d + j] * inv_count[b];
                    }
                });
}

}  // namespace eri::ad
