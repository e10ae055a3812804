// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#include "eri/sequence_layers.hpp"

#include "eri/errors.hpp"

namespace eri::layers {

namespace {

std::size_t xavier(ParamStore& store, const std::string& name, std::size_t rows, std::size_t cols,
                   std::mt19937_64& rng) {
  Tensor t = Tensor::zeros(rows, cols);
  fill_xavier_uniform(t, rng);
  return store.add_indexed(name, std::move(t), /*decay=*/true);
}

std::size_t constant_row(ParamStore& store, const std::string& name, std::size_t n, double v) {
  Tensor t = Tensor::zeros(1, n);
  for (auto& x : t.data) x = v;
  return store.add_indexed(name, std::move(t), /*decay=*/false);
}

}  // namespace

GruParams make_gru(ParamStore& store, const std::string& prefix, std::size_t input_dim,
                   std::size_t hidden, std::size_t num_layers, std::mt19937_64& rng) {
  if (input_dim == 0 || hidden == 0 || num_layers == 0) {
    throw ConfigError("gru: input dim, hidden size and layer count must be positive");
  }
  GruParams gru;
  gru.hidden = hidden;
  for (std::size_t l = 0; l < num_layers; ++l) {
    const std::string p = prefix + ".layer" + std::to_string(l) + ".";
    const std::size_t in = l == 0 ? input_dim : hidden;
    GruLayer layer;
    layer.input_dim = in;
    layer.w_z = xavier(store, p + "w_z", in, hidden, rng);
    layer.w_r = xavier(store, p + "w_r", in, hidden, rng);
    layer.w_n = xavier(store, p + "w_n", in, hidden, rng);
    layer.u_z = xavier(store, p + "u_z", hidden, hidden, rng);
    layer.u_r = xavier(store, p + "u_r", hidden, hidden, rng);
    layer.u_n = xavier(store, p + "u_n", hidden, hidden, rng);
    layer.b_z = constant_row(store, p + "b_z", hidden, 0.0);
    layer.b_r = constant_row(store, p + "b_r", hidden, 0.0);
    layer.b_n = constant_row(store, p + "b_n", hidden, 0.0);
    gru.layers.push_back(layer);
  }
  return gru;
}

EncoderParams make_encoder(ParamStore& store, const std::string& prefix, std::size_t d_model,
                           std::size_t heads, std::size_t num_blocks, std::size_t d_ff,
                           double dropout, std::mt19937_64& rng) {
  if (d_model == 0 || heads == 0 || num_blocks == 0 || d_ff == 0) {
    throw ConfigError("encoder: width, heads, blocks and feed-forward size must be positive");
  }
  if (d_model % heads != 0) {
    throw ConfigError("encoder: model width " + std::to_string(d_model) +
                      " is not divisible by head count " + std::to_string(heads));
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("encoder: dropout must lie in [0, 1)");
  EncoderParams enc;
  enc.d_model = d_model;
  enc.heads = heads;
  enc.d_ff = d_ff;
  enc.dropout = dropout;
  for (std::size_t i = 0; i < num_blocks; ++i) {
    const std::string p = prefix + ".block" + std::to_string(i) + ".";
    EncoderBlock b;
    b.w_q = xavier(store, p + "attn.w_q", d_model, d_model, rng);
    b.w_k = xavier(store, p + "attn.w_k", d_model, d_model, rng);
    b.w_v = xavier(store, p + "attn.w_v", d_model, d_model, rng);
    b.w_o = xavier(store, p + "attn.w_o", d_model, d_model, rng);
    b.ln1_gamma = constant_row(store, p + "ln1.gamma", d_model, 1.0);
    b.ln1_beta = constant_row(store, p + "ln1.beta", d_model, 0.0);
    b.ln2_gamma = constant_row(store, p + "ln2.gamma", d_model, 1.0);
    b.ln2_beta = constant_row(store, p + "ln2.beta", d_model, 0.0);
    b.ff_w1 = xavier(store, p + "ffn.w1", d_model, d_ff, rng);
    b.ff_b1 = constant_row(store, p + "ffn.b1", d_ff, 0.0);
    b.ff_w2 = xavier(store, p + "ffn.w2", d_ff, d_model, rng);
    b.ff_b2 = constant_row(store, p + "ffn.b2", d_model, 0.0);
    enc.blocks.push_back(b);
  }
  Tensor token = Tensor::zeros(1, d_model);
  fill_normal(token, 0.02, rng);
  enc.regression_token = store.add_indexed(prefix + ".reg_token", std::move(token), /*decay=*/false);
  return enc;
}

ad::Var gru_forward(ad::Tape& tape, ParamStore& store, const GruParams& gru, ad::Var seq,
                    std::size_t batch, std::span<const unsigned char> valid) {
  if (gru.layers.empty()) throw ConfigError("gru: no layers");
  if (batch == 0 || seq.rows() % batch != 0) throw ShapeError("gru: rows not divisible by batch");
  const std::size_t steps = seq.rows() / batch;
  if (steps == 0) throw ArgumentError("gru: empty sequence");
  if (seq.cols() != gru.layers[0].input_dim) {
    throw ShapeError("gru: input has " + std::to_string(seq.cols()) + " features, layer 0 expects " +
                     std::to_string(gru.layers[0].input_dim));
  }
  if (valid.size() != batch * steps) throw ShapeError("gru: validity mask size mismatch");
  ad::Var input = seq;
  for (const auto& layer : gru.layers) {
    ad::Var w = ad::concat_cols({tape.param(store.at(layer.w_z)), tape.param(store.at(layer.w_r)),
                                 tape.param(store.at(layer.w_n))});
    ad::Var u = ad::concat_cols({tape.param(store.at(layer.u_z)), tape.param(store.at(layer.u_r)),
                                 tape.param(store.at(layer.u_n))});
    ad::Var bias = ad::concat_cols({tape.param(store.at(layer.b_z)), tape.param(store.at(layer.b_r)),
                                    tape.param(store.at(layer.b_n))});
    ad::Var gx_all = ad::add_row(ad::matmul(input, w), bias);
    input = ad::gru_sequence(gx_all, u, batch, valid);
  }
  return input;
}

Tensor gru_forward(ParamStore& store, const GruParams& gru, const Tensor& seq) {
  ad::Tape tape;
  std::vector<unsigned char> valid(seq.rows(), 1);
  ad::Var out = gru_forward(tape, store, gru, tape.constant(seq), 1, valid);
  return out.value();
}

ad::Var mha_forward(ad::Tape& tape, ParamStore& store, const EncoderParams& enc,
                    const EncoderBlock& block, ad::Var tokens, std::size_t batch,
                    std::span<const unsigned char> key_valid, ad::AttentionProbs* record) {
  ad::Var q = ad::matmul(tokens, tape.param(store.at(block.w_q)));
  ad::Var k = ad::matmul(tokens, tape.param(store.at(block.w_k)));
  ad::Var v = ad::matmul(tokens, tape.param(store.at(block.w_v)));
  ad::Var a = ad::masked_attention(q, k, v, batch, enc.heads, key_valid, record);
  return ad::matmul(a, tape.param(store.at(block.w_o)));
}

ad::Var encoder_forward(ad::Tape& tape, ParamStore& store, const EncoderParams& enc,
                        ad::Var frames, std::size_t batch, std::span<const unsigned char> valid,
                        Mode mode, std::mt19937_64* rng, AttentionRecord* record) {
  if (batch == 0 || frames.rows() % batch != 0) throw ShapeError("encoder: rows not divisible by batch");
  const std::size_t steps = frames.rows() / batch;
  if (frames.cols() != enc.d_model) {
    throw ShapeError("encoder: frames have width " + std::to_string(frames.cols()) + ", expected " +
                     std::to_string(enc.d_model));
  }
  if (valid.size() != batch * steps) throw ShapeError("encoder: validity mask size mismatch");
  const std::size_t L = steps + 1;
  std::vector<unsigned char> key_valid(batch * L, 0);
  std::vector<std::size_t> order(batch * L);
  for (std::size_t b = 0; b < batch; ++b) {
    bool any = false;
    key_valid[b * L] = 1;
    order[b * L] = 0;
    for (std::size_t t = 0; t < steps; ++t) {
      key_valid[b * L + 1 + t] = valid[b * steps + t];
      any = any || valid[b * steps + t];
      order[b * L + 1 + t] = 1 + t * batch + b;
    }
    if (!any) throw ArgumentError("encoder: sample " + std::to_string(b) + " has no valid frames");
  }
  const bool training = mode == Mode::train && enc.dropout > 0.0;
  if (training && rng == nullptr) throw ArgumentError("encoder: training mode needs a random generator");

  ad::Var x = ad::gather_rows(
      ad::concat_rows({tape.param(store.at(enc.regression_token)), frames}), std::move(order));
  if (record) record->blocks.assign(enc.blocks.size(), {});
  std::vector<std::size_t> token0(batch);
  for (std::size_t b = 0; b < batch; ++b) token0[b] = b * L;
  for (std::size_t i = 0; i < enc.blocks.size(); ++i) {
    const auto& blk = enc.blocks[i];
    // Only the regression token leaves the last block, so unless the full
    // attention map is wanted its other rows are never computed.
    const bool last_only = i + 1 == enc.blocks.size() && record == nullptr;
    ad::Var h = ad::layer_norm_rows(x, tape.param(store.at(blk.ln1_gamma)),
                                    tape.param(store.at(blk.ln1_beta)));
    ad::Var att;
    if (last_only) {
      ad::Var q = ad::matmul(ad::gather_rows(h, token0), tape.param(store.at(blk.w_q)));
      ad::Var k = ad::matmul(h, tape.param(store.at(blk.w_k)));
      ad::Var v = ad::matmul(h, tape.param(store.at(blk.w_v)));
      att = ad::matmul(ad::masked_attention(q, k, v, batch, enc.heads, key_valid),
                       tape.param(store.at(blk.w_o)));
      x = ad::gather_rows(x, token0);
    } else {
      att = mha_forward(tape, store, enc, blk, h, batch, key_valid,
                        record ? &record->blocks[i] : nullptr);
    }
    if (training) att = ad::dropout(att, enc.dropout, *rng);
    x = ad::add(x, att);

    ad::Var h2 = ad::layer_norm_rows(x, tape.param(store.at(blk.ln2_gamma)),
                                     tape.param(store.at(blk.ln2_beta)));
    ad::Var f = ad::relu(ad::add_row(ad::matmul(h2, tape.param(store.at(blk.ff_w1))),
                                     tape.param(store.at(blk.ff_b1))));
    f = ad::add_row(ad::matmul(f, tape.param(store.at(blk.ff_w2))), tape.param(store.at(blk.ff_b2)));
    if (training) f = ad::dropout(f, enc.dropout, *rng);
    x = ad::add(x, f);
    if (last_only) return x;
  }
  return ad::gather_rows(x, std::move(token0));
}

std::vector<double> extract_regression_attention(const AttentionRecord& record, std::size_t frames,
                                                 std::size_t sample) {
  if (record.blocks.empty()) throw ArgumentError("attention record is empty");
  const auto& last = record.blocks.back();
  const std::size_t L = last.seq_len;
  if (sample >= last.batch) throw ArgumentError("attention record has no sample " + std::to_string(sample));
  if (frames + 1 > L) throw ArgumentError("attention record holds fewer frames than requested");
  std::vector<double> w(frames, 0.0);
  for (std::size_t h = 0; h < last.heads; ++h) {
    const double* row = last.probs.data() + (sample * last.heads + h) * last.query_len * L;
    for (std::size_t t = 0; t < frames; ++t) w[t] += row[1 + t];
  }
  for (auto& x : w) x /= static_cast<double>(last.heads);
  return w;
}

}  // namespace eri::layers
