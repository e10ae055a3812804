// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

// Temporal integration layers: a stacked unidirectional GRU followed by a
// pre-norm transformer encoder whose learnable regression token (index 0)
// summarizes a variable number of frames into one fixed-width vector.
//
// Batched sequences are passed time-major: row t*B + b of a (T*B) x D matrix
// holds frame t of sample b. Validity flags are indexed b*T + t. Frames marked
// invalid are skipped by the GRU (the hidden state is carried through) and
// receive zero attention weight, so padding never changes an output.

#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "eri/autodiff.hpp"
#include "eri/tensor.hpp"

namespace eri::layers {

enum class Mode { train, infer };

// Parameter handles are positions in a ParamStore, so a layer description
// stays valid when the store holding it is copied.
struct GruLayer {
  std::size_t w_z, w_r, w_n;  // input -> hidden
  std::size_t u_z, u_r, u_n;  // hidden -> hidden
  std::size_t b_z, b_r, b_n;
  std::size_t input_dim = 0;
};

struct GruParams {
  std::vector<GruLayer> layers;
  std::size_t hidden = 0;
};

struct EncoderBlock {
  std::size_t w_q, w_k, w_v, w_o;
  std::size_t ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
  std::size_t ff_w1, ff_b1, ff_w2, ff_b2;
};

struct EncoderParams {
  std::vector<EncoderBlock> blocks;
  std::size_t regression_token = 0;
  std::size_t d_model = 0;
  std::size_t heads = 0;
  std::size_t d_ff = 0;
  double dropout = 0.0;
};

/// Attention probabilities of every block of one encoder pass.
struct AttentionRecord {
  std::vector<ad::AttentionProbs> blocks;
};

/// Registers "<prefix>.layer<l>.{w_z,...,b_n}" with Xavier-uniform weights and
/// zero biases.
GruParams make_gru(ParamStore& store, const std::string& prefix, std::size_t input_dim,
                   std::size_t hidden, std::size_t num_layers, std::mt19937_64& rng);

/// Registers "<prefix>.block<i>.*" and "<prefix>.reg_token". The regression
/// token is drawn from N(0, 0.02^2); layer-norm gains start at one.
EncoderParams make_encoder(ParamStore& store, const std::string& prefix, std::size_t d_model,
                           std::size_t heads, std::size_t num_blocks, std::size_t d_ff,
                           double dropout, std::mt19937_64& rng);

/// Runs every GRU layer over a time-major batch from a zero initial state and
/// returns the last layer's hidden sequence, (T*B) x hidden.
ad::Var gru_forward(ad::Tape& tape, ParamStore& store, const GruParams& gru, ad::Var seq,
                    std::size_t batch, std::span<const unsigned char> valid);

/// Single-sequence convenience: seq is T x D, all frames valid.
Tensor gru_forward(ParamStore& store, const GruParams& gru, const Tensor& seq);

/// Multi-head self-attention sub-layer of one block (no norm, no residual):
/// concat_h(softmax(Q_h K_h^T / sqrt(d/heads)) V_h) W_o.
/// tokens is (B*L) x d in sample-major order; key_valid has B*L flags.
ad::Var mha_forward(ad::Tape& tape, ParamStore& store, const EncoderParams& enc,
                    const EncoderBlock& block, ad::Var tokens, std::size_t batch,
                    std::span<const unsigned char> key_valid, ad::AttentionProbs* record);

/// Prepends the regression token, applies every block
///   x <- x + Dropout(MHA(LN(x)));  x <- x + Dropout(FFN(LN(x)))
/// and returns the final regression-token rows, B x d_model.
/// Throws ArgumentError when a sample has no valid frame.
ad::Var encoder_forward(ad::Tape& tape, ParamStore& store, const EncoderParams& enc,
                        ad::Var frames, std::size_t batch, std::span<const unsigned char> valid,
                        Mode mode, std::mt19937_64* rng, AttentionRecord* record);

/// Final-block attention from the regression token to frames 0..T-1 of one
/// sample, averaged over heads. Token 0's self weight is dropped and the
/// remainder is not renormalized.
std::vector<double> extract_regression_attention(const AttentionRecord& record, std::size_t frames,
                                                 std::size_t sample = 0);

}  // namespace eri::layers
