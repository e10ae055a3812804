// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

// Dual-stream reaction-intensity network. Each stream (video, audio) runs a
// GRU stack and a transformer encoder with its own regression token; the
// token outputs are concatenated and mapped to seven intensities by a linear
// layer and a logistic sigmoid.

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "eri/autodiff.hpp"
#include "eri/feature_matrix.hpp"
#include "eri/sequence_layers.hpp"
#include "eri/tensor.hpp"

namespace eri {

inline constexpr std::size_t kNumEmotions = 7;
inline constexpr std::array<std::string_view, kNumEmotions> kEmotionNames = {
    "Adoration", "Amusement", "Anxiety", "Disgust", "Empathic Pain", "Fear", "Surprise"};

/// How a stream turns its GRU output sequence into one vector.
enum class Pooling {
  regression_token,  // transformer encoder, regression-token output
  mean,              // masked temporal mean of the GRU outputs (baseline)
};

std::string_view to_string(Pooling p);
Pooling parse_pooling(std::string_view s);

struct ModelConfig {
  // A zero width disables that stream.
  std::size_t visual_dim = 546;
  std::size_t audio_dim = 1024;
  std::size_t gru_layers = 2;
  std::size_t hidden = 256;
  std::size_t encoder_blocks = 4;
  std::size_t heads = 4;
  std::size_t ff_multiplier = 4;
  double dropout = 0.2;
  std::size_t output_dim = kNumEmotions;
  std::uint64_t seed = 0;
  Pooling pooling = Pooling::regression_token;

  /// Throws ConfigError on non-positive sizes or hidden % heads != 0.
  void validate() const;
  std::size_t stream_count() const { return (visual_dim > 0 ? 1 : 0) + (audio_dim > 0 ? 1 : 0); }
};

/// Time-major padded batch for one stream.
struct StreamBatch {
  std::size_t batch = 0;
  std::size_t steps = 0;
  Tensor data;                       // (steps*batch) x dim, row t*batch + b
  std::vector<unsigned char> valid;  // b*steps + t
};

/// Pads every sequence to the longest one; padded frames are marked invalid.
StreamBatch make_stream_batch(std::span<const FeatureMatrix* const> sequences);

struct ModelInput {
  const FeatureMatrix* video = nullptr;
  const FeatureMatrix* audio = nullptr;
};

struct ModelBatch {
  std::size_t size = 0;
  std::optional<StreamBatch> video;
  std::optional<StreamBatch> audio;
};

struct ForwardRecords {
  layers::AttentionRecord video;
  layers::AttentionRecord audio;
};

class EriModel {
 public:
  /// Deterministic in config.seed: Xavier-uniform weights, zero biases,
  /// regression tokens from N(0, 0.02^2).
  explicit EriModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  /// Assembles a batch for this model's enabled streams. Throws ArgumentError
  /// when an enabled stream is missing or has no frames, ShapeError on a
  /// feature-width mismatch.
  ModelBatch make_batch(std::span<const ModelInput> inputs) const;

  /// B x output_dim sigmoid outputs.
  ad::Var forward(ad::Tape& tape, const ModelBatch& batch, layers::Mode mode,
                  std::mt19937_64* rng = nullptr, ForwardRecords* records = nullptr);

  /// Inference-mode predictions, one vector per input.
  std::vector<std::vector<double>> predict(std::span<const ModelInput> inputs,
                                           ForwardRecords* records = nullptr);

 private:
  struct Stream {
    layers::GruParams gru;
    layers::EncoderParams encoder;
  };

  ad::Var stream_forward(ad::Tape& tape, const Stream& s, const StreamBatch& sb, layers::Mode mode,
                         std::mt19937_64* rng, layers::AttentionRecord* record);

  ModelConfig config_;
  ParamStore params_;
  std::optional<Stream> video_;
  std::optional<Stream> audio_;
  std::size_t readout_w_ = 0;
  std::size_t readout_b_ = 0;
};

}  // namespace eri
