// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#include "eri/model.hpp"

#include <algorithm>

#include "eri/errors.hpp"

namespace eri {

std::string_view to_string(Pooling p) {
  switch (p) {
    case Pooling::regression_token:
      return "regression_token";
    case Pooling::mean:
      return "mean";
  }
  return "?";
}

Pooling parse_pooling(std::string_view s) {
  if (s == "regression_token") return Pooling::regression_token;
  if (s == "mean") return Pooling::mean;
  throw ConfigError("unknown pooling '" + std::string(s) + "' (expected regression_token or mean)");
}

void ModelConfig::validate() const {
  if (stream_count() == 0) throw ConfigError("model: both visual_dim and audio_dim are zero");
  if (gru_layers == 0) throw ConfigError("model: gru_layers must be positive");
  if (hidden == 0) throw ConfigError("model: hidden must be positive");
  if (output_dim == 0) throw ConfigError("model: output_dim must be positive");
  if (pooling == Pooling::regression_token) {
    if (encoder_blocks == 0) throw ConfigError("model: encoder_blocks must be positive");
    if (heads == 0) throw ConfigError("model: heads must be positive");
    if (ff_multiplier == 0) throw ConfigError("model: ff_multiplier must be positive");
    if (hidden % heads != 0) {
      throw ConfigError("model: hidden " + std::to_string(hidden) + " is not divisible by heads " +
                        std::to_string(heads));
    }
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must lie in [0, 1)");
}

StreamBatch make_stream_batch(std::span<const FeatureMatrix* const> sequences) {
  if (sequences.empty()) throw ArgumentError("batch: no sequences");
  const std::size_t B = sequences.size();
  const std::size_t D = sequences[0]->cols;
  std::size_t T = 0;
  for (const auto* s : sequences) {
    if (s->cols != D) throw ShapeError("batch: sequences have different feature widths");
    T = std::max(T, s->rows);
  }
  if (T == 0 || D == 0) throw ArgumentError("batch: empty sequences");
  StreamBatch sb;
  sb.batch = B;
  sb.steps = T;
  sb.data = Tensor::zeros(T * B, D);
  sb.valid.assign(B * T, 0);
  for (std::size_t b = 0; b < B; ++b) {
    const FeatureMatrix& s = *sequences[b];
    for (std::size_t t = 0; t < s.rows; ++t) {
      std::copy_n(s.values.data() + t * D, D, sb.data.data.data() + (t * B + b) * D);
      sb.valid[b * T + t] = 1;
    }
  }
  return sb;
}

EriModel::EriModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(config_.seed);
  auto build = [&](const std::string& prefix, std::size_t in_dim) {
    Stream s;
    s.gru = layers::make_gru(params_, prefix + ".gru", in_dim, config_.hidden, config_.gru_layers, rng);
    if (config_.pooling == Pooling::regression_token) {
      s.encoder = layers::make_encoder(params_, prefix + ".encoder", config_.hidden, config_.heads,
                                       config_.encoder_blocks,
                                       config_.ff_multiplier * config_.hidden, config_.dropout, rng);
    }
    return s;
  };
  if (config_.visual_dim > 0) video_ = build("video", config_.visual_dim);
  if (config_.audio_dim > 0) audio_ = build("audio", config_.audio_dim);
  Tensor w = Tensor::zeros(config_.stream_count() * config_.hidden, config_.output_dim);
  fill_xavier_uniform(w, rng);
  readout_w_ = params_.add_indexed("readout.w", std::move(w), /*decay=*/true);
  readout_b_ = params_.add_indexed("readout.b", Tensor::zeros(1, config_.output_dim), /*decay=*/false);
}

ModelBatch EriModel::make_batch(std::span<const ModelInput> inputs) const {
  if (inputs.empty()) throw ArgumentError("model: empty batch");
  ModelBatch mb;
  mb.size = inputs.size();
  auto gather = [&](bool video, std::size_t dim) {
    std::vector<const FeatureMatrix*> seqs;
    seqs.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const FeatureMatrix* m = video ? inputs[i].video : inputs[i].audio;
      const char* name = video ? "video" : "audio";
      if (m == nullptr || m->rows == 0) {
        throw ArgumentError(std::string("model: ") + name + " stream of batch item " +
                            std::to_string(i) + " has no frames");
      }
      if (m->cols != dim) {
        throw ShapeError(std::string("model: ") + name + " features have width " +
                         std::to_string(m->cols) + ", model expects " + std::to_string(dim));
      }
      seqs.push_back(m);
    }
    return make_stream_batch(seqs);
  };
  if (video_) mb.video = gather(true, config_.visual_dim);
  if (audio_) mb.audio = gather(false, config_.audio_dim);
  return mb;
}

ad::Var EriModel::stream_forward(ad::Tape& tape, const Stream& s, const StreamBatch& sb,
                                 layers::Mode mode, std::mt19937_64* rng,
                                 layers::AttentionRecord* record) {
  ad::Var x = tape.constant(sb.data);
  ad::Var h = layers::gru_forward(tape, params_, s.gru, x, sb.batch, sb.valid);
  if (config_.pooling == Pooling::mean) return ad::masked_time_mean(h, sb.batch, sb.valid);
  return layers::encoder_forward(tape, params_, s.encoder, h, sb.batch, sb.valid, mode, rng, record);
}

ad::Var EriModel::forward(ad::Tape& tape, const ModelBatch& batch, layers::Mode mode,
                          std::mt19937_64* rng, ForwardRecords* records) {
  std::vector<ad::Var> pooled;
  if (video_) {
    if (!batch.video) throw ArgumentError("model: batch lacks the video stream");
    pooled.push_back(stream_forward(tape, *video_, *batch.video, mode, rng,
                                    records ? &records->video : nullptr));
  }
  if (audio_) {
    if (!batch.audio) throw ArgumentError("model: batch lacks the audio stream");
    pooled.push_back(stream_forward(tape, *audio_, *batch.audio, mode, rng,
                                    records ? &records->audio : nullptr));
  }
  ad::Var fused = pooled.size() == 1 ? pooled[0] : ad::concat_cols(pooled);
  ad::Var logits = ad::add_row(ad::matmul(fused, tape.param(params_.at(readout_w_))),
                               tape.param(params_.at(readout_b_)));
  return ad::sigmoid(logits);
}

std::vector<std::vector<double>> EriModel::predict(std::span<const ModelInput> inputs,
                                                   ForwardRecords* records) {
  ModelBatch mb = make_batch(inputs);
  ad::Tape tape;
  ad::Var out = forward(tape, mb, layers::Mode::infer, nullptr, records);
  const Tensor& v = out.value();
  std::vector<std::vector<double>> preds(v.rows());
  for (std::size_t i = 0; i < v.rows(); ++i) {
    auto r = v.row_span(i);
    preds[i].assign(r.begin(), r.end());
  }
  return preds;
}

}  // namespace eri
