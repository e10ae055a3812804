// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

// Mini-batch training with the mean-squared (L2) loss and AdamW under a step
// learning-rate schedule, correlation-based evaluation with invalid-sample
// substitution, and the feature ablation harness.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "eri/features.hpp"
#include "eri/model.hpp"
#include "eri/optim.hpp"

namespace eri {

struct TrainConfig {
  double lr0 = 1e-4;
  double decay_factor = 0.5;
  std::size_t decay_every = 10;
  double weight_decay = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::size_t min_valid_frames = 50;
  // Keep the parameters of the epoch with the best validation mean PCC.
  bool select_best_val = false;

  void validate() const;
  AdamW::Options adamw() const { return {beta1, beta2, adam_eps, weight_decay}; }
};

/// lr0 * decay_factor^floor(epoch / decay_every).
double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch);

struct LossRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;  // optimizer steps taken so far
  double lr = 0.0;
  double train_loss = 0.0;  // mean batch loss over the epoch
};

/// "epoch,step,lr,train_loss" followed by one line per record.
std::string loss_log_csv(const std::vector<LossRecord>& log);

struct TrainResult {
  std::vector<LossRecord> log;
  std::optional<std::size_t> best_epoch;
  double best_val_pcc = 0.0;
};

using EpochCallback = std::function<void(const LossRecord&)>;

/// Trains `model` on every valid sample of `train_set`. `optimizer`, when
/// given, carries state across calls. Throws NumericalError on a non-finite
/// loss and DataError when no usable sample remains.
TrainResult train_model(EriModel& model, const std::vector<ModelSample>& train_set,
                        const TrainConfig& cfg, const std::vector<ModelSample>* val_set = nullptr,
                        AdamW* optimizer = nullptr, const EpochCallback& on_epoch = {});

struct EvalReport {
  std::array<double, kNumEmotions> per_emotion_pcc{};
  std::array<bool, kNumEmotions> degenerate{};
  double mean_pcc = 0.0;
  std::size_t n_valid = 0;
  std::size_t n_substituted = 0;
  std::vector<std::string> ids;
  std::vector<Labels> predictions;
  std::vector<Labels> labels;
  std::vector<std::string> substituted_ids;

  std::string to_json() const;
  std::string to_text() const;
};

/// Predicts every valid sample; each invalid one receives the per-emotion
/// mean of the valid predictions. Correlations cover all rows. Throws
/// EvaluationError when no sample is valid.
EvalReport evaluate(EriModel& model, const std::vector<ModelSample>& samples, std::size_t batch_size = 32);

/// Training filter, combo slicing, model construction, training and
/// evaluation on one dataset.
struct RunOutcome {
  ModelConfig config;
  TrainResult train;
  EvalReport report;
  std::vector<std::string> filtered_ids;
};

RunOutcome train_and_evaluate(const Dataset& ds, const ModelConfig& base, const FeatureCombo& combo,
                              const TrainConfig& cfg, Split eval_split = Split::val,
                              EriModel* trained = nullptr);

struct AblationRow {
  std::string label;
  std::string combo;
  double mean_pcc = 0.0;
  std::array<double, kNumEmotions> per_emotion_pcc{};
};

struct AblationTable {
  std::vector<AblationRow> rows;

  std::string to_json() const;
  std::string to_text() const;
};

/// One model per combo, all with the same seeds and training settings.
AblationTable run_ablation(const Dataset& ds, const ModelConfig& base, const TrainConfig& cfg,
                           const std::vector<NamedCombo>& combos, Split eval_split = Split::val);

}  // namespace eri
