// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#include "eri/train.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "eri/errors.hpp"
#include "eri/metrics.hpp"
#include "json.hpp"

namespace eri {

using json = nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr0 > 0.0)) throw ConfigError("train.lr0 must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("train.decay_factor must lie in (0, 1]");
  if (decay_every == 0) throw ConfigError("train.decay_every must be positive");
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train betas must lie in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("train.adam_eps must be positive");
  if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
}

double lr_at_epoch(const TrainConfig& cfg, std::size_t epoch) {
  return cfg.lr0 * std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_every));
}

std::string loss_log_csv(const std::vector<LossRecord>& log) {
  std::ostringstream os;
  os << "epoch,step,lr,train_loss\n" << std::setprecision(17);
  for (const auto& r : log) os << r.epoch << ',' << r.step << ',' << r.lr << ',' << r.train_loss << '\n';
  return os.str();
}

namespace {

Tensor label_tensor(const std::vector<const ModelSample*>& batch, std::size_t width) {
  Tensor y = Tensor::zeros(batch.size(), width);
  for (std::size_t b = 0; b < batch.size(); ++b)
    for (std::size_t c = 0; c < width; ++c) y.at(b, c) = batch[b]->label[c];
  return y;
}

}  // namespace

TrainResult train_model(EriModel& model, const std::vector<ModelSample>& train_set, const TrainConfig& cfg,
                        const std::vector<ModelSample>* val_set, AdamW* optimizer,
                        const EpochCallback& on_epoch) {
  cfg.validate();
  std::vector<const ModelSample*> usable;
  for (const auto& s : train_set)
    if (s.valid) usable.push_back(&s);
  if (usable.empty()) throw DataError("training set has no usable sample");
  const std::size_t width = model.config().output_dim;
  if (width > kNumEmotions) throw ConfigError("model output_dim exceeds the label width");

  AdamW local(cfg.adamw());
  AdamW& opt = optimizer ? *optimizer : local;
  std::mt19937_64 shuffle_rng(cfg.seed);
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

  TrainResult result;
  std::vector<std::vector<double>> best_params;
  std::vector<std::size_t> order(usable.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(cfg, epoch);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const ModelSample*> batch;
      std::vector<ModelInput> inputs;
      for (std::size_t i = start; i < end; ++i) {
        batch.push_back(usable[order[i]]);
        inputs.push_back(usable[order[i]]->input());
      }
      const ModelBatch mb = model.make_batch(inputs);
      model.params().zero_grads();
      ad::Tape tape;
      ad::Var pred = model.forward(tape, mb, layers::Mode::train, &dropout_rng);
      ad::Var loss = ad::l2_loss(pred, tape.constant(label_tensor(batch, width)));
      const double value = loss.value().data[0];
      if (!std::isfinite(value)) {
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(opt.steps()));
      }
      tape.backward(loss);
      opt.step(model.params(), lr);
      loss_sum += value;
      ++batches;
    }
    LossRecord rec{epoch, static_cast<std::size_t>(opt.steps()), lr, loss_sum / static_cast<double>(batches)};
    result.log.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (cfg.select_best_val && val_set != nullptr) {
      const EvalReport rep = evaluate(model, *val_set, cfg.batch_size);
      if (!result.best_epoch || rep.mean_pcc > result.best_val_pcc) {
        result.best_epoch = epoch;
        result.best_val_pcc = rep.mean_pcc;
        best_params.clear();
        for (const auto& e : model.params().entries()) best_params.push_back(e.tensor.data);
      }
    }
  }
  if (!best_params.empty()) {
    auto& entries = model.params().entries();
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i].tensor.data = best_params[i];
  }
  return result;
}

EvalReport evaluate(EriModel& model, const std::vector<ModelSample>& samples, std::size_t batch_size) {
  if (batch_size == 0) throw ArgumentError("evaluate: batch size must be positive");
  const std::size_t width = model.config().output_dim;
  if (width != kNumEmotions) throw ConfigError("evaluate: model must produce 7 outputs");
  EvalReport rep;
  rep.predictions.assign(samples.size(), Labels{});
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    rep.ids.push_back(samples[i].id);
    rep.labels.push_back(samples[i].label);
    if (samples[i].valid) valid.push_back(i);
  }
  if (valid.empty()) throw EvaluationError("evaluate: no valid sample among " + std::to_string(samples.size()));
  for (std::size_t start = 0; start < valid.size(); start += batch_size) {
    const std::size_t end = std::min(valid.size(), start + batch_size);
    std::vector<ModelInput> inputs;
    for (std::size_t i = start; i < end; ++i) inputs.push_back(samples[valid[i]].input());
    const auto preds = model.predict(inputs);
    for (std::size_t i = start; i < end; ++i)
      std::copy(preds[i - start].begin(), preds[i - start].end(), rep.predictions[valid[i]].begin());
  }
  Labels mean{};
  for (std::size_t i : valid)
    for (std::size_t c = 0; c < kNumEmotions; ++c) mean[c] += rep.predictions[i][c];
  for (auto& m : mean) m /= static_cast<double>(valid.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].valid) continue;
    rep.predictions[i] = mean;
    rep.substituted_ids.push_back(samples[i].id);
  }
  rep.n_valid = valid.size();
  rep.n_substituted = samples.size() - valid.size();
  if (samples.size() < 2) throw EvaluationError("evaluate: correlation needs at least two samples");
  std::vector<double> x(samples.size()), y(samples.size());
  for (std::size_t c = 0; c < kNumEmotions; ++c) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      x[i] = rep.predictions[i][c];
      y[i] = rep.labels[i][c];
    }
    const PccResult r = pcc(x, y);
    rep.per_emotion_pcc[c] = r.value;
    rep.degenerate[c] = r.degenerate;
  }
  rep.mean_pcc = mean_pcc(rep.per_emotion_pcc);
  return rep;
}

std::string EvalReport::to_json() const {
  json j;
  j["mean_pcc"] = mean_pcc;
  j["n_valid"] = n_valid;
  j["n_substituted"] = n_substituted;
  j["substituted_ids"] = substituted_ids;
  json per = json::object();
  json deg = json::array();
  for (std::size_t c = 0; c < kNumEmotions; ++c) {
    per[std::string(kEmotionNames[c])] = per_emotion_pcc[c];
    if (degenerate[c]) deg.push_back(std::string(kEmotionNames[c]));
  }
  j["per_emotion_pcc"] = per;
  j["degenerate"] = deg;
  j["emotions"] = json::array();
  for (auto n : kEmotionNames) j["emotions"].push_back(std::string(n));
  j["predictions"] = json::array();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    j["predictions"].push_back({{"id", ids[i]}, {"prediction", predictions[i]}, {"label", labels[i]}});
  }
  return j.dump(2) + "\n";
}

std::string EvalReport::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(16) << "Emotion" << std::right << std::setw(10) << "PCC" << '\n';
  os << std::fixed << std::setprecision(4);
  for (std::size_t c = 0; c < kNumEmotions; ++c) {
    os << std::left << std::setw(16) << kEmotionNames[c] << std::right << std::setw(10) << per_emotion_pcc[c];
    if (degenerate[c]) os << "  (zero variance)";
    os << '\n';
  }
  os << std::left << std::setw(16) << "Mean" << std::right << std::setw(10) << mean_pcc << '\n';
  os << "valid: " << n_valid << "  substituted: " << n_substituted << '\n';
  return os.str();
}

RunOutcome train_and_evaluate(const Dataset& ds, const ModelConfig& base, const FeatureCombo& combo,
                              const TrainConfig& cfg, Split eval_split, EriModel* trained) {
  RunOutcome out;
  const Dataset filtered = apply_training_filter(ds, cfg.min_valid_frames, &out.filtered_ids);
  out.config = base;
  const std::size_t audio_width = ds.samples.empty() ? 0 : ds.samples.front().audio.data.cols;
  apply_combo_dims(out.config, combo, ds.layout, audio_width);
  const auto train_set = prepare_split(filtered, Split::train, combo);
  const auto eval_set = prepare_split(filtered, eval_split, combo);
  EriModel model(out.config);
  out.train = train_model(model, train_set, cfg, cfg.select_best_val ? &eval_set : nullptr);
  out.report = evaluate(model, eval_set, cfg.batch_size);
  if (trained) *trained = std::move(model);
  return out;
}

AblationTable run_ablation(const Dataset& ds, const ModelConfig& base, const TrainConfig& cfg,
                           const std::vector<NamedCombo>& combos, Split eval_split) {
  AblationTable table;
  for (const auto& c : combos) {
    const RunOutcome r = train_and_evaluate(ds, base, c.combo, cfg, eval_split);
    table.rows.push_back({c.label, c.combo.key(), r.report.mean_pcc, r.report.per_emotion_pcc});
  }
  return table;
}

std::string AblationTable::to_json() const {
  json j = json::array();
  for (const auto& r : rows) {
    json per = json::object();
    for (std::size_t c = 0; c < kNumEmotions; ++c) per[std::string(kEmotionNames[c])] = r.per_emotion_pcc[c];
    j.push_back({{"label", r.label}, {"combo", r.combo}, {"mean_pcc", r.mean_pcc}, {"per_emotion_pcc", per}});
  }
  return json{{"rows", j}}.dump(2) + "\n";
}

std::string AblationTable::to_text() const {
  std::size_t w = 8;
  for (const auto& r : rows) w = std::max(w, r.label.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(w + 2)) << "Features" << std::right << std::setw(10) << "Mean PCC"
     << '\n';
  os << std::fixed << std::setprecision(4);
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(w + 2)) << r.label << std::right << std::setw(10) << r.mean_pcc
       << '\n';
  }
  return os.str();
}

}  // namespace eri
