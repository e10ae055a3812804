// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

// eri: command-line driver.
//
//   eri gen-synth --out DIR
//   eri mfcc --input clip.wav --out DIR
//   eri train  --config run.cfg --set data.manifest=... --out DIR
//   eri eval   --set paths.checkpoint=DIR/model.eri ...
//   eri ablate ...
//   eri attn   ...
//
// Exit codes: 0 success, 1 usage or config error, 2 data or format error,
// 3 numerical failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "eri/checkpoint.hpp"
#include "eri/errors.hpp"
#include "eri/features.hpp"
#include "eri/mfcc.hpp"
#include "eri/run_config.hpp"
#include "eri/synth.hpp"
#include "eri/train.hpp"

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw eri::DataError("cannot write " + path.string());
  out << text;
}

fs::path prepare_output(const eri::RunConfig& cfg) {
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  write_text(dir / "config.txt", cfg.to_text());
  return dir;
}

eri::Dataset load(const eri::RunConfig& cfg) {
  if (cfg.manifest.empty()) throw eri::ConfigError("data.manifest is not set");
  return eri::load_dataset(cfg.manifest);
}

// Checks that a checkpointed model consumes what `combo` produces.
void check_dims(const eri::ModelConfig& model, const eri::Dataset& ds, const eri::FeatureCombo& combo) {
  eri::ModelConfig want = model;
  const std::size_t audio_width = ds.samples.empty() ? 0 : ds.samples.front().audio.data.cols;
  eri::apply_combo_dims(want, combo, ds.layout, audio_width);
  if (want.visual_dim != model.visual_dim || want.audio_dim != model.audio_dim) {
    throw eri::DataError("checkpoint expects visual/audio widths " + std::to_string(model.visual_dim) + "/" +
                         std::to_string(model.audio_dim) + " but combo '" + combo.key() + "' gives " + std::to_string(want.visual_dim) + "/" + std::to_string(want.audio_dim));
  }
}

int cmd_gen_synth(const eri::RunConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  const auto out = eri::synth::generate_synthetic_dataset(cfg.synth, dir);
  std::cout << "wrote " << out.manifest.samples.size() << " samples to " << (dir / "manifest.json").string() << "\n";
  return kOk;
}

int cmd_mfcc(const eri::RunConfig& cfg, const std::string& input, double rate, bool frames_only) {
  if (input.empty()) throw eri::ConfigError("mfcc: --input is required");
  const fs::path dir = prepare_output(cfg);
  const fs::path in(input);
  const auto signal = in.extension() == ".wav" ? eri::audio::read_wav(in) : eri::audio::read_raw_f32(in, rate);
  const auto frames = eri::audio::mfcc(signal, cfg.mfcc);
  const auto out = frames_only ? frames : eri::audio::block_combine(frames, cfg.mfcc.block);
  const fs::path target = dir / (in.stem().string() + ".fmx");
  eri::write_fmx(target, out);
  std::cout << frames.rows << " frames -> " << out.rows << "x" << out.cols << " written to " << target.string() << "\n";
  return kOk;
}

int cmd_train(const eri::RunConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  const eri::Dataset ds = load(cfg);
  const auto combo = eri::FeatureCombo::parse(cfg.combo);
  std::vector<std::string> removed;
  const eri::Dataset filtered = eri::apply_training_filter(ds, cfg.train.min_valid_frames, &removed);
  for (const auto& id : removed) std::cerr << "filtered training sample " << id << " (too few valid frames)\n";
  eri::ModelConfig mc = cfg.model;
  const std::size_t audio_width = ds.samples.empty() ? 0 : ds.samples.front().audio.data.cols;
  eri::apply_combo_dims(mc, combo, ds.layout, audio_width);
  const auto train_set = eri::prepare_split(filtered, eri::Split::train, combo);
  const auto val_set = eri::prepare_split(filtered, cfg.eval_split, combo);
  eri::EriModel model(mc);
  eri::AdamW opt(cfg.train.adamw());
  const auto result = eri::train_model(model, train_set, cfg.train, val_set.empty() ? nullptr : &val_set, &opt,
                                       [](const eri::LossRecord& r) {
                                         std::cerr << "epoch " << r.epoch << " lr " << r.lr << " loss "
                                                   << r.train_loss << "\n";
                                       });
  write_text(dir / "loss_log.csv", eri::loss_log_csv(result.log));
  eri::save_checkpoint(dir / "model.eri", model, &opt);
  std::cout << "checkpoint written to " << (dir / "model.eri").string() << "\n";
  return kOk;
}

int cmd_eval(const eri::RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw eri::ConfigError("paths.checkpoint is not set");
  const fs::path dir = prepare_output(cfg);
  const eri::Dataset ds = load(cfg);
  const auto combo = eri::FeatureCombo::parse(cfg.combo);
  auto ck = eri::load_checkpoint(cfg.checkpoint);
  check_dims(ck.model.config(), ds, combo);
  const auto samples = eri::prepare_split(ds, cfg.eval_split, combo);
  const auto report = eri::evaluate(ck.model, samples, cfg.train.batch_size);
  write_text(dir / "eval_report.json", report.to_json());
  write_text(dir / "eval_report.txt", report.to_text());
  std::cout << report.to_text();
  return kOk;
}

int cmd_ablate(const eri::RunConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  const eri::Dataset ds = load(cfg);
  std::vector<eri::NamedCombo> combos;
  if (cfg.ablation == "feature_types") {
    combos = eri::feature_type_combos();
  } else if (cfg.ablation == "au_types") {
    combos = eri::au_type_combos();
  } else {
    throw eri::ConfigError("ablate.table must be feature_types or au_types, got '" + cfg.ablation + "'");
  }
  const auto table = eri::run_ablation(ds, cfg.model, cfg.train, combos, cfg.eval_split);
  write_text(dir / "ablation.json", table.to_json());
  write_text(dir / "ablation.txt", table.to_text());
  std::cout << table.to_text();
  return kOk;
}

int cmd_attn(const eri::RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw eri::ConfigError("paths.checkpoint is not set");
  const fs::path dir = prepare_output(cfg);
  const eri::Dataset ds = load(cfg);
  const auto combo = eri::FeatureCombo::parse(cfg.combo);
  auto ck = eri::load_checkpoint(cfg.checkpoint);
  check_dims(ck.model.config(), ds, combo);
  std::vector<eri::ModelSample> samples;
  for (auto& s : eri::prepare_split(ds, cfg.eval_split, combo)) {
    if (samples.size() >= cfg.attn_samples) break;
    if (s.valid) samples.push_back(std::move(s));
  }
  const auto weights = eri::synth::regression_attention(ck.model, samples);
  fs::create_directories(dir / "attention");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::string csv = "frame_index,weight\n";
    char buf[64];
    for (std::size_t t = 0; t < weights[i].size(); ++t) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g\n", t, weights[i][t]);
      csv += buf;
    }
    write_text(dir / "attention" / (samples[i].id + ".csv"), csv);
  }
  std::cout << "wrote " << samples.size() << " attention curves to " << (dir / "attention").string() << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Emotional reaction intensity: synthetic data, MFCC, training, evaluation"};
  app.require_subcommand(1);
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  auto common = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "key=value config file");
    sub->add_option("-s,--set", overrides, "override, key=value (repeatable)");
    sub->add_option("-o,--out", out_dir, "output directory (paths.output_dir)");
  };
  auto* gen = app.add_subcommand("gen-synth", "generate the synthetic sparse-event dataset");
  auto* mf = app.add_subcommand("mfcc", "extract MFCC tokens from a WAV or raw f32 file");
  auto* tr = app.add_subcommand("train", "train a model and write a checkpoint and loss log");
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  auto* ab = app.add_subcommand("ablate", "run a feature ablation table");
  auto* at = app.add_subcommand("attn", "export regression-token attention curves");
  for (auto* s : {gen, mf, tr, ev, ab, at}) common(s);
  std::string input;
  double rate = 16000.0;
  bool frames_only = false;
  mf->add_option("-i,--input", input, "16-bit PCM WAV or headerless f32 file")->required();
  mf->add_option("--rate", rate, "sample rate of a raw f32 file");
  mf->add_flag("--frames", frames_only, "write per-frame coefficients instead of 1024-wide tokens");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    eri::RunConfig cfg = config_path.empty() ? eri::RunConfig{} : eri::read_run_config(config_path);
    for (const auto& o : overrides) eri::apply_override(cfg, o);
    if (!out_dir.empty()) cfg.output_dir = out_dir;
    cfg.model.validate();
    cfg.train.validate();
    if (gen->parsed()) return cmd_gen_synth(cfg);
    if (mf->parsed()) return cmd_mfcc(cfg, input, rate, frames_only);
    if (tr->parsed()) return cmd_train(cfg);
    if (ev->parsed()) return cmd_eval(cfg);
    if (ab->parsed()) return cmd_ablate(cfg);
    if (at->parsed()) return cmd_attn(cfg);
  } catch (const eri::NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumeric;
  } catch (const eri::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const eri::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
