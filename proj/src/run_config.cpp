// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#include "eri/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "eri/errors.hpp"

namespace eri {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t to_size(std::string_view key, std::string_view v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  }
  return out;
}

double to_double(std::string_view key, std::string_view v) {
  const std::string s(v);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) {
    throw ConfigError(std::string(key) + ": expected a number, got '" + s + "'");
  }
  return out;
}

bool to_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(std::string(key) + ": expected true or false, got '" + std::string(v) + "'");
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define ERI_SIZE(KEY, EXPR)                                                                     \
  Field {                                                                                       \
    KEY, [](RunConfig& c, std::string_view k, std::string_view v) { c.EXPR = to_size(k, v); }, \
        [](const RunConfig& c) { return std::to_string(c.EXPR); }                              \
  }
#define ERI_REAL(KEY, EXPR)                                                                       \
  Field {                                                                                         \
    KEY, [](RunConfig& c, std::string_view k, std::string_view v) { c.EXPR = to_double(k, v); }, \
        [](const RunConfig& c) { return num(c.EXPR); }                                           \
  }
#define ERI_TEXT(KEY, EXPR)                                                                         \
  Field {                                                                                           \
    KEY, [](RunConfig& c, std::string_view, std::string_view v) { c.EXPR = std::string(v); },      \
        [](const RunConfig& c) { return c.EXPR; }                                                  \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      ERI_SIZE("model.visual_dim", model.visual_dim),
      ERI_SIZE("model.audio_dim", model.audio_dim),
      ERI_SIZE("model.gru_layers", model.gru_layers),
      ERI_SIZE("model.hidden", model.hidden),
      ERI_SIZE("model.encoder_blocks", model.encoder_blocks),
      ERI_SIZE("model.heads", model.heads),
      ERI_SIZE("model.ff_multiplier", model.ff_multiplier),
      ERI_REAL("model.dropout", model.dropout),
      ERI_SIZE("model.output_dim", model.output_dim),
      ERI_SIZE("model.seed", model.seed),
      Field{"model.pooling",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              try {
                c.model.pooling = parse_pooling(v);
              } catch (const Error& e) {
                throw ConfigError(std::string(k) + ": " + e.what());
              }
            },
            [](const RunConfig& c) { return std::string(to_string(c.model.pooling)); }},
      ERI_REAL("train.lr0", train.lr0),
      ERI_REAL("train.decay_factor", train.decay_factor),
      ERI_SIZE("train.decay_every", train.decay_every),
      ERI_REAL("train.weight_decay", train.weight_decay),
      ERI_REAL("train.beta1", train.beta1),
      ERI_REAL("train.beta2", train.beta2),
      ERI_REAL("train.adam_eps", train.adam_eps),
      ERI_SIZE("train.epochs", train.epochs),
      ERI_SIZE("train.batch_size", train.batch_size),
      ERI_SIZE("train.seed", train.seed),
      ERI_SIZE("train.min_valid_frames", train.min_valid_frames),
      Field{"train.select_best_val",
            [](RunConfig& c, std::string_view k, std::string_view v) { c.train.select_best_val = to_bool(k, v); },
            [](const RunConfig& c) { return std::string(c.train.select_best_val ? "true" : "false"); }},
      ERI_SIZE("synth.n_train", synth.n_train),
      ERI_SIZE("synth.n_val", synth.n_val),
      ERI_SIZE("synth.n_test", synth.n_test),
      ERI_SIZE("synth.t_min", synth.t_min),
      ERI_SIZE("synth.t_max", synth.t_max),
      ERI_SIZE("synth.holistic_dim", synth.holistic_dim),
      ERI_SIZE("synth.au_units", synth.au_units),
      ERI_SIZE("synth.audio_dim", synth.audio_dim),
      ERI_SIZE("synth.audio_stride", synth.audio_stride),
      ERI_SIZE("synth.k_events", synth.k_events),
      ERI_REAL("synth.amp_min", synth.amp_min),
      ERI_REAL("synth.amp_max", synth.amp_max),
      ERI_REAL("synth.emotion_rate", synth.emotion_rate),
      ERI_REAL("synth.noise_sigma", synth.noise_sigma),
      ERI_REAL("synth.tau", synth.tau),
      ERI_REAL("synth.invalid_rate", synth.invalid_rate),
      Field{"synth.routing",
            [](RunConfig& c, std::string_view, std::string_view v) { c.synth.routing = synth::parse_routing(v); },
            [](const RunConfig& c) { return std::string(synth::to_string(c.synth.routing)); }},
      ERI_SIZE("synth.seed", synth.seed),
      ERI_REAL("mfcc.sample_rate", mfcc.sample_rate),
      ERI_SIZE("mfcc.frame_len", mfcc.frame_len),
      ERI_SIZE("mfcc.hop", mfcc.hop),
      ERI_SIZE("mfcc.n_mels", mfcc.n_mels),
      ERI_SIZE("mfcc.n_mfcc", mfcc.n_mfcc),
      ERI_SIZE("mfcc.block", mfcc.block),
      ERI_REAL("mfcc.f_min", mfcc.f_min),
      ERI_REAL("mfcc.f_max", mfcc.f_max),
      ERI_REAL("mfcc.log_floor", mfcc.log_floor),
      ERI_TEXT("data.manifest", manifest),
      ERI_TEXT("data.combo", combo),
      Field{"data.eval_split",
            [](RunConfig& c, std::string_view k, std::string_view v) {
              try {
                c.eval_split = parse_split(v);
              } catch (const Error& e) {
                throw ConfigError(std::string(k) + ": " + e.what());
              }
            },
            [](const RunConfig& c) { return std::string(to_string(c.eval_split)); }},
      ERI_TEXT("paths.checkpoint", checkpoint),
      ERI_TEXT("paths.output_dir", output_dir),
      ERI_TEXT("ablate.table", ablation),
      ERI_SIZE("attn.samples", attn_samples),
  };
  return table;
}

#undef ERI_SIZE
#undef ERI_REAL
#undef ERI_TEXT

}  // namespace

void RunConfig::set(std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(*this, key, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + "=" + f.get(*this) + "\n";
  return out;
}

std::string RunConfig::section_text(std::string_view prefix) const {
  std::string out;
  for (const auto& f : fields()) {
    const std::string_view k = f.key;
    if (k.substr(0, prefix.size()) == prefix) out += std::string(k.substr(prefix.size())) + "=" + f.get(*this) + "\n";
  }
  return out;
}

RunConfig parse_run_config(std::string_view text, const std::string& source, RunConfig base) {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = trim(text.substr(start, end - start));
    start = end + 1;
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected key=value, got '" + std::string(line) + "'");
    }
    try {
      base.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig read_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
  }
  cfg.set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

}  // namespace eri
