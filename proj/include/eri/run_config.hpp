// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

// Flat "key=value" run configuration with dotted keys (model.hidden=256).
// Blank lines and lines starting with '#' are ignored.

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "eri/features.hpp"
#include "eri/mfcc.hpp"
#include "eri/model.hpp"
#include "eri/synth.hpp"
#include "eri/train.hpp"

namespace eri {

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  synth::SynthConfig synth;
  audio::MfccConfig mfcc;

  std::string manifest;
  std::string checkpoint;
  std::string output_dir = "out";
  std::string combo = "all";
  Split eval_split = Split::val;
  // feature_types or au_types
  std::string ablation = "feature_types";
  std::size_t attn_samples = 8;

  /// Throws ConfigError naming the key on an unknown key or a bad value.
  void set(std::string_view key, std::string_view value);
  /// Every key in a fixed order; parsing the result reproduces this config.
  std::string to_text() const;
  /// Keys with the given prefix ("model.") with the prefix removed.
  std::string section_text(std::string_view prefix) const;
};

/// `source` names the origin in error messages (file name or "--set").
RunConfig parse_run_config(std::string_view text, const std::string& source, RunConfig base = {});
RunConfig read_run_config(const std::string& path);
/// Applies one "key=value" override.
void apply_override(RunConfig& cfg, std::string_view assignment);

}  // namespace eri
