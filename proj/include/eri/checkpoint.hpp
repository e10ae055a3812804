// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

// Model checkpoint files (integers little-endian):
//   "ERI1" | u32 n | n bytes of "key=value\n" model config
//   | u32 count | count x (u32 name_len | name | u32 rank | rank x u32 dim
//                        | numel x f32)
//   | u8 has_optimizer
//   [ | u64 step | 4 x f64 (beta1, beta2, eps, weight_decay)
//     | count x (numel x f64 first moment | numel x f64 second moment) ]

#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "eri/model.hpp"
#include "eri/optim.hpp"

namespace eri {

std::string model_config_to_text(const ModelConfig& cfg);
/// Parses the "key=value" lines written by model_config_to_text. Unknown keys
/// are a ConfigError.
ModelConfig model_config_from_text(std::string_view text);

struct Checkpoint {
  EriModel model;
  std::optional<AdamW> optimizer;
};

void save_checkpoint(const std::filesystem::path& path, const EriModel& model, const AdamW* optimizer = nullptr);
/// Throws FormatError (with byte offset) on a malformed file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace eri
