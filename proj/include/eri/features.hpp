// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

// Feature files, dataset manifests and the per-sample data rules applied
// before anything reaches the model.
//
// FMX layout (all integers little-endian):
//   "FMX1" | u32 rows | u32 cols | u8 has_mask | rows*cols f32 row-major
//   | rows bytes of 0/1 validity (only when has_mask == 1)

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "eri/feature_matrix.hpp"
#include "eri/model.hpp"

namespace eri {

enum class Modality { visual, audio };
enum class Split { train, val, test };
enum class LabelScale { unit, hundred };

std::string_view to_string(Split s);
Split parse_split(std::string_view s);
std::string_view to_string(LabelScale s);
LabelScale parse_label_scale(std::string_view s);

/// Column layout of a fused visual vector: holistic features first, then AU
/// occurrence, then AU intensity. The default is 512 + 17 + 17 = 546.
struct VisualLayout {
  std::size_t holistic = 512;
  std::size_t au_units = 17;

  std::size_t width() const { return holistic + 2 * au_units; }
  bool operator==(const VisualLayout&) const = default;
};

struct FeatureSequence {
  Modality modality = Modality::visual;
  FeatureMatrix data;
  std::vector<unsigned char> valid;  // one flag per row

  std::size_t valid_count() const;
};

using Labels = std::array<double, kNumEmotions>;

struct Sample {
  std::string id;
  Split split = Split::train;
  FeatureSequence visual;
  FeatureSequence audio;
  Labels label{};
};

struct Dataset {
  LabelScale scale = LabelScale::unit;
  VisualLayout layout;
  std::vector<Sample> samples;

  std::vector<const Sample*> split(Split s) const;
};

// ---------------------------------------------------------------------------
// FMX

struct FmxFile {
  FeatureMatrix matrix;
  std::optional<std::vector<unsigned char>> mask;
};

std::vector<std::uint8_t> encode_fmx(const FeatureMatrix& m,
                                     const std::vector<unsigned char>* mask = nullptr);
/// `source` names the origin in error messages.
FmxFile decode_fmx(std::span<const std::uint8_t> bytes, const std::string& source);

void write_fmx(const std::filesystem::path& path, const FeatureMatrix& m,
               const std::vector<unsigned char>* mask = nullptr);
FmxFile read_fmx(const std::filesystem::path& path);
FeatureMatrix load_feature_matrix(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Manifest

struct ManifestRecord {
  std::string id;
  Split split = Split::train;
  std::string visual;  // paths relative to the manifest directory
  std::string audio;
  std::array<double, kNumEmotions> labels{};
};

struct Manifest {
  int version = 1;
  LabelScale label_scale = LabelScale::unit;
  VisualLayout visual_layout;
  std::vector<ManifestRecord> samples;
};

Manifest parse_manifest(std::string_view json_text, const std::string& source);
std::string manifest_to_json(const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& m);

/// Loads every record in manifest order. Checks that ids are unique and that
/// every referenced file exists, then normalizes labels.
Dataset load_dataset(const std::filesystem::path& manifest_path);

// ---------------------------------------------------------------------------
// Data rules

/// Drops rows whose validity flag is 0, keeping order. `removed` receives the
/// number of dropped rows.
FeatureSequence filter_valid_frames(const FeatureSequence& seq, std::size_t* removed = nullptr);

/// Removes training samples with fewer than `min_valid_frames` valid visual
/// frames. Validation and test samples are never removed.
Dataset apply_training_filter(const Dataset& ds, std::size_t min_valid_frames = 50,
                              std::vector<std::string>* removed_ids = nullptr);

/// Maps raw annotations onto [0, 1]. Throws DataError naming `sample_id` when
/// a value lies outside the declared scale.
Labels normalize_labels(std::span<const double> raw, LabelScale scale, const std::string& sample_id);

// ---------------------------------------------------------------------------
// Feature combinations

struct FeatureCombo {
  bool resnet = false;
  bool au_occurrence = false;
  bool au_intensity = false;
  bool audio = false;

  bool any_visual() const { return resnet || au_occurrence || au_intensity; }
  bool empty() const { return !any_visual() && !audio; }
  /// "resnet+au_occurrence+au_intensity+audio" style key.
  std::string key() const;
  /// Parses a '+'-separated list of resnet, au, au_occurrence, au_intensity,
  /// audio, or the word "all".
  static FeatureCombo parse(std::string_view text);
  bool operator==(const FeatureCombo&) const = default;
};

struct NamedCombo {
  std::string label;
  FeatureCombo combo;
};

/// Rows of the feature-type ablation, in table order.
std::vector<NamedCombo> feature_type_combos();
/// Rows of the AU-type ablation (holistic and audio always on).
std::vector<NamedCombo> au_type_combos();

/// Visual column indices a combo keeps, ascending.
std::vector<std::size_t> visual_columns(const FeatureCombo& combo, const VisualLayout& layout);

/// Sets visual_dim / audio_dim of `cfg` to what `combo` feeds the model.
/// Throws ConfigError for an empty combo or one that needs absent columns.
void apply_combo_dims(ModelConfig& cfg, const FeatureCombo& combo, const VisualLayout& layout,
                      std::size_t audio_width);

/// A sample reduced to what a model consumes: invalid visual frames removed,
/// visual columns sliced, audio dropped when not in the combo.
struct ModelSample {
  std::string id;
  Split split = Split::train;
  std::optional<FeatureMatrix> video;
  std::optional<FeatureMatrix> audio;
  Labels label{};
  /// False when a stream the model needs has no usable frame.
  bool valid = true;

  ModelInput input() const {
    return {video ? &*video : nullptr, audio ? &*audio : nullptr};
  }
};

ModelSample select_feature_combo(const Sample& sample, const FeatureCombo& combo,
                                 const VisualLayout& layout);

std::vector<ModelSample> prepare_split(const Dataset& ds, Split split, const FeatureCombo& combo);

}  // namespace eri
