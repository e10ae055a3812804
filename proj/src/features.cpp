// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#include "eri/features.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "eri/errors.hpp"
#include "json.hpp"

namespace eri {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("unknown split '" + std::string(s) + "'");
}

std::string_view to_string(LabelScale s) { return s == LabelScale::unit ? "unit" : "hundred"; }

LabelScale parse_label_scale(std::string_view s) {
  if (s == "unit") return LabelScale::unit;
  if (s == "hundred") return LabelScale::hundred;
  throw DataError("unknown label_scale '" + std::string(s) + "' (expected unit or hundred)");
}

std::size_t FeatureSequence::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1));
}

std::vector<const Sample*> Dataset::split(Split s) const {
  std::vector<const Sample*> out;
  for (const auto& x : samples)
    if (x.split == s) out.push_back(&x);
  return out;
}

// ---------------------------------------------------------------------------
// FMX

namespace {

constexpr std::size_t kFmxHeader = 4 + 4 + 4 + 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
  return v;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode_fmx(const FeatureMatrix& m, const std::vector<unsigned char>* mask) {
  if (m.values.size() != m.rows * m.cols) throw ShapeError("fmx: matrix size does not match its shape");
  if (mask && mask->size() != m.rows) throw ShapeError("fmx: mask needs one flag per row");
  std::vector<std::uint8_t> out;
  out.reserve(kFmxHeader + m.values.size() * 4 + (mask ? m.rows : 0));
  out.insert(out.end(), {'F', 'M', 'X', '1'});
  put_u32(out, static_cast<std::uint32_t>(m.rows));
  put_u32(out, static_cast<std::uint32_t>(m.cols));
  out.push_back(mask ? 1 : 0);
  for (double v : m.values) put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (mask)
    for (unsigned char f : *mask) out.push_back(f ? 1 : 0);
  return out;
}

FmxFile decode_fmx(std::span<const std::uint8_t> bytes, const std::string& source) {
  auto fail = [&](std::size_t offset, const std::string& what) {
    return FormatError(source + ": " + what + " at byte offset " + std::to_string(offset));
  };
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "FMX1", 4) != 0) throw fail(0, "bad magic (expected FMX1)");
  if (bytes.size() < kFmxHeader) throw fail(bytes.size(), "truncated header");
  const std::size_t rows = get_u32(bytes, 4);
  const std::size_t cols = get_u32(bytes, 8);
  const std::uint8_t has_mask = bytes[12];
  if (has_mask > 1) throw fail(12, "mask flag must be 0 or 1");
  const std::size_t payload = rows * cols * 4;
  const std::size_t expected = kFmxHeader + payload + (has_mask ? rows : 0);
  if (bytes.size() < expected) {
    throw fail(bytes.size(), "truncated payload: header declares " + std::to_string(rows) + "x" +
                                 std::to_string(cols) + " (" + std::to_string(expected) +
                                 " bytes) but the file ends");
  }
  if (bytes.size() > expected) throw fail(expected, "trailing bytes after payload");
  FmxFile f;
  f.matrix = FeatureMatrix(rows, cols);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const std::size_t off = kFmxHeader + 4 * i;
    const float v = std::bit_cast<float>(get_u32(bytes, off));
    if (!std::isfinite(v)) throw fail(off, "non-finite value");
    f.matrix.values[i] = v;
  }
  if (has_mask) {
    std::vector<unsigned char> mask(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t off = kFmxHeader + payload + r;
      if (bytes[off] > 1) throw fail(off, "validity byte must be 0 or 1");
      mask[r] = bytes[off];
    }
    f.mask = std::move(mask);
  }
  return f;
}

void write_fmx(const fs::path& path, const FeatureMatrix& m, const std::vector<unsigned char>* mask) {
  const auto bytes = encode_fmx(m, mask);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

FmxFile read_fmx(const fs::path& path) {
  const auto bytes = read_file(path);
  return decode_fmx(bytes, path.string());
}

FeatureMatrix load_feature_matrix(const fs::path& path) { return read_fmx(path).matrix; }

// ---------------------------------------------------------------------------
// Manifest

Manifest parse_manifest(std::string_view json_text, const std::string& source) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw FormatError(source + ": invalid JSON: " + e.what());
  }
  Manifest m;
  try {
    m.version = j.at("version").get<int>();
    m.label_scale = parse_label_scale(j.at("label_scale").get<std::string>());
    if (j.contains("visual_layout")) {
      m.visual_layout.holistic = j["visual_layout"].at("holistic").get<std::size_t>();
      m.visual_layout.au_units = j["visual_layout"].at("au_units").get<std::size_t>();
    }
    for (const auto& s : j.at("samples")) {
      ManifestRecord r;
      r.id = s.at("id").get<std::string>();
      r.split = parse_split(s.at("split").get<std::string>());
      r.visual = s.at("visual").get<std::string>();
      r.audio = s.at("audio").get<std::string>();
      const auto& labels = s.at("labels");
      if (!labels.is_array() || labels.size() != kNumEmotions) {
        throw DataError("sample '" + r.id + "': labels must hold exactly 7 numbers");
      }
      for (std::size_t i = 0; i < kNumEmotions; ++i) r.labels[i] = labels[i].get<double>();
      m.samples.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw FormatError(source + ": " + e.what());
  }
  return m;
}

std::string manifest_to_json(const Manifest& m) {
  json j;
  j["version"] = m.version;
  j["label_scale"] = std::string(to_string(m.label_scale));
  j["visual_layout"] = {{"holistic", m.visual_layout.holistic}, {"au_units", m.visual_layout.au_units}};
  j["samples"] = json::array();
  for (const auto& r : m.samples) {
    j["samples"].push_back({{"id", r.id},
                            {"split", std::string(to_string(r.split))},
                            {"visual", r.visual},
                            {"audio", r.audio},
                            {"labels", r.labels}});
  }
  return j.dump(2) + "\n";
}

Manifest read_manifest(const fs::path& path) {
  const auto bytes = read_file(path);
  return parse_manifest(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()),
                        path.string());
}

void write_manifest(const fs::path& path, const Manifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << manifest_to_json(m);
}

Dataset load_dataset(const fs::path& manifest_path) {
  const Manifest m = read_manifest(manifest_path);
  const fs::path root = manifest_path.parent_path();
  Dataset ds;
  ds.scale = m.label_scale;
  ds.layout = m.visual_layout;
  std::set<std::string> ids;
  for (const auto& r : m.samples) {
    if (!ids.insert(r.id).second) throw DataError("duplicate sample id '" + r.id + "' in " + manifest_path.string());
    for (const auto* p : {&r.visual, &r.audio}) {
      if (!fs::exists(root / *p)) {
        throw DataError("sample '" + r.id + "': missing file " + (root / *p).string());
      }
    }
  }
  for (const auto& r : m.samples) {
    Sample s;
    s.id = r.id;
    s.split = r.split;
    FmxFile v = read_fmx(root / r.visual);
    s.visual.modality = Modality::visual;
    s.visual.data = std::move(v.matrix);
    s.visual.valid = v.mask.value_or(std::vector<unsigned char>(s.visual.data.rows, 1));
    FmxFile a = read_fmx(root / r.audio);
    s.audio.modality = Modality::audio;
    s.audio.data = std::move(a.matrix);
    // audio has no validity concept; a stored mask is ignored
    s.audio.valid.assign(s.audio.data.rows, 1);
    s.label = normalize_labels(r.labels, m.label_scale, r.id);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Data rules

FeatureSequence filter_valid_frames(const FeatureSequence& seq, std::size_t* removed) {
  FeatureSequence out;
  out.modality = seq.modality;
  out.data.cols = seq.data.cols;
  std::size_t dropped = 0;
  for (std::size_t r = 0; r < seq.data.rows; ++r) {
    if (r < seq.valid.size() && !seq.valid[r]) {
      ++dropped;
      continue;
    }
    auto row = seq.data.row(r);
    out.data.values.insert(out.data.values.end(), row.begin(), row.end());
    ++out.data.rows;
  }
  out.valid.assign(out.data.rows, 1);
  if (removed) *removed = dropped;
  return out;
}

Dataset apply_training_filter(const Dataset& ds, std::size_t min_valid_frames,
                              std::vector<std::string>* removed_ids) {
  Dataset out;
  out.scale = ds.scale;
  out.layout = ds.layout;
  for (const auto& s : ds.samples) {
    if (s.split == Split::train && s.visual.valid_count() < min_valid_frames) {
      if (removed_ids) removed_ids->push_back(s.id);
      continue;
    }
    out.samples.push_back(s);
  }
  return out;
}

Labels normalize_labels(std::span<const double> raw, LabelScale scale, const std::string& sample_id) {
  if (raw.size() != kNumEmotions) {
    throw DataError("sample '" + sample_id + "': expected 7 labels, got " + std::to_string(raw.size()));
  }
  const double hi = scale == LabelScale::unit ? 1.0 : 100.0;
  Labels out{};
  for (std::size_t i = 0; i < kNumEmotions; ++i) {
    if (!std::isfinite(raw[i]) || raw[i] < 0.0 || raw[i] > hi) {
      std::ostringstream os;
      os << "sample '" << sample_id << "': label " << i << " (" << kEmotionNames[i] << ") = " << raw[i]
         << " is outside the " << to_string(scale) << " scale [0, " << hi << "]";
      throw DataError(os.str());
    }
    out[i] = std::clamp(raw[i] / hi, 0.0, 1.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature combinations

std::string FeatureCombo::key() const {
  std::string k;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!k.empty()) k += '+';
    k += name;
  };
  add(resnet, "resnet");
  add(au_occurrence, "au_occurrence");
  add(au_intensity, "au_intensity");
  add(audio, "audio");
  return k;
}

FeatureCombo FeatureCombo::parse(std::string_view text) {
  FeatureCombo c;
  if (text == "all") return {true, true, true, true};
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('+', start), text.size());
    const std::string_view tok = text.substr(start, end - start);
    if (tok == "resnet") {
      c.resnet = true;
    } else if (tok == "au") {
      c.au_occurrence = c.au_intensity = true;
    } else if (tok == "au_occurrence") {
      c.au_occurrence = true;
    } else if (tok == "au_intensity") {
      c.au_intensity = true;
    } else if (tok == "audio") {
      c.audio = true;
    } else {
      throw ConfigError("unknown feature family '" + std::string(tok) + "' in combo '" +
                        std::string(text) + "'");
    }
    start = end + 1;
  }
  return c;
}

std::vector<NamedCombo> feature_type_combos() {
  return {
      {"Only audio", {false, false, false, true}},
      {"Only AU", {false, true, true, false}},
      {"Only ResNet18", {true, false, false, false}},
      {"ResNet18 + AU", {true, true, true, false}},
      {"ResNet18 + audio", {true, false, false, true}},
      {"ResNet18 + AU + audio", {true, true, true, true}},
  };
}

std::vector<NamedCombo> au_type_combos() {
  return {
      {"AU occurrence", {true, true, false, true}},
      {"AU intensity", {true, false, true, true}},
      {"AU occurrence + intensity", {true, true, true, true}},
  };
}

std::vector<std::size_t> visual_columns(const FeatureCombo& combo, const VisualLayout& layout) {
  std::vector<std::size_t> cols;
  auto range = [&](std::size_t from, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) cols.push_back(from + i);
  };
  if (combo.resnet) range(0, layout.holistic);
  if (combo.au_occurrence) range(layout.holistic, layout.au_units);
  if (combo.au_intensity) range(layout.holistic + layout.au_units, layout.au_units);
  return cols;
}

void apply_combo_dims(ModelConfig& cfg, const FeatureCombo& combo, const VisualLayout& layout,
                      std::size_t audio_width) {
  if (combo.empty()) throw ConfigError("feature combo is empty");
  if ((combo.au_occurrence || combo.au_intensity) && layout.au_units == 0) {
    throw ConfigError("combo '" + combo.key() + "' needs AU columns but the visual layout has none");
  }
  if (combo.resnet && layout.holistic == 0) {
    throw ConfigError("combo '" + combo.key() + "' needs holistic columns but the visual layout has none");
  }
  cfg.visual_dim = visual_columns(combo, layout).size();
  cfg.audio_dim = combo.audio ? audio_width : 0;
}

ModelSample select_feature_combo(const Sample& sample, const FeatureCombo& combo,
                                 const VisualLayout& layout) {
  if (combo.empty()) throw ConfigError("feature combo is empty");
  ModelSample out;
  out.id = sample.id;
  out.split = sample.split;
  out.label = sample.label;
  if (combo.any_visual()) {
    if (sample.visual.data.cols != layout.width()) {
      throw DataError("sample '" + sample.id + "': visual features have " +
                      std::to_string(sample.visual.data.cols) + " columns, layout expects " +
                      std::to_string(layout.width()));
    }
    const FeatureSequence kept = filter_valid_frames(sample.visual);
    const auto cols = visual_columns(combo, layout);
    FeatureMatrix v(kept.data.rows, cols.size());
    for (std::size_t r = 0; r < kept.data.rows; ++r)
      for (std::size_t c = 0; c < cols.size(); ++c) v.at(r, c) = kept.data.at(r, cols[c]);
    out.valid = v.rows > 0;
    out.video = std::move(v);
  }
  if (combo.audio) {
    out.audio = sample.audio.data;
    out.valid = out.valid && sample.audio.data.rows > 0;
  }
  return out;
}

std::vector<ModelSample> prepare_split(const Dataset& ds, Split split, const FeatureCombo& combo) {
  std::vector<ModelSample> out;
  for (const Sample* s : ds.split(split)) out.push_back(select_feature_combo(*s, combo, ds.layout));
  return out;
}

}  // namespace eri
