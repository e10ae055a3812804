// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "eri/errors.hpp"
#include "eri/features.hpp"
#include "test_util.hpp"

namespace eri {
namespace {

using testing::TempDir;

// Values exactly representable in f32, so the stored payload is lossless.
FeatureMatrix f32_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  FeatureMatrix m = testing::random_features(rows, cols, rng);
  for (auto& v : m.values) v = static_cast<float>(v);
  return m;
}

FeatureSequence seq_with(std::vector<unsigned char> valid, std::size_t cols = 2) {
  FeatureSequence s;
  s.data = FeatureMatrix(valid.size(), cols);
  for (std::size_t r = 0; r < valid.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) s.data.at(r, c) = 10.0 * r + c;
  s.valid = std::move(valid);
  return s;
}

TEST(Fmx, SmallMatrixRoundTrips) {
  FeatureMatrix m(3, 2, {1.5, -2.0, 0.25, 3.0, 1e-3f, 7.0});
  auto bytes = encode_fmx(m);
  EXPECT_EQ(bytes.size(), 4u + 4 + 4 + 1 + 6 * 4);
  EXPECT_EQ(std::memcmp(bytes.data(), "FMX1", 4), 0);
  auto back = decode_fmx(bytes, "mem");
  EXPECT_EQ(back.matrix, m);
  EXPECT_FALSE(back.mask.has_value());
}

TEST(Fmx, FileRoundTripWithMaskIsBitExact) {
  TempDir dir("fmx");
  FeatureMatrix m = f32_matrix(17, 9, 3);
  std::vector<unsigned char> mask(17, 1);
  mask[4] = mask[11] = 0;
  write_fmx(dir.path() / "a.fmx", m, &mask);
  FmxFile f = read_fmx(dir.path() / "a.fmx");
  ASSERT_EQ(f.matrix.values.size(), m.values.size());
  for (std::size_t i = 0; i < m.values.size(); ++i) {
    EXPECT_EQ(std::memcmp(&f.matrix.values[i], &m.values[i], sizeof(double)), 0);
  }
  EXPECT_EQ(*f.mask, mask);
  EXPECT_EQ(load_feature_matrix(dir.path() / "a.fmx"), m);
}

TEST(Fmx, TruncatedPayloadReportsOffset) {
  // Header claims 10 x 546, payload carries 9 rows.
  FeatureMatrix m = f32_matrix(10, 546, 1);
  auto bytes = encode_fmx(m);
  bytes.resize(13 + 9 * 546 * 4);
  try {
    decode_fmx(bytes, "clip.fmx");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("clip.fmx"), std::string::npos) << msg;
    EXPECT_NE(msg.find("offset"), std::string::npos) << msg;
  }
}

TEST(Fmx, NonFiniteRejected) {
  FeatureMatrix m(2, 2, {1.0, 2.0, 3.0, 4.0});
  auto bytes = encode_fmx(m);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + 13 + 2 * 4, &nan, 4);
  EXPECT_THROW(decode_fmx(bytes, "x"), FormatError);
  const float inf = std::numeric_limits<float>::infinity();
  bytes = encode_fmx(m);
  std::memcpy(bytes.data() + 13, &inf, 4);
  EXPECT_THROW(decode_fmx(bytes, "x"), FormatError);
}

TEST(Fmx, MalformedHeaders) {
  auto bytes = encode_fmx(FeatureMatrix(1, 1, {1.0}));
  auto bad = bytes;
  bad[0] = 'G';
  EXPECT_THROW(decode_fmx(bad, "x"), FormatError);
  EXPECT_THROW(decode_fmx(std::span(bytes.data(), 7), "x"), FormatError);
  auto extra = bytes;
  extra.push_back(0);
  EXPECT_THROW(decode_fmx(extra, "x"), FormatError);
  auto masked = encode_fmx(FeatureMatrix(1, 1, {1.0}), nullptr);
  masked[12] = 1;
  masked.push_back(2);
  EXPECT_THROW(decode_fmx(masked, "x"), FormatError);
}

TEST(FilterValidFrames, Examples) {
  auto all = seq_with({1, 1, 1});
  std::size_t removed = 99;
  auto same = filter_valid_frames(all, &removed);
  EXPECT_EQ(same.data, all.data);
  EXPECT_EQ(removed, 0u);

  auto out = filter_valid_frames(seq_with({1, 0, 1}), &removed);
  ASSERT_EQ(out.data.rows, 2u);
  EXPECT_EQ(removed, 1u);
  EXPECT_EQ(out.data.at(0, 0), 0.0);
  EXPECT_EQ(out.data.at(1, 0), 20.0);
  EXPECT_EQ(out.data.at(1, 1), 21.0);

  auto none = filter_valid_frames(seq_with({0, 0, 0, 0}));
  EXPECT_EQ(none.data.rows, 0u);
  EXPECT_EQ(none.data.cols, 2u);
  EXPECT_EQ(none.valid_count(), 0u);
}

TEST(FilterValidFrames, Idempotent) {
  std::mt19937_64 rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<unsigned char> v(1 + rng() % 30);
    for (auto& x : v) x = rng() % 3 != 0;
    auto once = filter_valid_frames(seq_with(v, 3));
    auto twice = filter_valid_frames(once);
    EXPECT_EQ(once.data, twice.data);
    EXPECT_EQ(once.valid, twice.valid);
  }
}

Sample sample_with_valid(const std::string& id, Split split, std::size_t valid, std::size_t total) {
  Sample s;
  s.id = id;
  s.split = split;
  std::vector<unsigned char> v(total, 0);
  std::fill(v.begin(), v.begin() + valid, 1);
  s.visual = seq_with(v, 1);
  return s;
}

TEST(TrainingFilter, FiftyFrameBoundary) {
  Dataset ds;
  ds.samples.push_back(sample_with_valid("t49", Split::train, 49, 60));
  ds.samples.push_back(sample_with_valid("t50", Split::train, 50, 60));
  ds.samples.push_back(sample_with_valid("test0", Split::test, 0, 30));
  ds.samples.push_back(sample_with_valid("val3", Split::val, 3, 30));
  std::vector<std::string> removed;
  Dataset out = apply_training_filter(ds, 50, &removed);
  ASSERT_EQ(out.samples.size(), 3u);
  EXPECT_EQ(out.samples[0].id, "t50");
  EXPECT_EQ(out.samples[1].id, "test0");
  EXPECT_EQ(removed, std::vector<std::string>{"t49"});

  // The kept test sample reaches the model flagged invalid.
  ds.layout = {1, 0};
  FeatureCombo resnet;
  resnet.resnet = true;
  EXPECT_FALSE(select_feature_combo(out.samples[1], resnet, ds.layout).valid);
}

TEST(FeatureCombo, DimensionsOfTableRows) {
  const VisualLayout layout;
  EXPECT_EQ(layout.width(), 546u);
  struct Case {
    const char* text;
    std::size_t visual, audio;
  } cases[] = {{"resnet+au_occurrence+au_intensity+audio", 546, 1024},
               {"au_occurrence+au_intensity", 34, 0},
               {"resnet", 512, 0},
               {"audio", 0, 1024},
               {"all", 546, 1024}};
  for (const auto& c : cases) {
    ModelConfig mc;
    apply_combo_dims(mc, FeatureCombo::parse(c.text), layout, 1024);
    EXPECT_EQ(mc.visual_dim, c.visual) << c.text;
    EXPECT_EQ(mc.audio_dim, c.audio) << c.text;
  }
  EXPECT_EQ(FeatureCombo::parse("au"), FeatureCombo::parse("au_occurrence+au_intensity"));
  EXPECT_EQ(FeatureCombo::parse("all").key(), "resnet+au_occurrence+au_intensity+audio");
  EXPECT_THROW(FeatureCombo::parse("resnet+pose"), ConfigError);
  EXPECT_THROW(FeatureCombo::parse(""), ConfigError);
  ModelConfig mc;
  EXPECT_THROW(apply_combo_dims(mc, FeatureCombo{}, layout, 1024), ConfigError);
  EXPECT_THROW(apply_combo_dims(mc, FeatureCombo::parse("au"), VisualLayout{32, 0}, 8), ConfigError);
}

TEST(FeatureCombo, AblationTables) {
  const auto ft = feature_type_combos();
  ASSERT_EQ(ft.size(), 6u);
  EXPECT_EQ(ft.back().combo, FeatureCombo::parse("all"));
  const auto au = au_type_combos();
  ASSERT_EQ(au.size(), 3u);
  for (const auto& r : au) EXPECT_TRUE(r.combo.resnet && r.combo.audio) << r.label;
}

TEST(FeatureCombo, VisualColumnsPartitionTheLayout) {
  const VisualLayout layout;
  auto occ = visual_columns(FeatureCombo::parse("au_occurrence"), layout);
  auto inten = visual_columns(FeatureCombo::parse("au_intensity"), layout);
  auto res = visual_columns(FeatureCombo::parse("resnet"), layout);
  EXPECT_EQ(occ.front(), 512u);
  EXPECT_EQ(occ.back(), 528u);
  EXPECT_EQ(inten.front(), 529u);
  EXPECT_EQ(inten.back(), 545u);
  std::vector<std::size_t> all = res;
  all.insert(all.end(), occ.begin(), occ.end());
  all.insert(all.end(), inten.begin(), inten.end());
  EXPECT_EQ(all, visual_columns(FeatureCombo::parse("all"), layout));
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i], i);
}

TEST(SelectFeatureCombo, SlicesColumnsAndDropsInvalidFrames) {
  Sample s;
  s.id = "s";
  s.visual = seq_with({1, 0, 1, 1}, 5);  // layout 1 + 2*2
  s.audio.data = FeatureMatrix(2, 3);
  s.audio.valid = {1, 1};
  const VisualLayout layout{1, 2};
  auto m = select_feature_combo(s, FeatureCombo::parse("au_intensity"), layout);
  ASSERT_TRUE(m.video.has_value());
  EXPECT_FALSE(m.audio.has_value());
  ASSERT_EQ(m.video->rows, 3u);
  ASSERT_EQ(m.video->cols, 2u);
  EXPECT_EQ(m.video->at(1, 0), 23.0);
  EXPECT_EQ(m.video->at(1, 1), 24.0);
  EXPECT_TRUE(m.valid);
  auto a = select_feature_combo(s, FeatureCombo::parse("audio"), layout);
  EXPECT_FALSE(a.video.has_value());
  EXPECT_EQ(a.audio->rows, 2u);
  EXPECT_THROW(select_feature_combo(s, FeatureCombo{}, layout), ConfigError);
  EXPECT_THROW(select_feature_combo(s, FeatureCombo::parse("resnet"), VisualLayout{2, 2}), DataError);
}

TEST(Labels, Normalization) {
  std::array<double, 7> hundred = {50, 0, 100, 25, 1, 99, 12.5};
  auto n = normalize_labels(hundred, LabelScale::hundred, "a");
  EXPECT_EQ(n[0], 0.5);
  EXPECT_EQ(n[2], 1.0);
  EXPECT_EQ(n[6], 0.125);
  std::array<double, 7> unit = {0.455, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  auto u = normalize_labels(unit, LabelScale::unit, "b");
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(u[i], unit[i]);
  hundred[3] = 150;
  try {
    normalize_labels(hundred, LabelScale::hundred, "clip_042");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("clip_042"), std::string::npos);
  }
  unit[0] = -0.1;
  EXPECT_THROW(normalize_labels(unit, LabelScale::unit, "c"), DataError);
  EXPECT_THROW(normalize_labels(std::span(unit.data(), 6), LabelScale::unit, "c"), DataError);
}

class ManifestTest : public ::testing::Test {
 protected:
  TempDir dir{"manifest"};

  Manifest two_samples() {
    write_fmx(dir.path() / "v0.fmx", f32_matrix(4, 5, 1));
    write_fmx(dir.path() / "a0.fmx", f32_matrix(2, 3, 2));
    std::vector<unsigned char> mask = {1, 0, 1};
    write_fmx(dir.path() / "v1.fmx", f32_matrix(3, 5, 3), &mask);
    std::vector<unsigned char> audio_mask = {0};
    write_fmx(dir.path() / "a1.fmx", f32_matrix(1, 3, 4), &audio_mask);  // stray audio mask is ignored
    Manifest m;
    m.label_scale = LabelScale::hundred;
    m.visual_layout = {1, 2};
    m.samples.push_back({"x0", Split::train, "v0.fmx", "a0.fmx", {10, 20, 30, 40, 50, 60, 70}});
    m.samples.push_back({"x1", Split::test, "v1.fmx", "a1.fmx", {0, 0, 0, 0, 0, 0, 100}});
    return m;
  }
};

TEST_F(ManifestTest, LoadsInOrder) {
  write_manifest(dir.path() / "manifest.json", two_samples());
  Dataset ds = load_dataset(dir.path() / "manifest.json");
  ASSERT_EQ(ds.samples.size(), 2u);
  EXPECT_EQ(ds.layout, (VisualLayout{1, 2}));
  EXPECT_EQ(ds.samples[0].label[2], 0.3);
  EXPECT_EQ(ds.samples[1].visual.valid, (std::vector<unsigned char>{1, 0, 1}));
  EXPECT_EQ(ds.samples[1].audio.valid, (std::vector<unsigned char>(1, 1)));
  EXPECT_EQ(ds.split(Split::test).size(), 1u);
}

TEST_F(ManifestTest, RoundTripsThroughJson) {
  Manifest m = two_samples();
  Manifest back = parse_manifest(manifest_to_json(m), "m");
  ASSERT_EQ(back.samples.size(), 2u);
  EXPECT_EQ(back.samples[1].labels, m.samples[1].labels);
  EXPECT_EQ(back.visual_layout, m.visual_layout);
}

TEST_F(ManifestTest, Errors) {
  Manifest m = two_samples();
  m.samples[1].id = "x0";
  write_manifest(dir.path() / "dup.json", m);
  EXPECT_THROW(load_dataset(dir.path() / "dup.json"), DataError);

  m = two_samples();
  m.samples[0].audio = "missing.fmx";
  write_manifest(dir.path() / "missing.json", m);
  EXPECT_THROW(load_dataset(dir.path() / "missing.json"), DataError);

  m = two_samples();
  m.samples[0].labels[0] = 150;
  write_manifest(dir.path() / "range.json", m);
  EXPECT_THROW(load_dataset(dir.path() / "range.json"), DataError);

  EXPECT_THROW(parse_manifest("{not json", "m"), FormatError);
  EXPECT_THROW(parse_manifest(R"({"version":1,"label_scale":"unit"})", "m"), FormatError);
  EXPECT_THROW(parse_manifest(R"({"version":1,"label_scale":"percent","samples":[]})", "m"), DataError);
  EXPECT_THROW(parse_manifest(
                   R"({"version":1,"label_scale":"unit","samples":[{"id":"a","split":"train","visual":"v","audio":"a","labels":[1,2]}]})",
                   "m"),
               DataError);
  EXPECT_THROW(load_dataset(dir.path() / "nope.json"), DataError);
}

TEST(Splits, ParseAndPrint) {
  for (Split s : {Split::train, Split::val, Split::test}) EXPECT_EQ(parse_split(to_string(s)), s);
  EXPECT_THROW(parse_split("dev"), DataError);
}

}  // namespace
}  // namespace eri
