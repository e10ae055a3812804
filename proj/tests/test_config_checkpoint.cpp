// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "eri/checkpoint.hpp"
#include "eri/errors.hpp"
#include "eri/run_config.hpp"
#include "test_util.hpp"

namespace eri {
namespace {

using testing::TempDir;

TEST(RunConfig, DefaultsFollowTheReferenceSettings) {
  const RunConfig c;
  EXPECT_EQ(c.model.gru_layers, 2u);
  EXPECT_EQ(c.model.encoder_blocks, 4u);
  EXPECT_EQ(c.model.heads, 4u);
  EXPECT_EQ(c.model.hidden, 256u);
  EXPECT_EQ(c.model.dropout, 0.2);
  EXPECT_EQ(c.train.lr0, 1e-4);
  EXPECT_EQ(c.train.weight_decay, 0.5);
  EXPECT_EQ(c.train.min_valid_frames, 50u);
}

TEST(RunConfig, ParsesCommentsBlanksAndWhitespace) {
  const std::string text =
      "# toy run\n"
      "\n"
      "model.hidden = 32\n"
      "train.lr0=3e-3\n"
      "  data.combo = resnet+audio  \n"
      "model.pooling=mean\n"
      "train.select_best_val=true\n"
      "data.eval_split=test\n"
      "synth.routing=family\n";
  const RunConfig c = parse_run_config(text, "toy.cfg");
  EXPECT_EQ(c.model.hidden, 32u);
  EXPECT_EQ(c.train.lr0, 3e-3);
  EXPECT_EQ(c.combo, "resnet+audio");
  EXPECT_EQ(c.model.pooling, Pooling::mean);
  EXPECT_TRUE(c.train.select_best_val);
  EXPECT_EQ(c.eval_split, Split::test);
  EXPECT_EQ(c.synth.routing, synth::Routing::family);
}

TEST(RunConfig, ErrorsNameFileLineAndKey) {
  auto message = [](const std::string& text) {
    try {
      parse_run_config(text, "run.cfg");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  std::string m = message("model.hidden=8\nmodel.hiden=8\n");
  EXPECT_NE(m.find("run.cfg:2"), std::string::npos) << m;
  EXPECT_NE(m.find("model.hiden"), std::string::npos) << m;
  m = message("train.epochs=-3\n");
  EXPECT_NE(m.find("train.epochs"), std::string::npos) << m;
  EXPECT_NE(message("train.lr0=fast\n"), "");
  EXPECT_NE(message("just words\n"), "");
  EXPECT_NE(message("train.select_best_val=maybe\n"), "");
  EXPECT_THROW(read_run_config("/nonexistent/run.cfg"), ConfigError);
}

TEST(RunConfig, OverridesApplyAfterFile) {
  RunConfig c = parse_run_config("model.hidden=32\n", "f");
  apply_override(c, "model.hidden=64");
  apply_override(c, "paths.output_dir=/tmp/x");
  EXPECT_EQ(c.model.hidden, 64u);
  EXPECT_EQ(c.output_dir, "/tmp/x");
  EXPECT_THROW(apply_override(c, "model.hidden"), ConfigError);
  EXPECT_THROW(apply_override(c, "nope=1"), ConfigError);
}

TEST(RunConfig, TextRoundTrips) {
  RunConfig c;
  c.model.hidden = 48;
  c.model.dropout = 0.1234567890123;
  c.train.lr0 = 2.5e-5;
  c.synth.noise_sigma = 0.6;
  c.manifest = "data/manifest.json";
  c.eval_split = Split::test;
  const std::string text = c.to_text();
  const RunConfig back = parse_run_config(text, "echo");
  EXPECT_EQ(back.to_text(), text);
  EXPECT_EQ(back.model.dropout, c.model.dropout);
  EXPECT_NE(c.section_text("model.").find("hidden=48\n"), std::string::npos);
  EXPECT_EQ(c.section_text("model.").find("train."), std::string::npos);
}

ModelConfig toy() {
  ModelConfig m;
  m.visual_dim = 5;
  m.audio_dim = 3;
  m.gru_layers = 1;
  m.hidden = 4;
  m.encoder_blocks = 1;
  m.heads = 2;
  m.seed = 21;
  return m;
}

std::vector<std::uint8_t> bytes_of(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& b) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

TEST(Checkpoint, ModelRoundTripsAtFloatPrecision) {
  TempDir dir("ckpt");
  EriModel m(toy());
  save_checkpoint(dir.path() / "m.eri", m);
  Checkpoint ck = load_checkpoint(dir.path() / "m.eri");
  EXPECT_FALSE(ck.optimizer.has_value());
  EXPECT_EQ(model_config_to_text(ck.model.config()), model_config_to_text(m.config()));
  ASSERT_EQ(ck.model.params().size(), m.params().size());
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const auto& a = m.params().at(i).data;
    const auto& b = ck.model.params().at(i).data;
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_EQ(b[j], static_cast<double>(static_cast<float>(a[j])));
  }
  // Saving the loaded model reproduces the file byte for byte.
  save_checkpoint(dir.path() / "again.eri", ck.model);
  EXPECT_EQ(bytes_of(dir.path() / "m.eri"), bytes_of(dir.path() / "again.eri"));
}

TEST(Checkpoint, OptimizerStateRoundTrips) {
  TempDir dir("ckpt_opt");
  EriModel m(toy());
  AdamW opt({0.8, 0.99, 1e-7, 0.25});
  std::mt19937_64 rng(1);
  for (auto& e : m.params().entries())
    e.tensor.grad = testing::random_tensor(e.tensor.rows(), e.tensor.cols(), rng).data;
  opt.step(m.params(), 1e-3);
  opt.step(m.params(), 1e-3);
  save_checkpoint(dir.path() / "m.eri", m, &opt);
  Checkpoint ck = load_checkpoint(dir.path() / "m.eri");
  ASSERT_TRUE(ck.optimizer.has_value());
  EXPECT_EQ(ck.optimizer->steps(), 2u);
  EXPECT_EQ(ck.optimizer->options().beta1, 0.8);
  EXPECT_EQ(ck.optimizer->options().weight_decay, 0.25);
  EXPECT_EQ(ck.optimizer->first_moments(), opt.first_moments());
  EXPECT_EQ(ck.optimizer->second_moments(), opt.second_moments());
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  TempDir dir("ckpt_bad");
  EriModel m(toy());
  save_checkpoint(dir.path() / "m.eri", m);
  const auto good = bytes_of(dir.path() / "m.eri");

  auto bad = good;
  bad[0] = 'X';
  write_bytes(dir.path() / "magic.eri", bad);
  try {
    load_checkpoint(dir.path() / "magic.eri");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 0"), std::string::npos);
  }

  bad = good;
  bad.resize(good.size() - 9);
  write_bytes(dir.path() / "short.eri", bad);
  EXPECT_THROW(load_checkpoint(dir.path() / "short.eri"), FormatError);

  bad = good;
  bad.push_back(0);
  write_bytes(dir.path() / "long.eri", bad);
  EXPECT_THROW(load_checkpoint(dir.path() / "long.eri"), FormatError);

  EXPECT_THROW(load_checkpoint(dir.path() / "absent.eri"), DataError);
}

TEST(Checkpoint, ConfigTextRoundTrips) {
  ModelConfig m = toy();
  m.pooling = Pooling::mean;
  m.dropout = 0.35;
  const ModelConfig back = model_config_from_text(model_config_to_text(m));
  EXPECT_EQ(back.pooling, Pooling::mean);
  EXPECT_EQ(back.dropout, 0.35);
  EXPECT_EQ(back.visual_dim, 5u);
  EXPECT_THROW(model_config_from_text("hidden\n"), ConfigError);
}

}  // namespace
}  // namespace eri
