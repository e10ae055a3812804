// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "eri/errors.hpp"
#include "eri/model.hpp"
#include "test_util.hpp"

namespace eri {
namespace {

using testing::random_features;

ModelConfig toy_config() {
  ModelConfig c;
  c.visual_dim = 6;
  c.audio_dim = 5;
  c.gru_layers = 2;
  c.hidden = 8;
  c.encoder_blocks = 2;
  c.heads = 2;
  c.dropout = 0.2;
  c.seed = 11;
  return c;
}

// Closed-form parameter count for one stream.
std::size_t stream_params(std::size_t in, std::size_t h, std::size_t layers, std::size_t blocks,
                          std::size_t ff) {
  std::size_t n = 3 * (in * h + h * h + h);
  n += (layers - 1) * 3 * (h * h + h * h + h);
  const std::size_t dff = ff * h;
  n += blocks * (4 * h * h + 4 * h + h * dff + dff + dff * h + h);
  return n + h;  // regression token
}

TEST(Model, ParameterCountMatchesClosedForm) {
  const ModelConfig c = toy_config();
  EriModel m(c);
  const std::size_t want = stream_params(6, 8, 2, 2, 4) + stream_params(5, 8, 2, 2, 4) + 16 * 7 + 7;
  EXPECT_EQ(m.params().parameter_count(), want);
}

TEST(Model, SameSeedSameWeightsAndOutputs) {
  EriModel a(toy_config()), b(toy_config());
  ASSERT_EQ(a.params().size(), b.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) EXPECT_EQ(a.params().at(i).data, b.params().at(i).data);
  std::mt19937_64 rng(1);
  auto v = random_features(9, 6, rng);
  auto au = random_features(3, 5, rng);
  ModelInput in{&v, &au};
  EXPECT_EQ(a.predict({&in, 1}), b.predict({&in, 1}));
  ModelConfig other = toy_config();
  other.seed = 12;
  EriModel c(other);
  EXPECT_NE(a.params().at(0).data, c.params().at(0).data);
}

TEST(Model, HeadsMustDivideHidden) {
  ModelConfig c;
  c.hidden = 256;
  c.heads = 3;
  EXPECT_THROW(EriModel{c}, ConfigError);
  c.heads = 4;
  c.visual_dim = 0;
  c.audio_dim = 0;
  EXPECT_THROW(EriModel{c}, ConfigError);
}

TEST(Model, SevenOutputsStrictlyInsideUnitInterval) {
  EriModel m(toy_config());
  std::mt19937_64 rng(2);
  std::vector<FeatureMatrix> vs, as;
  for (std::size_t i = 0; i < 4; ++i) {
    vs.push_back(random_features(3 + 2 * i, 6, rng));
    as.push_back(random_features(1 + i, 5, rng));
  }
  std::vector<ModelInput> in;
  for (std::size_t i = 0; i < 4; ++i) in.push_back({&vs[i], &as[i]});
  auto p = m.predict(in);
  ASSERT_EQ(p.size(), 4u);
  for (const auto& row : p) {
    ASSERT_EQ(row.size(), kNumEmotions);
    for (double x : row) {
      EXPECT_GT(x, 0.0);
      EXPECT_LT(x, 1.0);
    }
  }
}

TEST(Model, BatchingAndPaddingDoNotChangePredictions) {
  EriModel m(toy_config());
  std::mt19937_64 rng(3);
  std::vector<FeatureMatrix> vs, as;
  for (std::size_t i = 0; i < 5; ++i) {
    vs.push_back(random_features(2 + 3 * i, 6, rng));
    as.push_back(random_features(5 - i, 5, rng));
  }
  std::vector<ModelInput> in;
  for (std::size_t i = 0; i < 5; ++i) in.push_back({&vs[i], &as[i]});
  auto batched = m.predict(in);
  for (std::size_t i = 0; i < 5; ++i) {
    auto single = m.predict({&in[i], 1});
    for (std::size_t e = 0; e < kNumEmotions; ++e) EXPECT_NEAR(batched[i][e], single[0][e], 1e-12);
  }
}

TEST(Model, ZeroReadoutGivesOneHalf) {
  EriModel m(toy_config());
  m.params().get("readout.w").data.assign(16 * 7, 0.0);
  std::mt19937_64 rng(4);
  auto v = random_features(4, 6, rng);
  auto a = random_features(4, 5, rng);
  ModelInput in{&v, &a};
  const auto p = m.predict({&in, 1});
  for (double x : p[0]) EXPECT_EQ(x, 0.5);
}

TEST(Model, EveryParameterReceivesGradient) {
  ModelConfig c = toy_config();
  c.dropout = 0.0;
  EriModel m(c);
  std::mt19937_64 rng(5);
  auto v1 = random_features(5, 6, rng), v2 = random_features(3, 6, rng);
  auto a1 = random_features(4, 5, rng), a2 = random_features(6, 5, rng);
  std::vector<ModelInput> in = {{&v1, &a1}, {&v2, &a2}};
  ad::Tape tape;
  auto mb = m.make_batch(in);
  ad::Var y = m.forward(tape, mb, layers::Mode::train, &rng);
  tape.backward(testing::project(y, 9));
  for (const auto& e : m.params().entries()) {
    ASSERT_TRUE(e.tensor.grad.has_value()) << e.name;
    double mag = 0.0;
    for (double g : *e.tensor.grad) mag += std::abs(g);
    EXPECT_GT(mag, 0.0) << e.name;
  }
}

TEST(Model, SingleStreamModels) {
  ModelConfig c = toy_config();
  c.audio_dim = 0;
  EriModel video_only(c);
  std::mt19937_64 rng(6);
  auto v = random_features(4, 6, rng);
  ModelInput in{&v, nullptr};
  EXPECT_EQ(video_only.predict({&in, 1})[0].size(), kNumEmotions);
  EXPECT_FALSE(video_only.params().contains("audio.gru.layer0.w_z"));
  ModelInput missing{nullptr, nullptr};
  EXPECT_THROW(video_only.make_batch({&missing, 1}), ArgumentError);
  auto wrong = random_features(4, 7, rng);
  ModelInput bad{&wrong, nullptr};
  EXPECT_THROW(video_only.make_batch({&bad, 1}), ShapeError);
}

TEST(Model, MeanPoolingHasNoEncoder) {
  ModelConfig c = toy_config();
  c.pooling = Pooling::mean;
  EriModel m(c);
  EXPECT_FALSE(m.params().contains("video.encoder.reg_token"));
  EXPECT_EQ(m.params().parameter_count(), 2 * 3 * (8 * 8 + 8 * 8 + 8) + 3 * (6 * 8 + 8 * 8 + 8) +
                                              3 * (5 * 8 + 8 * 8 + 8) + 16 * 7 + 7);
}

TEST(Model, ParsePooling) {
  EXPECT_EQ(parse_pooling("mean"), Pooling::mean);
  EXPECT_EQ(to_string(parse_pooling("regression_token")), "regression_token");
  EXPECT_THROW(parse_pooling("max"), ConfigError);
}

}  // namespace
}  // namespace eri
