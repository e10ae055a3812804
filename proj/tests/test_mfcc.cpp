// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>

#include "eri/errors.hpp"
#include "eri/mfcc.hpp"
#include "test_util.hpp"

namespace eri::audio {
namespace {

constexpr double kPi = std::numbers::pi;

AudioSignal tone(double hz, std::size_t n, double amp = 0.5) {
  AudioSignal s;
  s.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) s.samples[i] = amp * std::sin(2.0 * kPi * hz * i / 16000.0);
  return s;
}

AudioSignal noise(std::size_t n, std::uint64_t seed, double amp = 0.3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, amp);
  AudioSignal s;
  s.samples.resize(n);
  for (auto& x : s.samples) x = d(rng);
  return s;
}

// Straight-line evaluation of one frame: complex DFT, triangles written in Hz,
// log with floor, DCT-II with explicit orthonormal scaling.
std::vector<double> reference_frame(const std::vector<double>& sig, std::size_t start) {
  const std::size_t N = 480, bins = 241, mels = 64;
  std::vector<double> power(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t n = 0; n < N; ++n) {
      const double w = 0.5 * (1.0 - std::cos(2.0 * kPi * n / (N - 1)));
      acc += sig[start + n] * w * std::polar(1.0, -2.0 * kPi * double(k) * double(n) / N);
    }
    power[k] = std::norm(acc);
  }
  auto mel = [](double f) { return 1127.0 * std::log(1.0 + f / 700.0); };
  auto hz = [](double m) { return 700.0 * (std::exp(m / 1127.0) - 1.0); };
  std::vector<double> logmel(mels);
  for (std::size_t m = 0; m < mels; ++m) {
    const double l = hz(mel(8000.0) * m / 65.0), c = hz(mel(8000.0) * (m + 1) / 65.0),
                 r = hz(mel(8000.0) * (m + 2) / 65.0);
    double e = 0.0;
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = k * 16000.0 / N;
      e += std::max(0.0, std::min((f - l) / (c - l), (r - f) / (r - c))) * power[k];
    }
    logmel[m] = std::log(std::max(e, 1e-10));
  }
  std::vector<double> out(32);
  for (std::size_t q = 0; q < 32; ++q) {
    double s = 0.0;
    for (std::size_t m = 0; m < mels; ++m) s += logmel[m] * std::cos(kPi * q * (2.0 * m + 1) / (2.0 * mels));
    out[q] = s * std::sqrt((q == 0 ? 1.0 : 2.0) / mels);
  }
  return out;
}

TEST(FrameCount, OneSecondGivesSixtyOne) {
  EXPECT_EQ(frame_count(16000, {}), 61u);
  const auto m = mfcc(noise(16000, 1));
  EXPECT_EQ(m.rows, 61u);
  EXPECT_EQ(m.cols, 32u);
}

TEST(FrameCount, FormulaOverRandomLengths) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = 480 + rng() % 40000;
    // Count frame starts directly.
    std::size_t count = 0;
    for (std::size_t s = 0; s + 480 <= n; s += 256) ++count;
    EXPECT_EQ(frame_count(n, {}), count) << n;
  }
  EXPECT_EQ(frame_count(479, {}), 0u);
  EXPECT_EQ(frame_count(480, {}), 1u);
  EXPECT_EQ(frame_count(735, {}), 1u);
  EXPECT_EQ(frame_count(736, {}), 2u);
}

TEST(Mfcc, MatchesStraightLineReference) {
  const auto sig = noise(480 + 256 * 3, 3);
  const auto m = mfcc(sig);
  ASSERT_EQ(m.rows, 4u);
  for (std::size_t f : {0u, 3u}) {
    const auto want = reference_frame(sig.samples, f * 256);
    for (std::size_t q = 0; q < 32; ++q) EXPECT_NEAR(m.at(f, q), want[q], 1e-8) << f << "," << q;
  }
}

TEST(Mfcc, SilenceHitsTheFloor) {
  AudioSignal s;
  s.samples.assign(16000, 0.0);
  const auto m = mfcc(s);
  const double c0 = 8.0 * std::log(1e-10);  // sqrt(1/64) * 64 * ln(floor)
  for (std::size_t f = 0; f < m.rows; ++f) {
    EXPECT_NEAR(m.at(f, 0), c0, 1e-9);
    for (std::size_t q = 1; q < 32; ++q) EXPECT_NEAR(m.at(f, q), 0.0, 1e-9);
  }
}

TEST(Mfcc, AmplitudeScalingShiftsOnlyC0) {
  const auto base = noise(8000, 4);
  AudioSignal loud = base;
  const double c = 3.0;
  for (auto& x : loud.samples) x *= c;
  const auto a = mfcc(base), b = mfcc(loud);
  for (std::size_t f = 0; f < a.rows; ++f) {
    EXPECT_NEAR(b.at(f, 0) - a.at(f, 0), 16.0 * std::log(c), 1e-6);
    for (std::size_t q = 1; q < 32; ++q) EXPECT_NEAR(b.at(f, q), a.at(f, q), 1e-6);
  }
}

TEST(Mfcc, TonesAtDifferentFilterCentresDiffer) {
  auto centre = [&](std::size_t m) { return mel_to_hz(hz_to_mel(8000.0) * (m + 1) / 65.0); };
  const auto a = mfcc(tone(centre(10), 4000));
  const auto b = mfcc(tone(centre(40), 4000));
  double dist = 0.0;
  for (std::size_t q = 0; q < 32; ++q) dist += std::pow(a.at(2, q) - b.at(2, q), 2);
  EXPECT_GT(std::sqrt(dist), 1.0);
}

TEST(Mfcc, Errors) {
  EXPECT_THROW(mfcc(noise(479, 1)), ArgumentError);
  AudioSignal wrong = noise(1000, 1);
  wrong.rate = 44100.0;
  EXPECT_THROW(mfcc(wrong), ArgumentError);
  AudioSignal bad = noise(1000, 1);
  bad.samples[10] = std::nan("");
  EXPECT_THROW(mfcc(bad), ArgumentError);
  MfccConfig cfg;
  cfg.n_mfcc = 65;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.f_max = 9000.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(MelFilterbank, EveryFilterHasWeight) {
  const auto fb = mel_filterbank({});
  ASSERT_EQ(fb.size(), 64u);
  for (std::size_t m = 0; m < 64; ++m) {
    ASSERT_EQ(fb[m].size(), 241u);
    double s = 0.0;
    for (double w : fb[m]) {
      EXPECT_GE(w, 0.0);
      EXPECT_LE(w, 1.0);
      s += w;
    }
    EXPECT_GT(s, 0.0) << "filter " << m;
  }
  EXPECT_NEAR(mel_to_hz(hz_to_mel(1234.5)), 1234.5, 1e-9);
  EXPECT_NEAR(hz_to_mel(1000.0), 1000.0, 0.5);
}

FeatureMatrix numbered_frames(std::size_t rows) {
  FeatureMatrix m(rows, 32);
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = static_cast<double>(i + 1);
  return m;
}

TEST(BlockCombine, Examples) {
  auto one = block_combine(numbered_frames(61));
  EXPECT_EQ(one.rows, 1u);
  EXPECT_EQ(one.cols, 1024u);
  EXPECT_EQ(one.values.back(), 1024.0);  // frame 31, last coefficient

  EXPECT_EQ(frame_count(185920, {}), 725u);
  auto many = block_combine(numbered_frames(725));
  EXPECT_EQ(many.rows, 22u);
  EXPECT_EQ(many.at(21, 0), 21.0 * 1024 + 1);

  auto padded = block_combine(numbered_frames(20));
  ASSERT_EQ(padded.rows, 1u);
  EXPECT_EQ(padded.at(0, 20 * 32 - 1), 640.0);
  for (std::size_t c = 20 * 32; c < 1024; ++c) EXPECT_EQ(padded.at(0, c), 0.0);
  EXPECT_THROW(block_combine(numbered_frames(4), 0), ArgumentError);
}

TEST(Files, WavRoundTrip) {
  testing::TempDir dir("wav");
  AudioSignal s = tone(440.0, 1000);
  write_wav(dir.path() / "t.wav", s);
  AudioSignal back = read_wav(dir.path() / "t.wav");
  EXPECT_EQ(back.rate, 16000.0);
  ASSERT_EQ(back.samples.size(), 1000u);
  for (std::size_t i = 0; i < 1000; ++i) EXPECT_NEAR(back.samples[i], s.samples[i], 1.0 / 32768.0);

  std::ofstream(dir.path() / "junk.wav") << "not audio";
  EXPECT_THROW(read_wav(dir.path() / "junk.wav"), FormatError);
}

TEST(Files, RawFloat) {
  testing::TempDir dir("raw");
  const std::vector<float> v = {0.5f, -0.25f, 1.0f};
  std::ofstream(dir.path() / "x.f32", std::ios::binary)
      .write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
  AudioSignal s = read_raw_f32(dir.path() / "x.f32", 8000.0);
  EXPECT_EQ(s.rate, 8000.0);
  EXPECT_EQ(s.samples, (std::vector<double>{0.5, -0.25, 1.0}));
}

}  // namespace
}  // namespace eri::audio
