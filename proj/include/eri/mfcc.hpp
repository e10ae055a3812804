// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

// MFCC front end for the audio stream: 30 ms Hann frames every 16 ms at
// 16 kHz, 64 triangular mel filters, log, orthonormal DCT-II, 32 cepstra.
// Consecutive frames are then packed into 32-frame tokens of 1024 values.

#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "eri/feature_matrix.hpp"

namespace eri::audio {

struct MfccConfig {
  double sample_rate = 16000.0;
  std::size_t frame_len = 480;
  std::size_t hop = 256;
  std::size_t n_mels = 64;
  std::size_t n_mfcc = 32;
  std::size_t block = 32;
  double f_min = 0.0;
  double f_max = 8000.0;
  double log_floor = 1e-10;

  /// Throws ConfigError on inconsistent settings.
  void validate() const;
  std::size_t token_width() const { return n_mfcc * block; }
};

struct AudioSignal {
  std::vector<double> samples;
  double rate = 16000.0;
};

/// floor((n - frame_len) / hop) + 1, or 0 when n < frame_len.
std::size_t frame_count(std::size_t n, const MfccConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// n_mels x (frame_len/2 + 1) triangular weights on the DFT bin grid.
std::vector<std::vector<double>> mel_filterbank(const MfccConfig& cfg);

/// T_f x n_mfcc coefficients. Throws ArgumentError when the signal is shorter
/// than one frame or its rate differs from cfg.sample_rate.
FeatureMatrix mfcc(const AudioSignal& signal, const MfccConfig& cfg = {});

/// Packs non-overlapping runs of `block` frames into rows of block*n_mfcc
/// values; a trailing partial run is dropped. Fewer than `block` frames give
/// a single zero-padded row.
FeatureMatrix block_combine(const FeatureMatrix& frames, std::size_t block = 32);

/// Mono 16-bit PCM WAV, scaled to [-1, 1).
AudioSignal read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, const AudioSignal& signal);
/// Headerless little-endian f32 mono samples at the given rate.
AudioSignal read_raw_f32(const std::filesystem::path& path, double rate);

}  // namespace eri::audio
