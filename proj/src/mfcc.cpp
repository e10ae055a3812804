// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#include "eri/mfcc.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include "eri/errors.hpp"

namespace eri::audio {

namespace fs = std::filesystem;

void MfccConfig::validate() const {
  if (sample_rate <= 0.0) throw ConfigError("mfcc: sample rate must be positive");
  if (frame_len < 2 || hop == 0) throw ConfigError("mfcc: frame length must be >= 2 and hop positive");
  if (n_mels == 0 || n_mfcc == 0 || block == 0) throw ConfigError("mfcc: filter, coefficient and block counts must be positive");
  if (n_mfcc > n_mels) throw ConfigError("mfcc: n_mfcc exceeds n_mels");
  if (!(f_min >= 0.0 && f_max > f_min && f_max <= sample_rate / 2.0)) {
    throw ConfigError("mfcc: mel range must satisfy 0 <= f_min < f_max <= rate/2");
  }
  if (!(log_floor > 0.0)) throw ConfigError("mfcc: log floor must be positive");
}

std::size_t frame_count(std::size_t n, const MfccConfig& cfg) {
  if (n < cfg.frame_len) return 0;
  return (n - cfg.frame_len) / cfg.hop + 1;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<std::vector<double>> mel_filterbank(const MfccConfig& cfg) {
  cfg.validate();
  const std::size_t bins = cfg.frame_len / 2 + 1;
  const double lo = hz_to_mel(cfg.f_min);
  const double hi = hz_to_mel(cfg.f_max);
  std::vector<double> edges(cfg.n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  }
  std::vector<std::vector<double>> fb(cfg.n_mels, std::vector<double>(bins, 0.0));
  for (std::size_t m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / static_cast<double>(cfg.frame_len);
      double w = 0.0;
      if (f > left && f <= centre) {
        w = (f - left) / (centre - left);
      } else if (f > centre && f < right) {
        w = (right - f) / (right - centre);
      }
      fb[m][k] = w;
    }
  }
  return fb;
}

FeatureMatrix mfcc(const AudioSignal& signal, const MfccConfig& cfg) {
  cfg.validate();
  if (signal.rate != cfg.sample_rate) {
    throw ArgumentError("mfcc: signal rate " + std::to_string(signal.rate) + " Hz differs from configured " +
                        std::to_string(cfg.sample_rate) + " Hz (resample first)");
  }
  const std::size_t n = signal.samples.size();
  if (n < cfg.frame_len) {
    throw ArgumentError("mfcc: signal has " + std::to_string(n) + " samples, shorter than one frame of " +
                        std::to_string(cfg.frame_len));
  }
  for (double s : signal.samples)
    if (!std::isfinite(s)) throw ArgumentError("mfcc: signal contains a non-finite sample");

  const std::size_t N = cfg.frame_len;
  const std::size_t bins = N / 2 + 1;
  const double two_pi = 2.0 * std::numbers::pi;

  std::vector<double> window(N);
  for (std::size_t i = 0; i < N; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(two_pi * static_cast<double>(i) / static_cast<double>(N - 1));
  }
  // Twiddle table indexed by (k * i) mod N.
  std::vector<double> cos_t(N), sin_t(N);
  for (std::size_t i = 0; i < N; ++i) {
    cos_t[i] = std::cos(two_pi * static_cast<double>(i) / static_cast<double>(N));
    sin_t[i] = std::sin(two_pi * static_cast<double>(i) / static_cast<double>(N));
  }
  const auto fb = mel_filterbank(cfg);
  std::vector<std::vector<double>> dct(cfg.n_mfcc, std::vector<double>(cfg.n_mels));
  const double M = static_cast<double>(cfg.n_mels);
  for (std::size_t q = 0; q < cfg.n_mfcc; ++q) {
    const double scale = q == 0 ? std::sqrt(1.0 / M) : std::sqrt(2.0 / M);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      dct[q][m] = scale * std::cos(std::numbers::pi * static_cast<double>(q) * (static_cast<double>(m) + 0.5) / M);
    }
  }

  const std::size_t frames = frame_count(n, cfg);
  FeatureMatrix out(frames, cfg.n_mfcc);
  std::vector<double> x(N), power(bins), logmel(cfg.n_mels);
  for (std::size_t f = 0; f < frames; ++f) {
    const double* s = signal.samples.data() + f * cfg.hop;
    for (std::size_t i = 0; i < N; ++i) x[i] = s[i] * window[i];
    for (std::size_t k = 0; k < bins; ++k) {
      double re = 0.0, im = 0.0;
      std::size_t idx = 0;
      for (std::size_t i = 0; i < N; ++i) {
        re += x[i] * cos_t[idx];
        im -= x[i] * sin_t[idx];
        idx += k;
        if (idx >= N) idx -= N;
      }
      power[k] = re * re + im * im;
    }
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += fb[m][k] * power[k];
      logmel[m] = std::log(std::max(e, cfg.log_floor));
    }
    for (std::size_t q = 0; q < cfg.n_mfcc; ++q) {
      double c = 0.0;
      for (std::size_t m = 0; m < cfg.n_mels; ++m) c += dct[q][m] * logmel[m];
      out.at(f, q) = c;
    }
  }
  return out;
}

FeatureMatrix block_combine(const FeatureMatrix& frames, std::size_t block) {
  if (block == 0) throw ArgumentError("block_combine: block must be positive");
  const std::size_t width = block * frames.cols;
  const std::size_t blocks = std::max<std::size_t>(1, frames.rows / block);
  FeatureMatrix out(blocks, width);
  const std::size_t used = std::min(frames.rows, blocks * block);
  std::copy(frames.values.begin(), frames.values.begin() + static_cast<std::ptrdiff_t>(used * frames.cols),
            out.values.begin());
  return out;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::vector<std::uint8_t> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t u32_at(const std::vector<std::uint8_t>& b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | static_cast<std::uint32_t>(b[off + 1]) << 8 |
         static_cast<std::uint32_t>(b[off + 2]) << 16 | static_cast<std::uint32_t>(b[off + 3]) << 24;
}

std::uint16_t u16_at(const std::vector<std::uint8_t>& b, std::size_t off) {
  return static_cast<std::uint16_t>(b[off] | b[off + 1] << 8);
}

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>(v >> (8 * i)));
}

void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v));
  s.push_back(static_cast<char>(v >> 8));
}

}  // namespace

AudioSignal read_wav(const fs::path& path) {
  const auto b = slurp(path);
  const std::string src = path.string();
  auto fail = [&](std::size_t off, const std::string& what) {
    return FormatError(src + ": " + what + " at byte offset " + std::to_string(off));
  };
  if (b.size() < 12 || std::memcmp(b.data(), "RIFF", 4) != 0 || std::memcmp(b.data() + 8, "WAVE", 4) != 0) {
    throw fail(0, "not a RIFF/WAVE file");
  }
  std::size_t off = 12;
  bool have_fmt = false;
  double rate = 0.0;
  while (off + 8 <= b.size()) {
    const std::uint32_t size = u32_at(b, off + 4);
    const std::size_t body = off + 8;
    if (body + size > b.size()) throw fail(off, "chunk extends past end of file");
    if (std::memcmp(b.data() + off, "fmt ", 4) == 0) {
      if (size < 16) throw fail(off, "fmt chunk too short");
      if (u16_at(b, body) != 1) throw fail(body, "only PCM (format 1) is supported");
      if (u16_at(b, body + 2) != 1) throw fail(body + 2, "only mono audio is supported");
      rate = u32_at(b, body + 4);
      if (u16_at(b, body + 14) != 16) throw fail(body + 14, "only 16-bit samples are supported");
      have_fmt = true;
    } else if (std::memcmp(b.data() + off, "data", 4) == 0) {
      if (!have_fmt) throw fail(off, "data chunk before fmt chunk");
      if (size % 2 != 0) throw fail(off + 4, "odd data size for 16-bit samples");
      AudioSignal sig;
      sig.rate = rate;
      sig.samples.resize(size / 2);
      for (std::size_t i = 0; i < sig.samples.size(); ++i) {
        sig.samples[i] = static_cast<std::int16_t>(u16_at(b, body + 2 * i)) / 32768.0;
      }
      return sig;
    }
    off = body + size + (size & 1);
  }
  throw fail(off, "no data chunk");
}

void write_wav(const fs::path& path, const AudioSignal& signal) {
  std::string out;
  const auto data_bytes = static_cast<std::uint32_t>(signal.samples.size() * 2);
  const auto rate = static_cast<std::uint32_t>(signal.rate);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, 1);
  put_u32(out, rate);
  put_u32(out, rate * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (double s : signal.samples) {
    const double q = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

AudioSignal read_raw_f32(const fs::path& path, double rate) {
  const auto b = slurp(path);
  if (b.size() % 4 != 0) {
    throw FormatError(path.string() + ": size " + std::to_string(b.size()) +
                      " is not a multiple of 4 at byte offset " + std::to_string(b.size() - b.size() % 4));
  }
  AudioSignal sig;
  sig.rate = rate;
  sig.samples.resize(b.size() / 4);
  for (std::size_t i = 0; i < sig.samples.size(); ++i) {
    const float v = std::bit_cast<float>(u32_at(b, 4 * i));
    if (!std::isfinite(v)) throw FormatError(path.string() + ": non-finite sample at byte offset " + std::to_string(4 * i));
    sig.samples[i] = v;
  }
  return sig;
}

}  // namespace eri::audio
