// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

#include "eri/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "eri/errors.hpp"
#include "json.hpp"

namespace eri::synth {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string_view to_string(Routing r) { return r == Routing::joint ? "joint" : "family"; }

Routing parse_routing(std::string_view s) {
  if (s == "joint") return Routing::joint;
  if (s == "family") return Routing::family;
  throw ConfigError("unknown routing '" + std::string(s) + "' (expected joint or family)");
}

void SynthConfig::validate() const {
  if (n_train + n_val + n_test == 0) throw ConfigError("synth: no samples requested");
  if (t_min == 0 || t_max < t_min) throw ConfigError("synth: frame range must satisfy 0 < t_min <= t_max");
  if (k_events >= t_min) {
    throw ConfigError("synth: k_events (" + std::to_string(k_events) + ") must be below t_min (" +
                      std::to_string(t_min) + ")");
  }
  if (visual_dim() == 0 || audio_dim == 0 || audio_stride == 0) {
    throw ConfigError("synth: feature widths and audio stride must be positive");
  }
  if (!(amp_min >= 0.0 && amp_max >= amp_min)) throw ConfigError("synth: amplitude range must satisfy 0 <= min <= max");
  if (!(emotion_rate >= 0.0 && emotion_rate <= 1.0)) throw ConfigError("synth: emotion_rate must lie in [0, 1]");
  if (!(noise_sigma >= 0.0)) throw ConfigError("synth: noise_sigma must be non-negative");
  if (!(tau > 0.0)) throw ConfigError("synth: tau must be positive");
  if (!(invalid_rate >= 0.0 && invalid_rate < 1.0)) throw ConfigError("synth: invalid_rate must lie in [0, 1)");
  if (routing == Routing::family && (holistic_dim == 0 || au_units == 0)) {
    throw ConfigError("synth: family routing needs holistic and AU columns");
  }
}

double label_from_amplitude(double max_amplitude, double tau) { return 1.0 - std::exp(-max_amplitude / tau); }

std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

enum class Family { holistic, au_occurrence, au_intensity, audio };

// Emotion -> family under family routing.
constexpr std::array<Family, kNumEmotions> kFamilyOf = {
    Family::holistic, Family::holistic, Family::au_occurrence, Family::au_occurrence,
    Family::au_intensity, Family::audio, Family::audio};

struct Constants {
  std::vector<double> neutral_v, neutral_a;
  // Unit directions; a zero row means the emotion is absent from that stream.
  std::array<std::vector<double>, kNumEmotions> dir_v, dir_a;
};

void random_unit(std::vector<double>& v, std::size_t from, std::size_t count, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  double norm = 0.0;
  for (std::size_t i = from; i < from + count; ++i) {
    v[i] = n(rng);
    norm += v[i] * v[i];
  }
  norm = std::sqrt(norm);
  for (std::size_t i = from; i < from + count; ++i) v[i] /= norm;
}

Constants make_constants(const SynthConfig& cfg) {
  std::mt19937_64 rng(sample_seed(cfg.seed, ~0ULL));
  std::normal_distribution<double> n(0.0, 1.0);
  Constants k;
  const std::size_t dv = cfg.visual_dim();
  k.neutral_v.resize(dv);
  k.neutral_a.resize(cfg.audio_dim);
  for (auto& x : k.neutral_v) x = n(rng);
  for (auto& x : k.neutral_a) x = n(rng);
  for (std::size_t c = 0; c < kNumEmotions; ++c) {
    k.dir_v[c].assign(dv, 0.0);
    k.dir_a[c].assign(cfg.audio_dim, 0.0);
    if (cfg.routing == Routing::joint) {
      random_unit(k.dir_v[c], 0, dv, rng);
      random_unit(k.dir_a[c], 0, cfg.audio_dim, rng);
      continue;
    }
    switch (kFamilyOf[c]) {
      case Family::holistic:
        random_unit(k.dir_v[c], 0, cfg.holistic_dim, rng);
        break;
      case Family::au_occurrence:
        random_unit(k.dir_v[c], cfg.holistic_dim, cfg.au_units, rng);
        break;
      case Family::au_intensity:
        random_unit(k.dir_v[c], cfg.holistic_dim + cfg.au_units, cfg.au_units, rng);
        break;
      case Family::audio:
        random_unit(k.dir_a[c], 0, cfg.audio_dim, rng);
        break;
    }
  }
  return k;
}

std::string sample_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "syn%05zu", index);
  return buf;
}

Split split_of(const SynthConfig& cfg, std::size_t index) {
  if (index < cfg.n_train) return Split::train;
  if (index < cfg.n_train + cfg.n_val) return Split::val;
  return Split::test;
}

SynthSample build(const SynthConfig& cfg, const Constants& k, std::size_t index) {
  std::mt19937_64 rng(sample_seed(cfg.seed, index));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> len(cfg.t_min, cfg.t_max);

  SynthSample out;
  out.sample.id = out.events.id = sample_id(index);
  out.sample.split = split_of(cfg, index);
  const std::size_t T = len(rng);
  out.events.frames = T;

  std::vector<std::size_t> frames(T);
  std::iota(frames.begin(), frames.end(), 0);
  for (std::size_t i = 0; i < cfg.k_events; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, T - 1);
    std::swap(frames[i], frames[pick(rng)]);
  }
  out.events.indices.assign(frames.begin(), frames.begin() + static_cast<std::ptrdiff_t>(cfg.k_events));
  std::sort(out.events.indices.begin(), out.events.indices.end());
  std::array<double, kNumEmotions> peak{};
  for (std::size_t e = 0; e < cfg.k_events; ++e) {
    std::array<double, kNumEmotions> amp{};
    for (std::size_t c = 0; c < kNumEmotions; ++c) {
      const bool on = unit(rng) < cfg.emotion_rate;
      const double a = cfg.amp_min + (cfg.amp_max - cfg.amp_min) * unit(rng);
      amp[c] = on ? a : 0.0;
      peak[c] = std::max(peak[c], amp[c]);
    }
    out.events.amplitudes.push_back(amp);
  }
  for (std::size_t c = 0; c < kNumEmotions; ++c) out.sample.label[c] = label_from_amplitude(peak[c], cfg.tau);

  const std::size_t dv = cfg.visual_dim();
  auto& vis = out.sample.visual;
  vis.modality = Modality::visual;
  vis.data = FeatureMatrix(T, dv);
  vis.valid.assign(T, 1);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t j = 0; j < dv; ++j) vis.data.at(t, j) = k.neutral_v[j] + cfg.noise_sigma * noise(rng);
    const bool drop = unit(rng) < cfg.invalid_rate;
    if (drop && !std::binary_search(out.events.indices.begin(), out.events.indices.end(), t)) vis.valid[t] = 0;
  }
  const std::size_t Ta = (T + cfg.audio_stride - 1) / cfg.audio_stride;
  auto& aud = out.sample.audio;
  aud.modality = Modality::audio;
  aud.data = FeatureMatrix(Ta, cfg.audio_dim);
  aud.valid.assign(Ta, 1);
  for (std::size_t t = 0; t < Ta; ++t)
    for (std::size_t j = 0; j < cfg.audio_dim; ++j) aud.data.at(t, j) = k.neutral_a[j] + cfg.noise_sigma * noise(rng);
  for (std::size_t e = 0; e < cfg.k_events; ++e) {
    const std::size_t tv = out.events.indices[e];
    const std::size_t ta = tv / cfg.audio_stride;
    for (std::size_t c = 0; c < kNumEmotions; ++c) {
      const double a = out.events.amplitudes[e][c];
      if (a == 0.0) continue;
      for (std::size_t j = 0; j < dv; ++j) vis.data.at(tv, j) += a * k.dir_v[c][j];
      for (std::size_t j = 0; j < cfg.audio_dim; ++j) aud.data.at(ta, j) += a * k.dir_a[c][j];
    }
  }
  return out;
}

}  // namespace

SynthSample generate_sample(const SynthConfig& cfg, std::size_t index) {
  cfg.validate();
  return build(cfg, make_constants(cfg), index);
}

SynthOutput generate_synthetic_dataset(const SynthConfig& cfg, const fs::path& dir) {
  cfg.validate();
  const Constants k = make_constants(cfg);
  fs::create_directories(dir / "visual");
  fs::create_directories(dir / "audio");
  SynthOutput out;
  out.manifest.version = 1;
  out.manifest.label_scale = LabelScale::unit;
  out.manifest.visual_layout = {cfg.holistic_dim, cfg.au_units};
  const std::size_t n = cfg.n_train + cfg.n_val + cfg.n_test;
  for (std::size_t i = 0; i < n; ++i) {
    SynthSample s = build(cfg, k, i);
    ManifestRecord r;
    r.id = s.sample.id;
    r.split = s.sample.split;
    r.visual = "visual/" + r.id + ".fmx";
    r.audio = "audio/" + r.id + ".fmx";
    for (std::size_t c = 0; c < kNumEmotions; ++c) r.labels[c] = s.sample.label[c];
    write_fmx(dir / r.visual, s.sample.visual.data, &s.sample.visual.valid);
    write_fmx(dir / r.audio, s.sample.audio.data);
    out.manifest.samples.push_back(std::move(r));
    out.events.push_back(std::move(s.events));
  }
  write_manifest(dir / "manifest.json", out.manifest);
  std::ofstream ev(dir / "events.json", std::ios::binary);
  if (!ev) throw DataError("cannot write " + (dir / "events.json").string());
  ev << events_to_json(out.events);
  return out;
}

std::string events_to_json(const std::vector<SampleEvents>& events) {
  json j = json::object();
  for (const auto& e : events) {
    j[e.id] = {{"frames", e.frames}, {"indices", e.indices}, {"amplitudes", e.amplitudes}};
  }
  return j.dump(1) + "\n";
}

std::map<std::string, SampleEvents> read_events(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::map<std::string, SampleEvents> out;
  try {
    const json j = json::parse(in);
    for (const auto& [id, v] : j.items()) {
      SampleEvents e;
      e.id = id;
      e.frames = v.at("frames").get<std::size_t>();
      e.indices = v.at("indices").get<std::vector<std::size_t>>();
      e.amplitudes = v.at("amplitudes").get<std::vector<std::array<double, kNumEmotions>>>();
      out.emplace(id, std::move(e));
    }
  } catch (const json::exception& ex) {
    throw FormatError(path.string() + ": " + ex.what());
  }
  return out;
}

double attention_event_overlap(std::span<const double> weights, std::span<const std::size_t> events,
                               std::size_t k) {
  if (k == 0 || weights.empty()) return 0.0;
  k = std::min(k, weights.size());
  std::vector<std::size_t> idx(weights.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t f = idx[i];
    const bool near = std::any_of(events.begin(), events.end(), [f](std::size_t e) {
      return (f > e ? f - e : e - f) <= 1;
    });
    if (near) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(k);
}

std::vector<std::vector<double>> regression_attention(EriModel& model, const std::vector<ModelSample>& samples,
                                                      std::size_t batch_size) {
  if (model.config().visual_dim == 0 || model.config().pooling != Pooling::regression_token) {
    throw ArgumentError("regression attention needs a visual stream with regression-token pooling");
  }
  if (batch_size == 0) throw ArgumentError("regression_attention: batch size must be positive");
  std::vector<std::vector<double>> out;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t end = std::min(samples.size(), start + batch_size);
    std::vector<ModelInput> inputs;
    for (std::size_t i = start; i < end; ++i) {
      if (!samples[i].valid) throw ArgumentError("regression_attention: sample '" + samples[i].id + "' is invalid");
      inputs.push_back(samples[i].input());
    }
    ForwardRecords rec;
    model.predict(inputs, &rec);
    for (std::size_t i = start; i < end; ++i) {
      out.push_back(layers::extract_regression_attention(rec.video, samples[i].video->rows, i - start));
    }
  }
  return out;
}

double mean_event_overlap(EriModel& model, const std::vector<ModelSample>& samples,
                          const std::map<std::string, SampleEvents>& events, std::size_t k) {
  std::vector<ModelSample> used;
  std::vector<const SampleEvents*> ev;
  for (const auto& s : samples) {
    auto it = events.find(s.id);
    if (it == events.end()) throw DataError("no planted events recorded for sample '" + s.id + "'");
    if (it->second.indices.empty() || !s.valid) continue;
    if (s.video->rows != it->second.frames) {
      throw DataError("sample '" + s.id + "': attention covers " + std::to_string(s.video->rows) +
                      " frames but " + std::to_string(it->second.frames) + " were generated");
    }
    used.push_back(s);
    ev.push_back(&it->second);
  }
  if (used.empty()) throw EvaluationError("mean_event_overlap: no sample with planted events");
  const auto w = regression_attention(model, used);
  double total = 0.0;
  for (std::size_t i = 0; i < used.size(); ++i) total += attention_event_overlap(w[i], ev[i]->indices, k);
  return total / static_cast<double>(used.size());
}

RunOutcome mean_pool_baseline(const Dataset& ds, const ModelConfig& base, const FeatureCombo& combo,
                              const TrainConfig& cfg, Split eval_split) {
  ModelConfig m = base;
  m.pooling = Pooling::mean;
  return train_and_evaluate(ds, m, combo, cfg, eval_split);
}

}  // namespace eri::synth
