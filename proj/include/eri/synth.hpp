// Copyright 2026 The ERI Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic sparse-event benchmark. Every sample is a run of neutral frames
// (a fixed vector plus Gaussian noise) with a few planted event frames; each
// event adds an emotion-coded bump along fixed unit directions. The label of
// an emotion is 1 - exp(-a / tau) where a is the largest amplitude planted on
// that emotion, so a clip is only as intense as its strongest moment.

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "eri/features.hpp"
#include "eri/model.hpp"
#include "eri/train.hpp"

namespace eri::synth {

enum class Routing {
  // every emotion is visible in every visual column and in the audio
  joint,
  // each emotion lives in exactly one feature family (holistic, AU
  // occurrence, AU intensity or audio), so dropping a family hides it
  family,
};

std::string_view to_string(Routing r);
Routing parse_routing(std::string_view s);

struct SynthConfig {
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 0;
  std::size_t t_min = 200;
  std::size_t t_max = 300;
  // Visual columns are holistic | AU occurrence | AU intensity.
  std::size_t holistic_dim = 32;
  std::size_t au_units = 0;
  std::size_t audio_dim = 16;
  // One audio frame per this many visual frames.
  std::size_t audio_stride = 4;
  std::size_t k_events = 3;
  double amp_min = 0.5;
  double amp_max = 3.0;
  // Chance that a given event carries a given emotion.
  double emotion_rate = 0.5;
  double noise_sigma = 1.0;
  double tau = 1.0;
  // Fraction of visual frames flagged invalid (never event frames).
  double invalid_rate = 0.0;
  Routing routing = Routing::joint;
  std::uint64_t seed = 0;

  /// Throws ConfigError; k_events must be below t_min.
  void validate() const;
  std::size_t visual_dim() const { return holistic_dim + 2 * au_units; }
};

struct SampleEvents {
  std::string id;
  std::size_t frames = 0;                             // visual frame count
  std::vector<std::size_t> indices;                   // ascending
  std::vector<std::array<double, kNumEmotions>> amplitudes;  // per event
};

/// Label of one emotion given its largest planted amplitude.
double label_from_amplitude(double max_amplitude, double tau);

/// splitmix64 of (seed, index): per-sample streams independent of order.
std::uint64_t sample_seed(std::uint64_t seed, std::uint64_t index);

struct SynthSample {
  Sample sample;
  SampleEvents events;
};

/// Builds sample `index` alone; identical to the one inside a full dataset.
SynthSample generate_sample(const SynthConfig& cfg, std::size_t index);

struct SynthOutput {
  Manifest manifest;
  std::vector<SampleEvents> events;
};

/// Writes visual/<id>.fmx, audio/<id>.fmx, manifest.json and events.json into
/// `dir`, creating it if needed.
SynthOutput generate_synthetic_dataset(const SynthConfig& cfg, const std::filesystem::path& dir);

std::string events_to_json(const std::vector<SampleEvents>& events);
std::map<std::string, SampleEvents> read_events(const std::filesystem::path& path);

/// Share of the k highest-weighted frames lying within one frame of a planted
/// event. Ties go to the earlier frame.
double attention_event_overlap(std::span<const double> weights, std::span<const std::size_t> events,
                               std::size_t k);

/// Regression-token attention of every sample, from inference passes.
std::vector<std::vector<double>> regression_attention(EriModel& model, const std::vector<ModelSample>& samples,
                                                      std::size_t batch_size = 32);

/// Split-level mean of attention_event_overlap; samples without events are
/// skipped.
double mean_event_overlap(EriModel& model, const std::vector<ModelSample>& samples,
                          const std::map<std::string, SampleEvents>& events, std::size_t k);

/// The same pipeline as train_and_evaluate with the encoder replaced by a
/// masked temporal mean of the GRU outputs.
RunOutcome mean_pool_baseline(const Dataset& ds, const ModelConfig& base, const FeatureCombo& combo,
                              const TrainConfig& cfg, Split eval_split = Split::val);

}  // namespace eri::synth
