// Copyright 2026 The Maskshaper Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "maskshaper/common.h"
#include "maskshaper/signal_io.h"

namespace maskshaper {

// Spectral shape applied to white noise in the STFT domain: piecewise-linear
// dB vs log-frequency. Narrow segments model tonal components like hums.
struct NoiseRecipe {
  std::vector<std::pair<double, double>> envelope_db;  // (hz, dB)
};

struct EnvironmentProfile {
  std::string name;
  double noise_level_mean;  // dBA
  double noise_level_std;
  NoiseRecipe recipe;
};

// Passive attenuation as piecewise-linear dB vs log-frequency; nonpositive
// everywhere and nonincreasing above 200 Hz.
struct HeadphoneProfile {
  std::string name;
  std::vector<std::pair<double, double>> attenuation_db;  // (hz, dB <= 0)
};

const std::vector<EnvironmentProfile>& environment_profiles();
const std::vector<HeadphoneProfile>& headphone_profiles();
// Lookup by name; throws std::invalid_argument for unknown names.
const EnvironmentProfile& environment_profile(const std::string& name);
const HeadphoneProfile& headphone_profile(const std::string& name);

struct SceneSpec {
  std::string environment;
  std::string headphone;
  double noise_level_dba = 0.0;   // at-ear, post-attenuation
  double snr_db = 0.0;
  double music_level_dba = 0.0;   // clamped to [45, 100]
  double duration_s = 10.0;
  uint64_t seed = 0;
};

// Draws noise level (truncated normal), SNR (uniform [-5, 15]), and a
// headphone, all deterministically from the seed.
SceneSpec sample_scene(const std::string& environment, uint64_t seed);

// Recipe-shaped white noise / harmonic-stack music proxy with a colored bed
// and slow amplitude modulation. Both pre-normalization, deterministic per
// spec seed.
Signal synth_noise(const SceneSpec& spec);
Signal synth_music(const SceneSpec& spec);

// STFT-domain multiplication by the interpolated attenuation curve.
Signal apply_headphone(const Signal& noise, const HeadphoneProfile& profile);

// Mean per-frame A-weighted level. Throws on signals too short to frame.
double measure_dba(const Signal& signal, const DbaCalibration& calibration = {});

// Scalar gain so the measured level hits the target. Throws on silence.
Signal normalize_dba(const Signal& signal, double target_dba,
                     const DbaCalibration& calibration = {});

// Fraction of frames whose RMS clears the floor; the silence gate applied
// to user-supplied audio.
double active_frame_ratio(const Signal& signal, double floor_dbfs = -60.0);

struct ScenePair {
  Signal music;
  Signal noise;  // post-attenuation, normalized to spec level
  SceneSpec spec;
};

ScenePair build_scene(const SceneSpec& spec,
                      const DbaCalibration& calibration = {});

struct ManifestEntry {
  std::string id;
  SceneSpec spec;
  std::string music_path;  // relative to the manifest directory
  std::string noise_path;
};

// Writes WAV pairs plus a JSON-lines manifest into out_dir and returns the
// manifest path. Pure function of (environments, count, seed, duration).
std::string build_manifest(const std::vector<std::string>& environments,
                           int count_per_env, uint64_t seed,
                           const std::string& out_dir, double duration_s = 10.0,
                           const DbaCalibration& calibration = {});

std::vector<ManifestEntry> read_manifest(const std::string& manifest_path);

}  // namespace maskshaper
