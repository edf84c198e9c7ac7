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

#include "maskshaper/scene.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "json.hpp"

namespace maskshaper {
namespace {

constexpr double kLevelMinDba = 40.0;
constexpr double kLevelMaxDba = 95.0;
constexpr double kMusicMinDba = 45.0;
constexpr double kMusicMaxDba = 100.0;

// Distinct per-purpose streams off a scene seed.
enum SeedStream : uint64_t {
  kStreamSpec = 1,
  kStreamNoise = 2,
  kStreamMusic = 3,
};

double interp_log_f(const std::vector<std::pair<double, double>>& points,
                    double hz) {
  if (points.empty()) return 0.0;
  if (hz <= points.front().first) return points.front().second;
  if (hz >= points.back().first) return points.back().second;
  for (size_t i = 1; i < points.size(); ++i) {
    if (hz > points[i].first) continue;
    auto [f0, y0] = points[i - 1];
    auto [f1, y1] = points[i];
    double t = std::log(hz / f0) / std::log(f1 / f0);
    return y0 + t * (y1 - y0);
  }
  return points.back().second;
}

// Shapes a spectrogram in place by a dB curve of frequency. Bins below 20 Hz
// are zeroed: acoustic signals carry no DC, and letting the curve's lowest
// knot leak into bin 0 would concentrate energy in inaudible rumble.
template <typename CurveDb>
void shape_spectrogram(Spectrogram& spec, CurveDb&& curve_db) {
  int bins = spec.num_bins();
  std::vector<double> gain(bins);
  for (int k = 0; k < bins; ++k) {
    double hz = spec.bin_freq_hz(k);
    gain[k] = hz < 20.0 ? 0.0 : amp_from_db(curve_db(hz));
  }
  for (int n = 0; n < spec.num_frames(); ++n) {
    std::complex<double>* frame = spec.frame(n);
    for (int k = 0; k < bins; ++k) frame[k] *= gain[k];
  }
}

// Filters a signal through an STFT-domain dB curve. The input is padded with
// one window of silence on each side before analysis: shaped spectra are not
// consistent spectrograms, and without full overlap coverage the synthesis
// normalization amplifies the disagreement at the edges into transients that
// can dominate the whole signal's energy.
template <typename CurveDb>
Signal shape_signal(const Signal& in, CurveDb&& curve_db) {
  StftConfig config;
  size_t pad = static_cast<size_t>(config.window_len);
  Signal padded;
  padded.samples.assign(in.samples.size() + 2 * pad, 0.0);
  std::copy(in.samples.begin(), in.samples.end(), padded.samples.begin() + pad);

  Spectrogram spec = stft(padded, config);
  shape_spectrogram(spec, curve_db);
  Signal full = istft(spec);

  Signal out;
  out.samples.assign(in.samples.size(), 0.0);
  size_t have = full.samples.size() > pad ? full.samples.size() - pad : 0;
  size_t count = std::min(in.samples.size(), have);
  std::copy(full.samples.begin() + pad, full.samples.begin() + pad + count,
            out.samples.begin());
  return out;
}

int duration_samples(const SceneSpec& spec) {
  if (spec.duration_s <= 0.0)
    throw std::invalid_argument("scene duration must be positive");
  return static_cast<int>(std::llround(spec.duration_s * kSampleRate));
}

}  // namespace

const std::vector<EnvironmentProfile>& environment_profiles() {
  // Levels are stand-ins spanning the masking-relevant range; recipes give
  // each environment a distinct spectral signature (narrow kinks are hums).
  static const std::vector<EnvironmentProfile> profiles = {
      {"urban", 70.0, 5.0,
       {{{20, 2}, {80, 2}, {5000, -22}, {22050, -35}}}},
      {"office", 55.0, 5.0,
       {{{20, -5}, {120, 0}, {1000, -8}, {8000, -28}, {22050, -40}}}},
      {"construction", 85.0, 5.0,
       {{{20, 2}, {100, 4}, {103, 9}, {106, 4}, {1000, 0}, {4000, -4},
         {22050, -20}}}},
      {"beach", 65.0, 5.0, {{{20, 0}, {22050, -30.32}}}},  // -3 dB/octave
      {"transport", 75.0, 5.0,
       {{{20, 6}, {60, 8}, {63, 12}, {66, 8}, {250, 0}, {2000, -18},
         {22050, -45}}}},
      {"restaurant", 70.0, 5.0,
       {{{20, -8}, {200, -2}, {500, 0}, {2000, -4}, {8000, -20},
         {22050, -32}}}},
  };
  return profiles;
}

const std::vector<HeadphoneProfile>& headphone_profiles() {
  static const std::vector<HeadphoneProfile> profiles = {
      {"earbud", {{20, 0}, {500, 0}, {10000, -15}, {22050, -15}}},
      {"closed", {{20, -3}, {200, -3}, {8000, -25}, {10000, -30}, {22050, -30}}},
      {"semi_open", {{20, -1}, {500, -1}, {10000, -10}, {22050, -10}}},
  };
  return profiles;
}

const EnvironmentProfile& environment_profile(const std::string& name) {
  for (const EnvironmentProfile& p : environment_profiles())
    if (p.name == name) return p;
  throw std::invalid_argument("unknown environment: " + name);
}

const HeadphoneProfile& headphone_profile(const std::string& name) {
  for (const HeadphoneProfile& p : headphone_profiles())
    if (p.name == name) return p;
  throw std::invalid_argument("unknown headphone: " + name);
}

SceneSpec sample_scene(const std::string& environment, uint64_t seed) {
  const EnvironmentProfile& env = environment_profile(environment);
  Rng rng = Rng(seed).derive(kStreamSpec);

  SceneSpec spec;
  spec.environment = environment;
  spec.seed = seed;

  double level = 0.0;
  bool accepted = false;
  for (int attempt = 0; attempt < 1000 && !accepted; ++attempt) {
    level = env.noise_level_mean + env.noise_level_std * rng.gaussian();
    accepted = level >= kLevelMinDba && level <= kLevelMaxDba;
  }
  spec.noise_level_dba =
      accepted ? level : std::clamp(level, kLevelMinDba, kLevelMaxDba);

  spec.snr_db = rng.uniform(-5.0, 15.0);
  spec.music_level_dba = std::clamp(spec.noise_level_dba + spec.snr_db,
                                    kMusicMinDba, kMusicMaxDba);

  const auto& headphones = headphone_profiles();
  size_t pick = static_cast<size_t>(rng.uniform(0.0, headphones.size()));
  spec.headphone = headphones[std::min(pick, headphones.size() - 1)].name;
  return spec;
}

Signal synth_noise(const SceneSpec& spec) {
  const EnvironmentProfile& env = environment_profile(spec.environment);
  int samples = duration_samples(spec);
  Rng rng = Rng(spec.seed).derive(kStreamNoise);

  Signal white;
  white.samples.resize(samples);
  for (int i = 0; i < samples; ++i) white.samples[i] = 0.05 * rng.gaussian();

  return shape_signal(white, [&](double hz) {
    return interp_log_f(env.recipe.envelope_db, hz);
  });
}

Signal synth_music(const SceneSpec& spec) {
  int samples = duration_samples(spec);
  Rng rng = Rng(spec.seed).derive(kStreamMusic);

  double f0 = rng.uniform(110.0, 440.0);
  int harmonics = 5 + static_cast<int>(rng.uniform(0.0, 5.0));
  double decay = rng.uniform(1.2, 2.0);
  std::vector<double> phase(harmonics), amp(harmonics);
  double norm = 0.0;
  for (int h = 0; h < harmonics; ++h) {
    phase[h] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    amp[h] = std::pow(h + 1.0, -decay);
    norm += amp[h] * amp[h];
  }
  norm = 0.1 / std::sqrt(norm);
  double am_freq = rng.uniform(0.3, 1.5);
  double am_depth = rng.uniform(0.1, 0.4);
  double am_phase = rng.uniform(0.0, 2.0 * std::numbers::pi);

  Signal music;
  music.samples.assign(samples, 0.0);
  for (int h = 0; h < harmonics; ++h) {
    double hz = f0 * (h + 1);
    if (hz >= kSampleRate / 2.0) break;
    double w = 2.0 * std::numbers::pi * hz / kSampleRate;
    double a = norm * amp[h];
    for (int i = 0; i < samples; ++i)
      music.samples[i] += a * std::sin(w * i + phase[h]);
  }

  // Colored bed: one-pole low-passed white noise about 22 dB under the stack.
  double a1 = 1.0 - std::exp(-2.0 * std::numbers::pi * 500.0 / kSampleRate);
  double lp = 0.0;
  for (int i = 0; i < samples; ++i) {
    lp += a1 * (rng.gaussian() - lp);
    music.samples[i] += 0.008 * lp;
  }

  double wam = 2.0 * std::numbers::pi * am_freq / kSampleRate;
  for (int i = 0; i < samples; ++i)
    music.samples[i] *= 1.0 + am_depth * std::sin(wam * i + am_phase);
  return music;
}

Signal apply_headphone(const Signal& noise, const HeadphoneProfile& profile) {
  return shape_signal(noise, [&](double hz) {
    return interp_log_f(profile.attenuation_db, hz);
  });
}

double measure_dba(const Signal& signal, const DbaCalibration& calibration) {
  StftConfig config;
  if (config.frame_count(signal.samples.size()) < 1)
    throw std::invalid_argument("signal too short to measure");
  FramePowerDba frames = frame_power_dba(stft(signal, config), calibration);
  double acc = 0.0;
  for (double v : frames.values) acc += v;
  return acc / static_cast<double>(frames.values.size());
}

Signal normalize_dba(const Signal& signal, double target_dba,
                     const DbaCalibration& calibration) {
  double level = measure_dba(signal, calibration);
  if (level <= kDbFloor + 1.0)
    throw std::invalid_argument("cannot normalize a silent signal");
  double gain = amp_from_db(target_dba - level);
  Signal out = signal;
  for (double& v : out.samples) v *= gain;
  return out;
}

double active_frame_ratio(const Signal& signal, double floor_dbfs) {
  StftConfig config;
  int frames = config.frame_count(signal.samples.size());
  if (frames < 1) return 0.0;
  double floor_power = power_from_db(floor_dbfs);
  int active = 0;
  for (int n = 0; n < frames; ++n) {
    double acc = 0.0;
    const double* x = signal.samples.data() +
                      static_cast<size_t>(n) * config.hop;
    for (int i = 0; i < config.window_len; ++i) acc += x[i] * x[i];
    if (acc / config.window_len > floor_power) ++active;
  }
  return static_cast<double>(active) / frames;
}

ScenePair build_scene(const SceneSpec& spec,
                      const DbaCalibration& calibration) {
  ScenePair pair;
  pair.spec = spec;
  pair.music =
      normalize_dba(synth_music(spec), spec.music_level_dba, calibration);
  Signal shaped =
      apply_headphone(synth_noise(spec), headphone_profile(spec.headphone));
  pair.noise = normalize_dba(shaped, spec.noise_level_dba, calibration);
  return pair;
}

std::string build_manifest(const std::vector<std::string>& environments,
                           int count_per_env, uint64_t seed,
                           const std::string& out_dir, double duration_s,
                           const DbaCalibration& calibration) {
  if (count_per_env <= 0)
    throw std::invalid_argument("count_per_env must be positive");
  for (const std::string& env : environments) environment_profile(env);

  std::filesystem::create_directories(out_dir);
  std::string manifest_path =
      (std::filesystem::path(out_dir) / "manifest.jsonl").string();
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write " + manifest_path);

  Rng root(seed);
  int index = 0;
  for (const std::string& env : environments) {
    for (int i = 0; i < count_per_env; ++i, ++index) {
      uint64_t scene_seed = root.derive(static_cast<uint64_t>(index)).next_u64();
      SceneSpec spec = sample_scene(env, scene_seed);
      spec.duration_s = duration_s;
      ScenePair pair = build_scene(spec, calibration);

      char id[32];
      std::snprintf(id, sizeof(id), "scene_%04d", index);
      std::string music_name = std::string(id) + "_music.wav";
      std::string noise_name = std::string(id) + "_noise.wav";
      write_wav(pair.music,
                (std::filesystem::path(out_dir) / music_name).string(),
                WavDepth::float32);
      write_wav(pair.noise,
                (std::filesystem::path(out_dir) / noise_name).string(),
                WavDepth::float32);

      nlohmann::json line = {
          {"id", id},
          {"environment", spec.environment},
          {"headphone", spec.headphone},
          {"noise_level_dba", spec.noise_level_dba},
          {"snr_db", spec.snr_db},
          {"music_level_dba", spec.music_level_dba},
          {"duration_s", spec.duration_s},
          {"seed", spec.seed},
          {"music_path", music_name},
          {"noise_path", noise_name},
      };
      manifest << line.dump() << "\n";
    }
  }
  manifest.close();
  if (!manifest) throw std::runtime_error("failed writing " + manifest_path);
  return manifest_path;
}

std::vector<ManifestEntry> read_manifest(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest_path);

  std::vector<ManifestEntry> entries;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.spec.environment = j.at("environment").get<std::string>();
      e.spec.headphone = j.at("headphone").get<std::string>();
      e.spec.noise_level_dba = j.at("noise_level_dba").get<double>();
      e.spec.snr_db = j.at("snr_db").get<double>();
      e.spec.music_level_dba = j.at("music_level_dba").get<double>();
      e.spec.duration_s = j.at("duration_s").get<double>();
      e.spec.seed = j.at("seed").get<uint64_t>();
      e.music_path = j.at("music_path").get<std::string>();
      e.noise_path = j.at("noise_path").get<std::string>();
      entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& ex) {
      throw std::runtime_error("manifest line " + std::to_string(line_no) +
                               ": " + ex.what());
    }
  }
  return entries;
}

}  // namespace maskshaper
