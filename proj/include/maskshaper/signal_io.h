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

#include <complex>
#include <string>
#include <vector>

#include "maskshaper/common.h"

namespace maskshaper {

inline constexpr int kSampleRate = 44100;

// Mono full-scale (+-1.0) signal.
struct Signal {
  std::vector<double> samples;
  int sample_rate = kSampleRate;

  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

struct StftConfig {
  int window_len = 2048;
  int hop = 512;

  int bins() const { return window_len / 2 + 1; }
  int frame_count(size_t num_samples) const {
    if (num_samples < static_cast<size_t>(window_len)) return 0;
    return static_cast<int>((num_samples - window_len) / hop) + 1;
  }
};

// One-sided complex STFT, unnormalized FFT convention (bin 0 of a DC signal
// of value 1 carries the window sum).
class Spectrogram {
 public:
  Spectrogram() = default;
  Spectrogram(int num_frames, StftConfig config, int sample_rate)
      : num_frames_(num_frames),
        config_(config),
        sample_rate_(sample_rate),
        data_(static_cast<size_t>(num_frames) * config.bins()) {}

  int num_frames() const { return num_frames_; }
  int num_bins() const { return config_.bins(); }
  const StftConfig& config() const { return config_; }
  int sample_rate() const { return sample_rate_; }

  double bin_freq_hz(int k) const {
    return static_cast<double>(k) * sample_rate_ / config_.window_len;
  }

  std::complex<double>* frame(int n) {
    return data_.data() + static_cast<size_t>(n) * num_bins();
  }
  const std::complex<double>* frame(int n) const {
    return data_.data() + static_cast<size_t>(n) * num_bins();
  }

  std::complex<double>& at(int n, int k) { return frame(n)[k]; }
  const std::complex<double>& at(int n, int k) const { return frame(n)[k]; }

 private:
  int num_frames_ = 0;
  StftConfig config_;
  int sample_rate_ = kSampleRate;
  std::vector<std::complex<double>> data_;
};

// Per-frame A-weighted levels in dBA.
struct FramePowerDba {
  std::vector<double> values;
};

enum class WavDepth { pcm16, pcm24, float32 };

struct WavWriteResult {
  bool clipped = false;
  size_t clipped_samples = 0;
};

// Reads a RIFF WAV (PCM16/PCM24/float32). Multichannel input is downmixed by
// channel averaging. Rejects sample rates other than 44100 Hz.
Signal read_wav(const std::string& path);

WavWriteResult write_wav(const Signal& signal, const std::string& path,
                         WavDepth depth = WavDepth::float32);

// Periodic Hann analysis; no padding, analysis starts at sample 0.
Spectrogram stft(const Signal& signal, const StftConfig& config = {});

// Weighted overlap-add synthesis with per-sample window normalization.
// Output length is (frames-1)*hop + window_len.
Signal istft(const Spectrogram& spec);

// Standard analytic A-weighting curve, normalized so that 1000 Hz is exactly
// 0 dB. Returns -200 dB at 0 Hz (curve limit).
double a_weighting_db(double frequency_hz);

// Linear power gain 10^(A(f)/10).
double a_weighting_power_gain(double frequency_hz);

// Maps digital full scale to an absolute level: a full-scale sine reads
// `spl_at_fullscale` dB SPL (dBA at 1 kHz, where the A-curve is 0 dB).
struct DbaCalibration {
  double spl_at_fullscale = 100.0;
};

// Per frame: A-weighted mean-square level in dBA under the calibration.
// Silent frames are floored at -120 dBA. Differences between two
// spectrograms of the same frame are calibration-independent.
FramePowerDba frame_power_dba(const Spectrogram& spec,
                              const DbaCalibration& calibration = {});

// dBA of a single frame given its A-weighted one-sided power sum
// (sum_k c_k * wA(f_k) * |X|^2 with c_k = 2 except DC/Nyquist).
double frame_dba_from_weighted_power(double weighted_power,
                                     const StftConfig& config,
                                     const DbaCalibration& calibration);

// Per-bin A-weighted power gains c_k * wA(f_k) for one-sided spectra, with
// c_k = 2 for interior bins and 1 for DC/Nyquist. frame_power_dba and the
// gain optimizers share this vector.
std::vector<double> a_weighted_bin_gains(const StftConfig& config,
                                         int sample_rate);

// Periodic Hann window of the given length.
std::vector<double> hann_window(int length);

// Sum over i of w[i]^2 for the periodic Hann window (0.375 * length).
double hann_window_power(int length);

}  // namespace maskshaper
