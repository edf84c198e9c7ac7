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

#include <array>
#include <vector>

#include "maskshaper/common.h"
#include "maskshaper/signal_io.h"

namespace maskshaper {

inline constexpr int kNumBands = 26;

// Zwicker-Terhardt critical band rate z(f) = 13*atan(0.00076 f)
// + 3.5*atan((f/7500)^2). Throws for f outside [0, 22050].
double bark_of_freq(double frequency_hz);

// Integer band in 1..26: floor(z) + 1, capped at 26. Input is clamped to
// [0, 22050] Hz.
int band_index(double frequency_hz);

// Partition of the one-sided STFT bins into Bark bands. With a 44.1 kHz rate
// z(22050) < 25, so the last band slot holds no bins; it stays in the layout
// because downstream matrices are sized for 26 bands.
class BarkBands {
 public:
  explicit BarkBands(const StftConfig& config = {}, int sample_rate = kSampleRate);

  int count() const { return kNumBands; }
  int num_bins() const { return static_cast<int>(bin_to_band_.size()); }

  // 1-based band of STFT bin k.
  int band_of_bin(int k) const { return bin_to_band_[k]; }
  const std::vector<int>& bin_to_band() const { return bin_to_band_; }

  double bin_freq_hz(int k) const { return k * bin_freq_step_; }

  // 27 monotone edges; edge[j] bounds band j from above (edge[0] = 0). Edges
  // beyond the reach of z at Nyquist are clamped to 22050.
  const std::array<double, kNumBands + 1>& band_edges_hz() const {
    return edges_hz_;
  }

  // Midpoint of the band's frequency extent (1-based band).
  double band_center_hz(int band) const {
    return 0.5 * (edges_hz_[band - 1] + edges_hz_[band]);
  }

  // Contiguous bin range [begin, end) of a 1-based band; empty for bands
  // holding no bins.
  int band_begin_bin(int band) const { return begin_bin_[band - 1]; }
  int band_end_bin(int band) const { return end_bin_[band - 1]; }
  bool band_empty(int band) const {
    return begin_bin_[band - 1] == end_bin_[band - 1];
  }

 private:
  std::vector<int> bin_to_band_;
  double bin_freq_step_ = 0.0;
  std::array<double, kNumBands + 1> edges_hz_{};
  std::array<int, kNumBands> begin_bin_{};
  std::array<int, kNumBands> end_bin_{};
};

// Per-frame band powers: linear[n][v] = sum of |X(n,k)|^2 over the band's
// bins; db is the floored 10*log10 view.
struct BandPsd {
  Matrix linear;
  Matrix db;
};

BandPsd band_psd(const Spectrogram& spec, const BarkBands& bands);

// Band powers of a single precomputed bin-power frame (|X|^2 per bin).
void band_psd_frame(const double* bin_power, const BarkBands& bands,
                    double* linear_out, double* db_out);

}  // namespace maskshaper
