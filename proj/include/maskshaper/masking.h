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
#include <cstdint>

#include "maskshaper/bark.h"
#include "maskshaper/common.h"
#include "maskshaper/signal_io.h"

namespace maskshaper {

// Inter-band spreading level in dB at an integer Bark distance
// delta = masked band - masker band.
double spreading_db(int delta_bark);

// Linear spreading gains s[v][u] = 10^(spreading_db(v - u)/10) between all
// band pairs, with the per-row sums used for renormalization.
class SpreadingMatrix {
 public:
  SpreadingMatrix();

  // 1-based band indices; gain from masker band u onto band v.
  double gain(int v, int u) const {
    return s_[(v - 1) * kNumBands + (u - 1)];
  }
  double row_sum(int v) const { return row_sum_[v - 1]; }

 private:
  std::array<double, kNumBands * kNumBands> s_;
  std::array<double, kNumBands> row_sum_;
};

// Tonal-versus-noiselike character of one spectrum frame.
struct TonalityEstimate {
  double sfm_db = 0.0;  // spectral flatness, <= 0
  double alpha = 0.0;   // 0 = noiselike, 1 = tonal
};

// Spectral flatness over bins 1..K-1 (DC excluded) of one-sided bin powers;
// alpha = clamp(sfm_db / -60, 0, 1). An all-zero frame yields alpha = 0.
TonalityEstimate tonality(const double* bin_power, int num_bins);

// Hearing threshold in quiet, dB SPL (Terhardt approximation).
double absolute_threshold_db_spl(double frequency_hz);

struct MaskingOptions {
  bool abs_floor = true;
  DbaCalibration calibration;
};

// One frame of masking thresholds over the 26 bands.
struct ThresholdRow {
  std::array<double, kNumBands> linear;
  std::array<double, kNumBands> db;
  uint32_t floor_active = 0;  // bit v-1: absolute floor clamped band v

  bool is_floor_active(int band) const {
    return (floor_active >> (band - 1)) & 1u;
  }
};

// Masking-threshold model: spread band powers, apply the tonality-dependent
// offset, renormalize by the spreading row sums, optionally clamp at the
// hearing threshold mapped into the band-power domain.
class MaskingModel {
 public:
  MaskingModel(const BarkBands& bands, const StftConfig& config = {},
               const MaskingOptions& options = {});

  const SpreadingMatrix& spreading() const { return spreading_; }
  const MaskingOptions& options() const { return options_; }

  // Offset O(v) in dB for a 1-based band at a given tonality.
  double offset_db(double alpha, int band) const {
    return alpha * (14.5 + band) + (1.0 - alpha) * 5.5;
  }

  // Absolute floor for a 1-based band in the band-power dB domain;
  // returns the global dB floor when the option is off.
  double floor_db(int band) const { return floor_db_[band - 1]; }

  ThresholdRow thresholds(const double* band_linear,
                          const TonalityEstimate& t) const;

  // Sensitivities d T_linear(v) / d B_linear(u), 26 x 26, with alpha held
  // constant; rows where the absolute floor is active are zero.
  Matrix threshold_jacobian(const double* band_linear,
                            const TonalityEstimate& t) const;

 private:
  SpreadingMatrix spreading_;
  MaskingOptions options_;
  std::array<double, kNumBands> floor_db_;
  std::array<double, kNumBands> floor_linear_;
};

}  // namespace maskshaper
