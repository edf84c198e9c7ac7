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

#include "maskshaper/masking.h"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace maskshaper {

double spreading_db(int delta_bark) {
  double d = delta_bark + 0.474;
  return 15.81 + 7.5 * d - 17.5 * std::sqrt(1.0 + d * d);
}

SpreadingMatrix::SpreadingMatrix() {
  for (int v = 1; v <= kNumBands; ++v) {
    double sum = 0.0;
    for (int u = 1; u <= kNumBands; ++u) {
      double g = std::pow(10.0, spreading_db(v - u) / 10.0);
      s_[(v - 1) * kNumBands + (u - 1)] = g;
      sum += g;
    }
    row_sum_[v - 1] = sum;
  }
}

TonalityEstimate tonality(const double* bin_power, int num_bins) {
  // DC is excluded; flatness compares geometric to arithmetic mean.
  int count = num_bins - 1;
  double sum = 0.0, log_sum = 0.0;
  for (int k = 1; k < num_bins; ++k) {
    sum += bin_power[k];
    log_sum += std::log(std::max(bin_power[k], kLinearFloor));
  }
  TonalityEstimate t;
  if (sum <= 0.0) return t;
  double geo_db = 10.0 * (log_sum / count) / std::numbers::ln10;
  double mean_db = 10.0 * std::log10(sum / count);
  t.sfm_db = geo_db - mean_db;
  t.alpha = std::clamp(t.sfm_db / -60.0, 0.0, 1.0);
  return t;
}

double absolute_threshold_db_spl(double frequency_hz) {
  double khz = std::max(frequency_hz, 1.0) / 1000.0;
  return 3.64 * std::pow(khz, -0.8) -
         6.5 * std::exp(-0.6 * (khz - 3.3) * (khz - 3.3)) +
         1e-3 * std::pow(khz, 4.0);
}

MaskingModel::MaskingModel(const BarkBands& bands, const StftConfig& config,
                           const MaskingOptions& options)
    : options_(options) {
  // A tone at SPL L places band power L - spl_at_fullscale + offset dB under
  // the analysis window, with offset = 10*log10(W * sum(w^2) / 4).
  double psd_offset =
      10.0 * std::log10(config.window_len *
                        hann_window_power(config.window_len) / 4.0);
  for (int band = 1; band <= kNumBands; ++band) {
    if (options_.abs_floor) {
      double spl = absolute_threshold_db_spl(bands.band_center_hz(band));
      floor_db_[band - 1] =
          spl - options_.calibration.spl_at_fullscale + psd_offset;
    } else {
      floor_db_[band - 1] = kDbFloor;
    }
    floor_linear_[band - 1] = power_from_db(floor_db_[band - 1]);
  }
}

ThresholdRow MaskingModel::thresholds(const double* band_linear,
                                      const TonalityEstimate& t) const {
  ThresholdRow row;
  for (int v = 1; v <= kNumBands; ++v) {
    double spread = 0.0;
    for (int u = 1; u <= kNumBands; ++u)
      spread += spreading_.gain(v, u) * band_linear[u - 1];
    double threshold = spread * power_from_db(-offset_db(t.alpha, v)) /
                       spreading_.row_sum(v);
    if (options_.abs_floor && threshold < floor_linear_[v - 1]) {
      threshold = floor_linear_[v - 1];
      row.floor_active |= 1u << (v - 1);
    }
    row.linear[v - 1] = threshold;
    row.db[v - 1] = db_from_power(threshold);
  }
  return row;
}

Matrix MaskingModel::threshold_jacobian(const double* band_linear,
                                        const TonalityEstimate& t) const {
  ThresholdRow row = thresholds(band_linear, t);
  Matrix jac(kNumBands, kNumBands);
  for (int v = 1; v <= kNumBands; ++v) {
    if (row.is_floor_active(v)) continue;  // clamped: zero sensitivity
    double scale = power_from_db(-offset_db(t.alpha, v)) / spreading_.row_sum(v);
    for (int u = 1; u <= kNumBands; ++u)
      jac(v - 1, u - 1) = spreading_.gain(v, u) * scale;
  }
  return jac;
}

}  // namespace maskshaper
