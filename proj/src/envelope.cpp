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

#include "maskshaper/envelope.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace maskshaper {

PatternBank::PatternBank(const BarkBands& bands)
    : w_(kNumGainBands, bands.num_bins()),
      support_begin_(kNumGainBands),
      support_end_(kNumGainBands),
      num_bins_(bands.num_bins()) {
  const auto& edges = bands.band_edges_hz();
  for (int v = 1; v <= kNumGainBands; ++v) {
    double peak = (v == 1) ? 2.0 : 1.0;
    double* row = w_.row(v - 1);

    for (int k = 0; k < num_bins_; ++k) {
      int band = bands.band_of_bin(k);
      if (band == v) {
        row[k] = peak;
      } else if (band == v - 1 || band == v + 1) {
        // Raised-cosine ramp over the adjacent band's full extent: up across
        // the band below, down across the band above.
        double lo = edges[band - 1], hi = edges[band];
        double t = (bands.bin_freq_hz(k) - lo) / (hi - lo);
        double sign = (band == v - 1) ? -1.0 : 1.0;
        row[k] = peak * 0.5 * (1.0 + sign * std::cos(std::numbers::pi * t));
      } else {
        row[k] = 0.0;
      }
    }

    int lo_band = std::max(v - 1, 1);
    int hi_band = std::min(v + 1, bands.count());
    support_begin_[v - 1] = bands.band_begin_bin(lo_band);
    support_end_[v - 1] = bands.band_end_bin(hi_band);
  }
}

void PatternBank::compose_response(const double* gains24,
                                   double* response_db) const {
  std::fill(response_db, response_db + num_bins_, 0.0);
  for (int v = 1; v <= kNumGainBands; ++v) {
    double g = gains24[v - 1];
    if (g == 0.0) continue;
    const double* row = pattern(v);
    for (int k = support_begin_[v - 1]; k < support_end_[v - 1]; ++k)
      response_db[k] += g * row[k];
  }
}

Matrix compose_responses(const Matrix& gains, const PatternBank& patterns) {
  Matrix response(gains.rows(), patterns.num_bins());
  for (int n = 0; n < gains.rows(); ++n)
    patterns.compose_response(gains.row(n), response.row(n));
  return response;
}

Matrix smooth_gains(const Matrix& gains, double beta) {
  if (beta < 0.0 || beta >= 1.0)
    throw std::invalid_argument("smooth_gains: beta outside [0, 1)");
  Matrix out(gains.rows(), gains.cols());
  if (gains.rows() == 0) return out;
  for (int c = 0; c < gains.cols(); ++c) out(0, c) = gains(0, c);
  for (int n = 1; n < gains.rows(); ++n)
    for (int c = 0; c < gains.cols(); ++c)
      out(n, c) = beta * out(n - 1, c) + (1.0 - beta) * gains(n, c);
  return out;
}

Matrix clamp_gains(const Matrix& gains) {
  Matrix out = gains;
  for (double& g : out.data()) g = std::clamp(g, kGainMinDb, kGainMaxDb);
  return out;
}

Spectrogram apply_response(const Spectrogram& spec, const Matrix& response_db) {
  if (response_db.rows() != spec.num_frames() ||
      response_db.cols() != spec.num_bins())
    throw std::invalid_argument("apply_response: shape mismatch");
  Spectrogram out = spec;
  for (int n = 0; n < out.num_frames(); ++n) {
    std::complex<double>* frame = out.frame(n);
    const double* db = response_db.row(n);
    for (int k = 0; k < out.num_bins(); ++k) frame[k] *= amp_from_db(db[k]);
  }
  return out;
}

}  // namespace maskshaper
