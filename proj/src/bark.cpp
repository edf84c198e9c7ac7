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

#include "maskshaper/bark.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace maskshaper {

double bark_of_freq(double frequency_hz) {
  if (frequency_hz < 0.0 || frequency_hz > 22050.0)
    throw std::invalid_argument("bark_of_freq: frequency outside [0, 22050]");
  double r = frequency_hz / 7500.0;
  return 13.0 * std::atan(0.00076 * frequency_hz) + 3.5 * std::atan(r * r);
}

int band_index(double frequency_hz) {
  double f = std::clamp(frequency_hz, 0.0, 22050.0);
  int band = static_cast<int>(std::floor(bark_of_freq(f))) + 1;
  return std::min(band, kNumBands);
}

BarkBands::BarkBands(const StftConfig& config, int sample_rate) {
  double nyquist = sample_rate / 2.0;
  double z_max = bark_of_freq(nyquist);

  edges_hz_[0] = 0.0;
  for (int j = 1; j <= kNumBands; ++j) {
    if (static_cast<double>(j) >= z_max) {
      edges_hz_[j] = nyquist;
      continue;
    }
    // z is strictly increasing; bisect z(f) = j.
    double lo = edges_hz_[j - 1], hi = nyquist;
    for (int it = 0; it < 80; ++it) {
      double mid = 0.5 * (lo + hi);
      (bark_of_freq(mid) < j ? lo : hi) = mid;
    }
    edges_hz_[j] = 0.5 * (lo + hi);
  }

  int bins = config.bins();
  bin_freq_step_ = static_cast<double>(sample_rate) / config.window_len;
  bin_to_band_.resize(bins);
  for (int k = 0; k < bins; ++k) bin_to_band_[k] = band_index(bin_freq_hz(k));

  // z is monotone in bin frequency, so each band's bins are contiguous.
  for (int band = 1; band <= kNumBands; ++band) {
    auto lo = std::lower_bound(bin_to_band_.begin(), bin_to_band_.end(), band);
    auto hi = std::upper_bound(bin_to_band_.begin(), bin_to_band_.end(), band);
    begin_bin_[band - 1] = static_cast<int>(lo - bin_to_band_.begin());
    end_bin_[band - 1] = static_cast<int>(hi - bin_to_band_.begin());
  }
}

void band_psd_frame(const double* bin_power, const BarkBands& bands,
                    double* linear_out, double* db_out) {
  for (int band = 1; band <= bands.count(); ++band) {
    double acc = 0.0;
    for (int k = bands.band_begin_bin(band); k < bands.band_end_bin(band); ++k)
      acc += bin_power[k];
    linear_out[band - 1] = acc;
    if (db_out) db_out[band - 1] = db_from_power(acc);
  }
}

BandPsd band_psd(const Spectrogram& spec, const BarkBands& bands) {
  BandPsd psd;
  psd.linear = Matrix(spec.num_frames(), bands.count());
  psd.db = Matrix(spec.num_frames(), bands.count());
  std::vector<double> bin_power(spec.num_bins());
  for (int n = 0; n < spec.num_frames(); ++n) {
    const std::complex<double>* frame = spec.frame(n);
    for (int k = 0; k < spec.num_bins(); ++k) bin_power[k] = std::norm(frame[k]);
    band_psd_frame(bin_power.data(), bands, psd.linear.row(n), psd.db.row(n));
  }
  return psd;
}

}  // namespace maskshaper
