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

#include "maskshaper/bark.h"
#include "maskshaper/common.h"
#include "maskshaper/signal_io.h"

namespace maskshaper {

// Gains are predicted for bands 1..24 only; the top two band slots pass
// through unshaped.
inline constexpr int kNumGainBands = 24;

inline constexpr double kGainMinDb = -5.0;
inline constexpr double kGainMaxDb = 10.0;

// Per-band shaping patterns sampled on the STFT bin grid. Pattern v holds its
// peak across band v's bins (peak 2 for v = 1, else 1), ramps up across band
// v-1 and down across band v+1 with raised-cosine shapes parameterized over
// each adjacent band's frequency extent, and is zero elsewhere.
class PatternBank {
 public:
  explicit PatternBank(const BarkBands& bands);

  int num_patterns() const { return kNumGainBands; }
  int num_bins() const { return num_bins_; }

  // 1-based pattern index; row of num_bins() values.
  const double* pattern(int v) const {
    return w_.row(v - 1);
  }
  double value(int v, int k) const { return w_(v - 1, k); }

  // Bin range [begin, end) outside which pattern v is identically zero.
  int support_begin(int v) const { return support_begin_[v - 1]; }
  int support_end(int v) const { return support_end_[v - 1]; }

  // response_db[k] = sum_v gains24[v-1] * pattern(v)[k]; response_db must
  // hold num_bins() entries and is fully overwritten.
  void compose_response(const double* gains24, double* response_db) const;

 private:
  Matrix w_;
  std::vector<int> support_begin_;
  std::vector<int> support_end_;
  int num_bins_ = 0;
};

// Full response matrix (frames x bins) from per-frame gains (frames x 24).
Matrix compose_responses(const Matrix& gains, const PatternBank& patterns);

// Causal per-band exponential smoothing: y(0) = g(0),
// y(n) = beta*y(n-1) + (1-beta)*g(n). beta in [0, 1).
Matrix smooth_gains(const Matrix& gains, double beta);

// Clamp every gain into [-5, +10] dB.
Matrix clamp_gains(const Matrix& gains);

// X_hat(n,k) = X(n,k) * 10^(response_db[n][k]/20). Shapes must match.
Spectrogram apply_response(const Spectrogram& spec, const Matrix& response_db);

}  // namespace maskshaper
