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
#include <optional>
#include <string>
#include <vector>

#include "maskshaper/bark.h"
#include "maskshaper/common.h"
#include "maskshaper/envelope.h"
#include "maskshaper/masking.h"
#include "maskshaper/signal_io.h"

namespace maskshaper {

// Precomputed analysis machinery shared by the solvers, the predictor, and
// the evaluation metrics. Immutable after construction.
struct AnalysisContext {
  StftConfig stft;
  MaskingOptions masking;
  BarkBands bands;
  PatternBank patterns;
  MaskingModel model;
  std::vector<double> a_weights;  // c_k * wA(f_k) per bin
  double smoothing_beta = 0.8;

  explicit AnalysisContext(const StftConfig& config = {},
                           const MaskingOptions& options = {},
                           double beta = 0.8)
      : stft(config),
        masking(options),
        bands(config),
        patterns(bands),
        model(bands, config, options),
        a_weights(a_weighted_bin_gains(config, kSampleRate)),
        smoothing_beta(beta) {}
};

// Masking thresholds of a (possibly processed) spectrogram, N x 26 in dB,
// with the tonality recomputed per frame from the full-resolution spectrum.
Matrix threshold_matrix(const AnalysisContext& ctx, const Spectrogram& spec);

// Which bands need help (noise above the initial threshold) and which gain
// bands are allowed to act (within reach_radius of a needed band).
class NeedMask {
 public:
  NeedMask() = default;
  NeedMask(int frames)
      : frames_(frames),
        need_(static_cast<size_t>(frames) * kNumBands, 0),
        active_(static_cast<size_t>(frames) * kNumGainBands, 0) {}

  int frames() const { return frames_; }
  bool need(int n, int v) const {  // 1-based band v in 1..26
    return need_[static_cast<size_t>(n) * kNumBands + (v - 1)] != 0;
  }
  bool active(int n, int mu) const {  // 1-based gain band mu in 1..24
    return active_[static_cast<size_t>(n) * kNumGainBands + (mu - 1)] != 0;
  }
  void set_need(int n, int v) {
    need_[static_cast<size_t>(n) * kNumBands + (v - 1)] = 1;
  }
  void set_active(int n, int mu) {
    active_[static_cast<size_t>(n) * kNumGainBands + (mu - 1)] = 1;
  }
  bool any_active() const {
    for (uint8_t a : active_)
      if (a) return true;
    return false;
  }

 private:
  int frames_ = 0;
  std::vector<uint8_t> need_;
  std::vector<uint8_t> active_;
};

// need(n,v) = noise above initial threshold; active(n,mu) = some needed band
// within reach_radius of gain band mu.
NeedMask need_mask(const Matrix& noise_band_db,
                   const Matrix& initial_thresholds_db, int reach_radius);

// Baseline rule: per gain band, raise by the noise-over-threshold excess,
// then clamp into the shared gain range.
Matrix estreder_gains(const Matrix& noise_band_db, const Matrix& thresholds_db);

// Mean over all frames and 26 bands of ReLU(noise_dB - threshold_dB).
double loss_l0(const Matrix& noise_band_db, const Matrix& thresholds_db);

// Mean over frames of |processed dBA - original dBA|.
double loss_power(const std::vector<double>& original_dba,
                  const std::vector<double>& processed_dba);
double loss_power(const Spectrogram& original, const Spectrogram& processed);

// L = L0 - lambda * (delta_p_max - L_power).
double total_loss(double l0, double l_power, double lambda, double delta_p_max);

// lambda' = max(0, lambda + rate * (L_power - delta_p_max)).
double update_lambda(double lambda, double l_power, double delta_p_max,
                     double lambda_rate);

// Shared application pipeline: activity mask (when given), temporal
// smoothing, mask again (smoothing smears into masked frames), clamp.
Matrix finalize_gains(const Matrix& gains, const NeedMask* mask, double beta);

struct SolverConfig {
  std::optional<double> delta_p_max;  // dBA budget; unset = unconstrained
  double step_size = 0.5;
  double lambda_rate = 1e-3;
  int max_iters = 300;
  double tolerance = 1e-3;  // dB: stop when no gain moves more than this
  int reach_radius = 3;
  bool smoothing_in_loop = true;
};

struct SolverIterationRow {
  int iteration;
  double l0;
  double l_power;
  double lambda;
  double total;
  double max_gain_change;
};

struct SolverTrace {
  std::vector<SolverIterationRow> rows;
  bool aborted = false;
  std::string message;
};

struct SolverResult {
  // Finalized gains (N x 24, smoothed, masked entries exactly 0, clamped) of
  // the best evaluated iterate: lowest L0 within the power budget when one
  // is set, lowest L0 overall otherwise. The fixed-step subgradient loop can
  // keep oscillating around the ReLU kinks, so the last iterate is not
  // necessarily the best one.
  Matrix gains;
  SolverTrace trace;
};

// Per-scene loss machinery: music/noise analysis fixed at construction,
// losses and analytic gradients evaluated per frame for a row of applied
// gains. Shared by the direct solver, the predictor's training loop, and
// the evaluation metrics.
class SceneLossEvaluator {
 public:
  SceneLossEvaluator(const AnalysisContext& ctx, const Spectrogram& music,
                     const Spectrogram& noise, int reach_radius);

  int num_frames() const { return music_power_.rows(); }
  const AnalysisContext& context() const { return ctx_; }
  const NeedMask& mask() const { return mask_; }
  const Matrix& noise_band_db() const { return noise_band_db_; }
  const Matrix& initial_thresholds_db() const { return initial_thresholds_db_; }
  const Matrix& music_band_db() const { return music_band_db_; }
  const std::vector<double>& original_dba() const { return original_dba_; }

  struct FrameEval {
    double relu_sum = 0.0;    // sum over 26 bands of ReLU(noise_dB - T_dB)
    double power_term = 0.0;  // |processed dBA - original dBA|
    double processed_dba = 0.0;
    std::array<double, kNumBands> threshold_db;
  };

  // Evaluates frame n under a row of 24 applied gains. When the gradient
  // outputs are non-null they receive d(relu_sum)/dg and d(power_term)/dg,
  // including the tonality channel (the spectral flatness moves with the
  // gains, so its effect on the offset is part of the true gradient).
  FrameEval eval_frame(int n, const double* gains24, double* d_relu_dg,
                       double* d_power_dg) const;

  struct SceneLoss {
    double l0 = 0.0;
    double l_power = 0.0;
  };

  // Losses across all frames for a finalized gain matrix (N x 24).
  SceneLoss eval(const Matrix& applied_gains) const;

 private:
  const AnalysisContext& ctx_;
  Matrix music_power_;    // N x K bin powers of the unprocessed music
  Matrix noise_band_db_;  // N x 26
  Matrix music_band_db_;  // N x 26 (unprocessed, for features)
  Matrix initial_thresholds_db_;
  std::vector<double> original_dba_;
  std::vector<double> log_power_sum_;  // per frame, bins 1..K-1
  std::vector<uint8_t> shortcut_ok_;   // per frame: no bin near the dB floor
  std::vector<double> pattern_mean_;   // per pattern, mean over bins 1..K-1
  NeedMask mask_;
};

// Direct per-excerpt optimization of the gain matrix under the constrained
// loss with multiplier dynamics. Deterministic.
SolverResult solve_gains(const AnalysisContext& ctx, const Spectrogram& music,
                         const Spectrogram& noise, const SolverConfig& config);

}  // namespace maskshaper
