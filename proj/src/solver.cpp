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

#include "maskshaper/solver.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace maskshaper {
namespace {

constexpr double kLn10Over10 = std::numbers::ln10 / 10.0;

// Bin power above which any admissible response keeps the bin off the dB
// floor (responses stay above -15 dB: three overlapping patterns at the
// -5 dB clamp), so the log-spectrum shortcut in eval_frame stays exact.
constexpr double kShortcutMinPower = 1e-10;

}  // namespace

Matrix threshold_matrix(const AnalysisContext& ctx, const Spectrogram& spec) {
  int frames = spec.num_frames();
  int bins = spec.num_bins();
  Matrix out(frames, kNumBands);
  std::vector<double> power(bins), band_linear(kNumBands);
  for (int n = 0; n < frames; ++n) {
    const std::complex<double>* x = spec.frame(n);
    for (int k = 0; k < bins; ++k) power[k] = std::norm(x[k]);
    TonalityEstimate t = tonality(power.data(), bins);
    band_psd_frame(power.data(), ctx.bands, band_linear.data(), nullptr);
    ThresholdRow row = ctx.model.thresholds(band_linear.data(), t);
    for (int v = 0; v < kNumBands; ++v) out(n, v) = row.db[v];
  }
  return out;
}

NeedMask need_mask(const Matrix& noise_band_db,
                   const Matrix& initial_thresholds_db, int reach_radius) {
  if (noise_band_db.rows() != initial_thresholds_db.rows() ||
      noise_band_db.cols() != kNumBands ||
      initial_thresholds_db.cols() != kNumBands)
    throw std::invalid_argument("need_mask: shape mismatch");
  if (reach_radius < 1)
    throw std::invalid_argument("need_mask: reach radius must be >= 1");
  NeedMask mask(noise_band_db.rows());
  for (int n = 0; n < noise_band_db.rows(); ++n)
    for (int v = 1; v <= kNumBands; ++v) {
      if (noise_band_db(n, v - 1) <= initial_thresholds_db(n, v - 1)) continue;
      mask.set_need(n, v);
      int lo = std::max(1, v - reach_radius);
      int hi = std::min(kNumGainBands, v + reach_radius);
      for (int mu = lo; mu <= hi; ++mu) mask.set_active(n, mu);
    }
  return mask;
}

Matrix estreder_gains(const Matrix& noise_band_db, const Matrix& thresholds_db) {
  if (noise_band_db.rows() != thresholds_db.rows() ||
      noise_band_db.cols() != kNumBands || thresholds_db.cols() != kNumBands)
    throw std::invalid_argument("estreder_gains: shape mismatch");
  Matrix gains(noise_band_db.rows(), kNumGainBands);
  for (int n = 0; n < gains.rows(); ++n)
    for (int mu = 0; mu < kNumGainBands; ++mu)
      gains(n, mu) =
          std::max(noise_band_db(n, mu) - thresholds_db(n, mu), 0.0);
  return clamp_gains(gains);
}

double loss_l0(const Matrix& noise_band_db, const Matrix& thresholds_db) {
  if (noise_band_db.rows() != thresholds_db.rows() ||
      noise_band_db.cols() != thresholds_db.cols())
    throw std::invalid_argument("loss_l0: shape mismatch");
  double acc = 0.0;
  const auto& a = noise_band_db.data();
  const auto& b = thresholds_db.data();
  for (size_t i = 0; i < a.size(); ++i) acc += std::max(a[i] - b[i], 0.0);
  return acc / static_cast<double>(a.size());
}

double loss_power(const std::vector<double>& original_dba,
                  const std::vector<double>& processed_dba) {
  if (original_dba.size() != processed_dba.size() || original_dba.empty())
    throw std::invalid_argument("loss_power: frame count mismatch");
  double acc = 0.0;
  for (size_t n = 0; n < original_dba.size(); ++n)
    acc += std::abs(processed_dba[n] - original_dba[n]);
  return acc / static_cast<double>(original_dba.size());
}

double loss_power(const Spectrogram& original, const Spectrogram& processed) {
  return loss_power(frame_power_dba(original).values,
                    frame_power_dba(processed).values);
}

double total_loss(double l0, double l_power, double lambda,
                  double delta_p_max) {
  return l0 - lambda * (delta_p_max - l_power);
}

double update_lambda(double lambda, double l_power, double delta_p_max,
                     double lambda_rate) {
  return std::max(0.0, lambda + lambda_rate * (l_power - delta_p_max));
}

Matrix finalize_gains(const Matrix& gains, const NeedMask* mask, double beta) {
  if (mask && mask->frames() != gains.rows())
    throw std::invalid_argument("finalize_gains: mask frame count mismatch");
  auto apply_mask = [&](Matrix& m) {
    if (!mask) return;
    for (int n = 0; n < m.rows(); ++n)
      for (int mu = 1; mu <= kNumGainBands; ++mu)
        if (!mask->active(n, mu)) m(n, mu - 1) = 0.0;
  };
  Matrix out = gains;
  apply_mask(out);
  if (beta > 0.0) out = smooth_gains(out, beta);
  apply_mask(out);
  return clamp_gains(out);
}

SceneLossEvaluator::SceneLossEvaluator(const AnalysisContext& ctx,
                                       const Spectrogram& music,
                                       const Spectrogram& noise,
                                       int reach_radius)
    : ctx_(ctx) {
  if (music.num_frames() != noise.num_frames())
    throw std::invalid_argument("scene: music/noise frame counts differ");
  if (music.num_bins() != ctx.stft.bins() ||
      noise.num_bins() != ctx.stft.bins())
    throw std::invalid_argument("scene: bin count mismatch with context");

  int frames = music.num_frames();
  int bins = ctx.stft.bins();
  music_power_ = Matrix(frames, bins);
  noise_band_db_ = band_psd(noise, ctx.bands).db;
  music_band_db_ = Matrix(frames, kNumBands);
  initial_thresholds_db_ = Matrix(frames, kNumBands);
  original_dba_.resize(frames);
  log_power_sum_.resize(frames);
  shortcut_ok_.resize(frames);

  std::array<double, kNumBands> band_linear;
  for (int n = 0; n < frames; ++n) {
    const std::complex<double>* frame = music.frame(n);
    double* p = music_power_.row(n);
    double a_sum = 0.0, log_sum = 0.0;
    double min_power = std::numeric_limits<double>::infinity();
    for (int k = 0; k < bins; ++k) {
      p[k] = std::norm(frame[k]);
      a_sum += ctx.a_weights[k] * p[k];
      if (k >= 1) {
        log_sum += std::log(std::max(p[k], kLinearFloor));
        min_power = std::min(min_power, p[k]);
      }
    }
    original_dba_[n] =
        frame_dba_from_weighted_power(a_sum, ctx.stft, ctx.masking.calibration);
    log_power_sum_[n] = log_sum;
    shortcut_ok_[n] = min_power >= kShortcutMinPower ? 1 : 0;

    TonalityEstimate t = tonality(p, bins);
    band_psd_frame(p, ctx.bands, band_linear.data(), music_band_db_.row(n));
    ThresholdRow row = ctx.model.thresholds(band_linear.data(), t);
    std::copy(row.db.begin(), row.db.end(), initial_thresholds_db_.row(n));
  }

  pattern_mean_.resize(kNumGainBands);
  for (int v = 1; v <= kNumGainBands; ++v) {
    double acc = 0.0;
    for (int k = std::max(ctx.patterns.support_begin(v), 1);
         k < ctx.patterns.support_end(v); ++k)
      acc += ctx.patterns.value(v, k);
    pattern_mean_[v - 1] = acc / (bins - 1);
  }

  mask_ = need_mask(noise_band_db_, initial_thresholds_db_, reach_radius);
}

SceneLossEvaluator::FrameEval SceneLossEvaluator::eval_frame(
    int n, const double* gains24, double* d_relu_dg, double* d_power_dg) const {
  int bins = ctx_.stft.bins();
  thread_local std::vector<double> resp, phat;
  resp.resize(bins);
  phat.resize(bins);

  ctx_.patterns.compose_response(gains24, resp.data());

  const double* p = music_power_.row(n);
  double a_sum = 0.0;       // A-weighted processed power
  double sum_tail = 0.0;    // processed power over bins 1..K-1
  double resp_tail = 0.0;   // response dB over bins 1..K-1
  for (int k = 0; k < bins; ++k) {
    phat[k] = p[k] * std::exp(kLn10Over10 * resp[k]);
    a_sum += ctx_.a_weights[k] * phat[k];
    if (k >= 1) {
      sum_tail += phat[k];
      resp_tail += resp[k];
    }
  }

  TonalityEstimate t;
  if (sum_tail > 0.0) {
    double mean_ln;
    if (shortcut_ok_[n]) {
      mean_ln = (log_power_sum_[n] + kLn10Over10 * resp_tail) / (bins - 1);
    } else {
      double acc = 0.0;
      for (int k = 1; k < bins; ++k)
        acc += std::log(std::max(phat[k], kLinearFloor));
      mean_ln = acc / (bins - 1);
    }
    t.sfm_db = 10.0 * mean_ln / std::numbers::ln10 -
               10.0 * std::log10(sum_tail / (bins - 1));
    t.alpha = std::clamp(t.sfm_db / -60.0, 0.0, 1.0);
  }

  std::array<double, kNumBands> band_hat;
  band_psd_frame(phat.data(), ctx_.bands, band_hat.data(), nullptr);
  ThresholdRow row = ctx_.model.thresholds(band_hat.data(), t);

  FrameEval out;
  out.threshold_db = row.db;

  const double* noise_db = noise_band_db_.row(n);
  std::array<bool, kNumBands> open{};
  for (int v = 0; v < kNumBands; ++v) {
    double gap = noise_db[v] - row.db[v];
    if (gap > 0.0) {
      open[v] = true;
      out.relu_sum += gap;
    }
  }

  out.processed_dba =
      frame_dba_from_weighted_power(a_sum, ctx_.stft, ctx_.masking.calibration);
  out.power_term = std::abs(out.processed_dba - original_dba_[n]);

  if (!d_relu_dg && !d_power_dg) return out;

  // Per-pattern weighted sums over the pattern supports: U(c,v) couples gain
  // band v to analysis band c; s_aw and s_tail feed the dBA and flatness
  // channels.
  double U[kNumGainBands][3] = {};
  double s_aw[kNumGainBands] = {};
  double s_tail[kNumGainBands] = {};
  for (int v = 1; v <= kNumGainBands; ++v) {
    for (int k = ctx_.patterns.support_begin(v);
         k < ctx_.patterns.support_end(v); ++k) {
      double w = ctx_.patterns.value(v, k);
      if (w == 0.0) continue;
      double pw = phat[k] * w;
      U[v - 1][ctx_.bands.band_of_bin(k) - (v - 1)] += pw;
      s_aw[v - 1] += ctx_.a_weights[k] * pw;
      if (k >= 1) s_tail[v - 1] += pw;
    }
  }

  if (d_power_dg) {
    bool live = a_sum > 0.0 && out.processed_dba > kDbFloor;
    double sign = out.processed_dba > original_dba_[n]   ? 1.0
                  : out.processed_dba < original_dba_[n] ? -1.0
                                                         : 0.0;
    for (int v = 0; v < kNumGainBands; ++v)
      d_power_dg[v] = live ? sign * s_aw[v] / a_sum : 0.0;
  }

  if (d_relu_dg) {
    Matrix jac = ctx_.model.threshold_jacobian(band_hat.data(), t);
    std::array<double, kNumBands> V{};
    double offset_weight = 0.0;  // sum of (9 + mu) over open, unfloored bands
    for (int mu = 1; mu <= kNumBands; ++mu) {
      if (!open[mu - 1] || row.is_floor_active(mu)) continue;
      double inv_t = 1.0 / row.linear[mu - 1];
      for (int c = 0; c < kNumBands; ++c) V[c] += jac(mu - 1, c) * inv_t;
      offset_weight += 9.0 + mu;
    }
    bool alpha_moves =
        sum_tail > 0.0 && t.sfm_db > -60.0 && t.sfm_db < 0.0;
    for (int v = 1; v <= kNumGainBands; ++v) {
      double coupled = 0.0;
      for (int c = std::max(v - 1, 1); c <= std::min(v + 1, kNumBands); ++c)
        coupled += V[c - 1] * U[v - 1][c - (v - 1)];
      double d = -coupled;
      if (alpha_moves && offset_weight > 0.0) {
        double d_sfm = pattern_mean_[v - 1] - s_tail[v - 1] / sum_tail;
        d += offset_weight * (-d_sfm / 60.0);
      }
      d_relu_dg[v - 1] = d;
    }
  }
  return out;
}

SceneLossEvaluator::SceneLoss SceneLossEvaluator::eval(
    const Matrix& applied_gains) const {
  if (applied_gains.rows() != num_frames() ||
      applied_gains.cols() != kNumGainBands)
    throw std::invalid_argument("eval: gain matrix shape mismatch");
  SceneLoss loss;
  for (int n = 0; n < num_frames(); ++n) {
    FrameEval fe = eval_frame(n, applied_gains.row(n), nullptr, nullptr);
    loss.l0 += fe.relu_sum;
    loss.l_power += fe.power_term;
  }
  loss.l0 /= static_cast<double>(num_frames()) * kNumBands;
  loss.l_power /= static_cast<double>(num_frames());
  return loss;
}

SolverResult solve_gains(const AnalysisContext& ctx, const Spectrogram& music,
                         const Spectrogram& noise, const SolverConfig& config) {
  SceneLossEvaluator scene(ctx, music, noise, config.reach_radius);
  int frames = scene.num_frames();
  const NeedMask& mask = scene.mask();

  SolverResult result;
  result.gains = Matrix(frames, kNumGainBands, 0.0);

  if (!mask.any_active()) {
    SceneLossEvaluator::SceneLoss loss = scene.eval(result.gains);
    result.trace.rows.push_back(
        {0, loss.l0, loss.l_power, 0.0, loss.l0, 0.0});
    return result;
  }

  Matrix gains(frames, kNumGainBands, 0.0);
  Matrix grad(frames, kNumGainBands);
  std::vector<double> d_relu(kNumGainBands), d_power(kNumGainBands);
  double lambda = 0.0;
  double beta = config.smoothing_in_loop ? ctx.smoothing_beta : 0.0;

  // Best evaluated iterate so far. With a budget, any iterate within the
  // stop rule's slack beats every iterate outside it; ties inside each class
  // break on L0 (inside) or on distance to the budget (outside).
  double best_l0 = std::numeric_limits<double>::infinity();
  double best_l_power = std::numeric_limits<double>::infinity();
  bool best_in_budget = false;
  auto improves = [&](double l0, double l_power) {
    if (!config.delta_p_max) return l0 < best_l0;
    bool in_budget = l_power <= *config.delta_p_max + 0.1;
    if (in_budget != best_in_budget) return in_budget;
    return in_budget ? l0 < best_l0 : l_power < best_l_power;
  };

  for (int iter = 0; iter < config.max_iters; ++iter) {
    Matrix applied = finalize_gains(gains, &mask, beta);

    double relu_total = 0.0, power_total = 0.0;
    for (int n = 0; n < frames; ++n) {
      SceneLossEvaluator::FrameEval fe =
          scene.eval_frame(n, applied.row(n), d_relu.data(), d_power.data());
      relu_total += fe.relu_sum;
      power_total += fe.power_term;
      // Step direction scaled per frame: d(relu)/dg + 26*lambda*d(power)/dg
      // is N*26 times the gradient of Eq. 5's mean-normalized loss, keeping
      // the step size meaningful in dB regardless of scene length.
      for (int v = 0; v < kNumGainBands; ++v)
        grad(n, v) = d_relu[v] + 26.0 * lambda * d_power[v];
    }
    double l0 = relu_total / (static_cast<double>(frames) * kNumBands);
    double l_power = power_total / frames;
    double total = config.delta_p_max
                       ? total_loss(l0, l_power, lambda, *config.delta_p_max)
                       : l0;
    if (!std::isfinite(total)) {
      result.trace.aborted = true;
      result.trace.message =
          "non-finite loss at iteration " + std::to_string(iter);
      break;
    }

    if (improves(l0, l_power)) {
      best_l0 = l0;
      best_l_power = l_power;
      best_in_budget =
          config.delta_p_max && l_power <= *config.delta_p_max + 0.1;
      result.gains = applied;
    }

    // Adjoint of the application pipeline: mask, then smoothing transposed,
    // then mask again via the projected update below.
    if (beta > 0.0) {
      for (int v = 0; v < kNumGainBands; ++v) {
        double carried = 0.0;
        for (int n = frames - 1; n >= 0; --n) {
          double d = mask.active(n, v + 1) ? grad(n, v) : 0.0;
          carried = d + beta * carried;
          grad(n, v) = (n == 0) ? carried : (1.0 - beta) * carried;
        }
      }
    }

    double max_change = 0.0;
    for (int n = 0; n < frames; ++n)
      for (int v = 0; v < kNumGainBands; ++v) {
        if (!mask.active(n, v + 1)) {
          gains(n, v) = 0.0;
          continue;
        }
        double next = std::clamp(gains(n, v) - config.step_size * grad(n, v),
                                 kGainMinDb, kGainMaxDb);
        max_change = std::max(max_change, std::abs(next - gains(n, v)));
        gains(n, v) = next;
      }

    result.trace.rows.push_back(
        {iter, l0, l_power, lambda, total, max_change});

    bool power_settled =
        !config.delta_p_max || l_power <= *config.delta_p_max + 0.1;
    if (config.delta_p_max)
      lambda = update_lambda(lambda, l_power, *config.delta_p_max,
                             config.lambda_rate);
    if (max_change < config.tolerance && power_settled) break;
  }

  return result;
}

}  // namespace maskshaper
