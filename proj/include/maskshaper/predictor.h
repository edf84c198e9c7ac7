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

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "maskshaper/common.h"
#include "maskshaper/solver.h"

namespace maskshaper {

inline constexpr int kFeatureDim = 3 * kNumBands;  // music, noise, threshold
inline constexpr double kFeatureCenterDb = 60.0;
inline constexpr double kFeatureScaleDb = 40.0;

// Per-frame feed-forward gain predictor: rectifier hidden layers, identity
// output of 24 gains in dB.
struct PredictorModel {
  std::vector<int> layer_dims;  // [78, 64, 64, 24]
  std::vector<Matrix> weights;  // weights[l] has shape dims[l+1] x dims[l]
  std::vector<std::vector<double>> biases;
  uint64_t seed = 0;
  double norm_center = kFeatureCenterDb;
  double norm_scale = kFeatureScaleDb;

  int input_dim() const { return layer_dims.front(); }
  int output_dim() const { return layer_dims.back(); }
};

struct TrainConfig {
  int epochs = 50;
  double learning_rate = 1e-3;
  int batch_size = 64;
  double lambda_rate = 1e-3;
  std::optional<double> delta_p_max;
  uint64_t seed = 1;
};

// Deterministic uniform fan-in-scaled initialization of the fixed
// [78, 64, 64, 24] architecture.
PredictorModel init_model(const TrainConfig& config);

// N x 78 normalized feature rows (music, noise, threshold band levels).
Matrix build_features(const SceneLossEvaluator& scene,
                      double center = kFeatureCenterDb,
                      double scale = kFeatureScaleDb);

// Raw per-frame network outputs (pre-mask, pre-clamp). Throws on non-finite
// features or a feature width that does not match the model.
Matrix forward(const PredictorModel& model, const Matrix& features);

// Full inference pipeline: forward, then activity mask, smoothing, clamp.
Matrix predict_gains(const PredictorModel& model,
                     const SceneLossEvaluator& scene, double smoothing_beta);

// One scene of training data; the evaluator outlives the dataset.
struct TrainingScene {
  const SceneLossEvaluator* scene = nullptr;
  Matrix features;  // N x 78, normalized with the model constants
};

struct EpochRow {
  int epoch;
  double l0;
  double l_power;
  double lambda;
};

struct TrainLog {
  std::vector<EpochRow> rows;
  bool aborted = false;
  std::string message;
};

// Training loss and parameter gradient over a set of (scene, frame) samples
// at a fixed multiplier. Gains pass through mask and clamp before the loss;
// the loss is the mean per-frame Eq.-style objective over the samples.
struct LossGradient {
  double total = 0.0;
  double l0 = 0.0;
  double l_power = 0.0;
  std::vector<Matrix> d_weights;
  std::vector<std::vector<double>> d_biases;
};
LossGradient loss_and_gradient(const PredictorModel& model,
                               const std::vector<TrainingScene>& dataset,
                               const std::vector<std::pair<int, int>>& samples,
                               double lambda,
                               std::optional<double> delta_p_max);

// Mini-batch SGD on the constrained loss with one global multiplier updated
// per batch. Deterministic for a fixed seed and dataset order.
TrainLog train(PredictorModel& model, const std::vector<TrainingScene>& dataset,
               const TrainConfig& config);

// Little-endian binary model file, magic "DPNM", versioned header carrying
// layer dims, seed, and normalization constants; parameters as 64-bit floats.
void save_model(const PredictorModel& model, const std::string& path);
PredictorModel load_model(const std::string& path);

}  // namespace maskshaper
