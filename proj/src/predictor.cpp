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

#include "maskshaper/predictor.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace maskshaper {
namespace {

constexpr char kMagic[4] = {'D', 'P', 'N', 'M'};
constexpr uint32_t kModelVersion = 1;

const std::vector<int>& default_dims() {
  static const std::vector<int> dims = {kFeatureDim, 64, 64, kNumGainBands};
  return dims;
}

// Forward pass for one feature row, keeping the hidden activations for
// backpropagation. activations[0] is the input; activations.back() is the
// raw 24-gain output.
void forward_row(const PredictorModel& model, const double* x,
                 std::vector<std::vector<double>>& activations) {
  size_t num_layers = model.weights.size();
  activations.resize(num_layers + 1);
  activations[0].assign(x, x + model.input_dim());
  for (size_t l = 0; l < num_layers; ++l) {
    const Matrix& w = model.weights[l];
    const std::vector<double>& b = model.biases[l];
    std::vector<double>& out = activations[l + 1];
    out.assign(w.rows(), 0.0);
    const std::vector<double>& in = activations[l];
    for (int i = 0; i < w.rows(); ++i) {
      double acc = b[i];
      const double* wr = w.row(i);
      for (int j = 0; j < w.cols(); ++j) acc += wr[j] * in[j];
      out[i] = (l + 1 < num_layers) ? std::max(acc, 0.0) : acc;
    }
  }
}

void check_model_shape(const PredictorModel& model) {
  if (model.layer_dims.size() < 2 ||
      model.weights.size() != model.layer_dims.size() - 1 ||
      model.biases.size() != model.weights.size())
    throw std::invalid_argument("model: inconsistent layer shapes");
  if (model.output_dim() != kNumGainBands)
    throw std::invalid_argument("model: output dimension must be 24");
}

}  // namespace

PredictorModel init_model(const TrainConfig& config) {
  PredictorModel model;
  model.layer_dims = default_dims();
  model.seed = config.seed;
  Rng rng(config.seed);
  for (size_t l = 0; l + 1 < model.layer_dims.size(); ++l) {
    int fan_in = model.layer_dims[l];
    int fan_out = model.layer_dims[l + 1];
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix w(fan_out, fan_in);
    for (double& v : w.data()) v = rng.uniform(-bound, bound);
    model.weights.push_back(std::move(w));
    model.biases.emplace_back(fan_out, 0.0);
  }
  return model;
}

Matrix build_features(const SceneLossEvaluator& scene, double center,
                      double scale) {
  const Matrix& music = scene.music_band_db();
  const Matrix& noise = scene.noise_band_db();
  const Matrix& threshold = scene.initial_thresholds_db();
  Matrix features(music.rows(), kFeatureDim);
  for (int n = 0; n < music.rows(); ++n)
    for (int v = 0; v < kNumBands; ++v) {
      features(n, v) = (music(n, v) - center) / scale;
      features(n, kNumBands + v) = (noise(n, v) - center) / scale;
      features(n, 2 * kNumBands + v) = (threshold(n, v) - center) / scale;
    }
  return features;
}

Matrix forward(const PredictorModel& model, const Matrix& features) {
  check_model_shape(model);
  if (features.cols() != model.input_dim())
    throw std::invalid_argument("forward: feature width does not match model");
  for (double v : features.data())
    if (!std::isfinite(v))
      throw std::invalid_argument("forward: features must be finite");

  Matrix gains(features.rows(), model.output_dim());
  std::vector<std::vector<double>> activations;
  for (int n = 0; n < features.rows(); ++n) {
    forward_row(model, features.row(n), activations);
    std::copy(activations.back().begin(), activations.back().end(),
              gains.row(n));
  }
  return gains;
}

Matrix predict_gains(const PredictorModel& model,
                     const SceneLossEvaluator& scene, double smoothing_beta) {
  Matrix raw = forward(model, build_features(scene, model.norm_center,
                                             model.norm_scale));
  return finalize_gains(raw, &scene.mask(), smoothing_beta);
}

LossGradient loss_and_gradient(const PredictorModel& model,
                               const std::vector<TrainingScene>& dataset,
                               const std::vector<std::pair<int, int>>& samples,
                               double lambda,
                               std::optional<double> delta_p_max) {
  check_model_shape(model);
  if (samples.empty())
    throw std::invalid_argument("loss_and_gradient: no samples");

  LossGradient out;
  for (const Matrix& w : model.weights) {
    out.d_weights.emplace_back(w.rows(), w.cols());
    out.d_biases.emplace_back(w.rows(), 0.0);
  }

  size_t num_layers = model.weights.size();
  std::vector<std::vector<double>> activations;
  std::vector<std::vector<double>> deltas(num_layers);
  std::vector<double> applied(kNumGainBands);
  std::vector<double> d_relu(kNumGainBands), d_power(kNumGainBands);

  for (auto [scene_idx, frame] : samples) {
    const TrainingScene& ts = dataset[scene_idx];
    forward_row(model, ts.features.row(frame), activations);
    const std::vector<double>& raw = activations.back();

    const NeedMask& mask = ts.scene->mask();
    for (int v = 0; v < kNumGainBands; ++v)
      applied[v] = mask.active(frame, v + 1)
                       ? std::clamp(raw[v], kGainMinDb, kGainMaxDb)
                       : 0.0;

    SceneLossEvaluator::FrameEval fe = ts.scene->eval_frame(
        frame, applied.data(), d_relu.data(), d_power.data());
    out.l0 += fe.relu_sum / kNumBands;
    out.l_power += fe.power_term;

    // dL/d(raw gain): loss channel weights, zeroed where the mask or clamp
    // blocks the path.
    std::vector<double>& top = deltas[num_layers - 1];
    top.assign(kNumGainBands, 0.0);
    for (int v = 0; v < kNumGainBands; ++v) {
      bool pass = mask.active(frame, v + 1) && raw[v] > kGainMinDb &&
                  raw[v] < kGainMaxDb;
      if (pass) top[v] = d_relu[v] / kNumBands + lambda * d_power[v];
    }

    // Backpropagate through the rectifier stack.
    for (size_t l = num_layers - 1; l > 0; --l) {
      const Matrix& w = model.weights[l];
      std::vector<double>& below = deltas[l - 1];
      below.assign(w.cols(), 0.0);
      for (int i = 0; i < w.rows(); ++i) {
        double d = deltas[l][i];
        if (d == 0.0) continue;
        const double* wr = w.row(i);
        for (int j = 0; j < w.cols(); ++j) below[j] += d * wr[j];
      }
      const std::vector<double>& act = activations[l];
      for (int j = 0; j < static_cast<int>(below.size()); ++j)
        if (act[j] <= 0.0) below[j] = 0.0;
    }

    for (size_t l = 0; l < num_layers; ++l) {
      const std::vector<double>& in = activations[l];
      Matrix& dw = out.d_weights[l];
      std::vector<double>& db = out.d_biases[l];
      for (int i = 0; i < dw.rows(); ++i) {
        double d = deltas[l][i];
        if (d == 0.0) continue;
        db[i] += d;
        double* dwr = dw.row(i);
        for (int j = 0; j < dw.cols(); ++j) dwr[j] += d * in[j];
      }
    }
  }

  double inv = 1.0 / static_cast<double>(samples.size());
  out.l0 *= inv;
  out.l_power *= inv;
  for (Matrix& dw : out.d_weights)
    for (double& v : dw.data()) v *= inv;
  for (std::vector<double>& db : out.d_biases)
    for (double& v : db) v *= inv;
  out.total = delta_p_max
                  ? total_loss(out.l0, out.l_power, lambda, *delta_p_max)
                  : out.l0;
  return out;
}

TrainLog train(PredictorModel& model, const std::vector<TrainingScene>& dataset,
               const TrainConfig& config) {
  check_model_shape(model);
  if (config.epochs <= 0 || config.learning_rate <= 0.0 ||
      config.batch_size <= 0 || config.lambda_rate <= 0.0)
    throw std::invalid_argument("train: rates and sizes must be positive");

  std::vector<std::pair<int, int>> all_samples;
  for (size_t s = 0; s < dataset.size(); ++s) {
    if (!dataset[s].scene)
      throw std::invalid_argument("train: dataset scene missing");
    for (int n = 0; n < dataset[s].scene->num_frames(); ++n)
      all_samples.emplace_back(static_cast<int>(s), n);
  }
  if (all_samples.empty())
    throw std::invalid_argument("train: empty dataset");

  TrainLog log;
  double lambda = 0.0;
  Rng base_rng(config.seed);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Deterministic per-epoch shuffle.
    Rng rng = base_rng.derive(static_cast<uint64_t>(epoch) + 1);
    for (size_t i = all_samples.size(); i > 1; --i)
      std::swap(all_samples[i - 1],
                all_samples[static_cast<size_t>(rng.uniform(0.0, i))]);

    double epoch_l0 = 0.0, epoch_power = 0.0;
    size_t epoch_count = 0;
    for (size_t begin = 0; begin < all_samples.size();
         begin += config.batch_size) {
      size_t end = std::min(begin + config.batch_size, all_samples.size());
      std::vector<std::pair<int, int>> batch(all_samples.begin() + begin,
                                             all_samples.begin() + end);
      LossGradient grad =
          loss_and_gradient(model, dataset, batch, lambda, config.delta_p_max);
      if (!std::isfinite(grad.total) || grad.total > 1e6) {
        log.aborted = true;
        log.message = "training diverged at epoch " + std::to_string(epoch);
        return log;
      }
      epoch_l0 += grad.l0 * batch.size();
      epoch_power += grad.l_power * batch.size();
      epoch_count += batch.size();

      for (size_t l = 0; l < model.weights.size(); ++l) {
        std::vector<double>& wd = model.weights[l].data();
        const std::vector<double>& gd = grad.d_weights[l].data();
        for (size_t i = 0; i < wd.size(); ++i)
          wd[i] -= config.learning_rate * gd[i];
        for (size_t i = 0; i < model.biases[l].size(); ++i)
          model.biases[l][i] -= config.learning_rate * grad.d_biases[l][i];
      }
      if (config.delta_p_max)
        lambda = update_lambda(lambda, grad.l_power, *config.delta_p_max,
                               config.lambda_rate);
    }
    log.rows.push_back({epoch, epoch_l0 / epoch_count,
                        epoch_power / epoch_count, lambda});
  }
  return log;
}

namespace {

void put_bytes(std::ofstream& out, const void* data, size_t size) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
}

struct ByteReader {
  const std::vector<char>& bytes;
  size_t pos = 0;

  void read(void* dst, size_t size) {
    if (pos + size > bytes.size())
      throw std::runtime_error("truncated model file");
    std::memcpy(dst, bytes.data() + pos, size);
    pos += size;
  }
  template <typename T>
  T get() {
    T v;
    read(&v, sizeof(T));
    return v;
  }
};

}  // namespace

void save_model(const PredictorModel& model, const std::string& path) {
  check_model_shape(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open model file for writing");

  put_bytes(out, kMagic, sizeof(kMagic));
  uint32_t version = kModelVersion;
  put_bytes(out, &version, sizeof(version));
  uint32_t num_dims = static_cast<uint32_t>(model.layer_dims.size());
  put_bytes(out, &num_dims, sizeof(num_dims));
  for (int d : model.layer_dims) {
    uint32_t dim = static_cast<uint32_t>(d);
    put_bytes(out, &dim, sizeof(dim));
  }
  put_bytes(out, &model.seed, sizeof(model.seed));
  put_bytes(out, &model.norm_center, sizeof(model.norm_center));
  put_bytes(out, &model.norm_scale, sizeof(model.norm_scale));
  for (size_t l = 0; l < model.weights.size(); ++l) {
    const std::vector<double>& w = model.weights[l].data();
    put_bytes(out, w.data(), w.size() * sizeof(double));
    put_bytes(out, model.biases[l].data(),
              model.biases[l].size() * sizeof(double));
  }
  if (!out) throw std::runtime_error("failed to write model file");
}

PredictorModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
  ByteReader reader{bytes};

  char magic[4];
  reader.read(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a model file");
  uint32_t version = reader.get<uint32_t>();
  if (version != kModelVersion)
    throw std::runtime_error("unsupported model version " +
                             std::to_string(version));

  PredictorModel model;
  uint32_t num_dims = reader.get<uint32_t>();
  if (num_dims < 2 || num_dims > 16)
    throw std::runtime_error("model header has invalid layer count");
  for (uint32_t i = 0; i < num_dims; ++i) {
    uint32_t dim = reader.get<uint32_t>();
    if (dim == 0 || dim > 1 << 20)
      throw std::runtime_error("model header has invalid layer dimension");
    model.layer_dims.push_back(static_cast<int>(dim));
  }
  model.seed = reader.get<uint64_t>();
  model.norm_center = reader.get<double>();
  model.norm_scale = reader.get<double>();

  for (size_t l = 0; l + 1 < model.layer_dims.size(); ++l) {
    Matrix w(model.layer_dims[l + 1], model.layer_dims[l]);
    reader.read(w.data().data(), w.data().size() * sizeof(double));
    std::vector<double> b(model.layer_dims[l + 1]);
    reader.read(b.data(), b.size() * sizeof(double));
    model.weights.push_back(std::move(w));
    model.biases.push_back(std::move(b));
  }
  if (reader.pos != bytes.size())
    throw std::runtime_error("model file has trailing bytes");

  for (const Matrix& w : model.weights)
    for (double v : w.data())
      if (!std::isfinite(v))
        throw std::runtime_error("model has non-finite parameters");
  check_model_shape(model);
  return model;
}

}  // namespace maskshaper
