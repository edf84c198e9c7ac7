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

#include "maskshaper/eval.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "maskshaper/bark.h"
#include "maskshaper/envelope.h"
#include "maskshaper/masking.h"
#include "maskshaper/scene.h"
#include "maskshaper/signal_io.h"

namespace maskshaper {
namespace {

constexpr std::array<BandRange, 4> kAllRanges = {
    BandRange::broadband, BandRange::low, BandRange::mid, BandRange::high};

const char* range_name(BandRange r) {
  switch (r) {
    case BandRange::broadband: return "broadband";
    case BandRange::low: return "low";
    case BandRange::mid: return "mid";
    case BandRange::high: return "high";
  }
  return "broadband";
}

std::optional<double>& range_slot(RangeValues& v, BandRange r) {
  switch (r) {
    case BandRange::broadband: return v.broadband;
    case BandRange::low: return v.low;
    case BandRange::mid: return v.mid;
    case BandRange::high: return v.high;
  }
  return v.broadband;
}

const std::optional<double>& range_slot(const RangeValues& v, BandRange r) {
  return range_slot(const_cast<RangeValues&>(v), r);
}

double range_slot(const GldValues& v, BandRange r) {
  switch (r) {
    case BandRange::broadband: return v.broadband;
    case BandRange::low: return v.low;
    case BandRange::mid: return v.mid;
    case BandRange::high: return v.high;
  }
  return v.broadband;
}

// Standard normal CDF.
double phi(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Exact two-sided p by enumerating the signed-rank null distribution.
// Average ranks make half-integer steps, so the DP walks doubled ranks.
double wilcoxon_exact_p(const std::vector<double>& ranks, double w_min) {
  int total2 = 0;
  std::vector<int> ranks2(ranks.size());
  for (size_t i = 0; i < ranks.size(); ++i) {
    ranks2[i] = static_cast<int>(std::llround(2.0 * ranks[i]));
    total2 += ranks2[i];
  }
  std::vector<double> ways(total2 + 1, 0.0);
  ways[0] = 1.0;
  for (int r2 : ranks2)
    for (int s = total2; s >= r2; --s) ways[s] += ways[s - r2];

  int w2 = static_cast<int>(std::llround(2.0 * w_min));
  double below = 0.0;
  for (int s = 0; s <= std::min(w2, total2); ++s) below += ways[s];
  double p = 2.0 * below * std::ldexp(1.0, -static_cast<int>(ranks.size()));
  return std::min(1.0, p);
}

double wilcoxon_normal_p(double n, double w_min, double tie_term) {
  double mu = n * (n + 1.0) / 4.0;
  double sigma2 = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
  if (sigma2 <= 0.0) return 1.0;
  double z = (w_min - mu + 0.5) / std::sqrt(sigma2);
  return std::min(1.0, 2.0 * phi(z));
}

struct SceneAudio {
  Spectrogram music;
  Spectrogram noise;
};

SceneAudio load_scene(const std::filesystem::path& base,
                      const ManifestEntry& entry, const StftConfig& config) {
  Signal music = read_wav((base / entry.music_path).string());
  Signal noise = read_wav((base / entry.noise_path).string());
  SceneAudio audio{stft(music, config), stft(noise, config)};
  if (audio.music.num_frames() == 0)
    throw std::runtime_error("scene too short to analyze");
  if (audio.music.num_frames() != audio.noise.num_frames())
    throw std::runtime_error("music/noise frame counts differ");
  return audio;
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

void append_range_csv(std::ostringstream& line, const RangeValues& v,
                      bool ok) {
  for (BandRange r : kAllRanges) {
    const std::optional<double>& slot = range_slot(v, r);
    line << ',';
    if (ok && slot.has_value()) line << format_double(*slot);
  }
}

nlohmann::json range_json(const RangeValues& v) {
  nlohmann::json out;
  for (BandRange r : kAllRanges) {
    const std::optional<double>& slot = range_slot(v, r);
    out[range_name(r)] =
        slot.has_value() ? nlohmann::json(*slot) : nlohmann::json(nullptr);
  }
  return out;
}

}  // namespace

int range_first_band(BandRange range) {
  switch (range) {
    case BandRange::broadband: return 1;
    case BandRange::low: return 1;
    case BandRange::mid: return 9;
    case BandRange::high: return 17;
  }
  return 1;
}

int range_last_band(BandRange range) {
  switch (range) {
    case BandRange::broadband: return kNumBands;
    case BandRange::low: return 8;
    case BandRange::mid: return 16;
    case BandRange::high: return 24;
  }
  return kNumBands;
}

RangeValues nmr(const Matrix& noise_band_db, const Matrix& thresholds_db,
                const Matrix& initial_thresholds_db) {
  if (noise_band_db.rows() != thresholds_db.rows() ||
      noise_band_db.rows() != initial_thresholds_db.rows() ||
      noise_band_db.cols() != kNumBands ||
      thresholds_db.cols() != kNumBands ||
      initial_thresholds_db.cols() != kNumBands)
    throw std::invalid_argument("nmr: expected aligned N x 26 matrices");

  RangeValues out;
  for (BandRange r : kAllRanges) {
    int first = range_first_band(r), last = range_last_band(r);
    double sum = 0.0;
    long count = 0;
    for (int n = 0; n < noise_band_db.rows(); ++n) {
      for (int v = first; v <= last; ++v) {
        if (!(noise_band_db(n, v - 1) > initial_thresholds_db(n, v - 1)))
          continue;
        sum += std::abs(noise_band_db(n, v - 1) - thresholds_db(n, v - 1));
        ++count;
      }
    }
    if (count > 0) range_slot(out, r) = sum / static_cast<double>(count);
  }
  return out;
}

int nmr_selected_count(const Matrix& noise_band_db,
                       const Matrix& initial_thresholds_db) {
  int count = 0;
  for (int n = 0; n < noise_band_db.rows(); ++n)
    for (int v = 0; v < kNumBands; ++v)
      if (noise_band_db(n, v) > initial_thresholds_db(n, v)) ++count;
  return count;
}

GldValues gld(const Spectrogram& original, const Spectrogram& processed,
              const BarkBands& bands, const DbaCalibration& calibration) {
  if (original.num_frames() != processed.num_frames() ||
      original.num_bins() != processed.num_bins())
    throw std::invalid_argument("gld: spectrogram shapes differ");

  const StftConfig& config = original.config();
  std::vector<double> weights = a_weighted_bin_gains(config, kSampleRate);
  int bins = original.num_bins();
  int frames = original.num_frames();

  GldValues out;
  for (BandRange r : kAllRanges) {
    int begin = 0, end = bins;
    if (r != BandRange::broadband) {
      begin = bands.band_begin_bin(range_first_band(r));
      end = bands.band_end_bin(range_last_band(r));
    }
    double acc = 0.0;
    for (int n = 0; n < frames; ++n) {
      const std::complex<double>* a = original.frame(n);
      const std::complex<double>* b = processed.frame(n);
      double wa = 0.0, wb = 0.0;
      for (int k = begin; k < end; ++k) {
        wa += weights[k] * std::norm(a[k]);
        wb += weights[k] * std::norm(b[k]);
      }
      acc += std::abs(frame_dba_from_weighted_power(wb, config, calibration) -
                      frame_dba_from_weighted_power(wa, config, calibration));
    }
    double value = frames > 0 ? acc / frames : 0.0;
    switch (r) {
      case BandRange::broadband: out.broadband = value; break;
      case BandRange::low: out.low = value; break;
      case BandRange::mid: out.mid = value; break;
      case BandRange::high: out.high = value; break;
    }
  }
  return out;
}

double wilcoxon_signed_rank(const std::vector<double>& a,
                            const std::vector<double>& b, WilcoxonMode mode) {
  if (a.size() != b.size())
    throw std::invalid_argument("wilcoxon: paired samples differ in length");

  std::vector<double> diffs;
  diffs.reserve(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    if (d != 0.0) diffs.push_back(d);
  }
  if (diffs.empty()) return 1.0;

  size_t n = diffs.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t i, size_t j) {
    return std::abs(diffs[i]) < std::abs(diffs[j]);
  });

  // Average ranks within tie groups; accumulate the tie variance term.
  std::vector<double> rank(n, 0.0);
  double tie_term = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n &&
           std::abs(diffs[order[j + 1]]) == std::abs(diffs[order[i]]))
      ++j;
    double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }

  double w_plus = 0.0, total = 0.0;
  for (size_t k = 0; k < n; ++k) {
    total += rank[k];
    if (diffs[k] > 0.0) w_plus += rank[k];
  }
  double w_min = std::min(w_plus, total - w_plus);

  bool exact = mode == WilcoxonMode::exact ||
               (mode == WilcoxonMode::automatic && n <= 20);
  if (exact) return wilcoxon_exact_p(rank, w_min);
  return wilcoxon_normal_p(static_cast<double>(n), w_min, tie_term);
}

MethodSpec MethodSpec::none() {
  return {Kind::none, "none", std::nullopt, nullptr};
}

MethodSpec MethodSpec::estreder() {
  return {Kind::estreder, "estreder", std::nullopt, nullptr};
}

MethodSpec MethodSpec::solver(std::optional<double> delta_p_max) {
  std::string name = "solver";
  if (delta_p_max.has_value()) {
    std::ostringstream out;
    out << "solver_dp" << *delta_p_max;
    name = out.str();
  }
  return {Kind::solver, name, delta_p_max, nullptr};
}

MethodSpec MethodSpec::predictor(const PredictorModel* model) {
  return {Kind::predictor, "predictor", std::nullopt, model};
}

SceneRun run_scene(const AnalysisContext& ctx, const SceneLossEvaluator& scene,
                   const Spectrogram& music, const Spectrogram& noise,
                   const MethodSpec& method, const EvalConfig& config) {
  SceneRun run;
  switch (method.kind) {
    case MethodSpec::Kind::none:
      run.gains = Matrix(scene.num_frames(), kNumGainBands, 0.0);
      break;
    case MethodSpec::Kind::estreder:
      run.gains = finalize_gains(
          estreder_gains(scene.noise_band_db(), scene.initial_thresholds_db()),
          &scene.mask(), ctx.smoothing_beta);
      break;
    case MethodSpec::Kind::solver: {
      SolverConfig solver = config.solver;
      solver.delta_p_max = method.delta_p_max;
      SolverResult solved = solve_gains(ctx, music, noise, solver);
      run.gains = std::move(solved.gains);
      run.trace = std::move(solved.trace);
      break;
    }
    case MethodSpec::Kind::predictor:
      if (method.model == nullptr)
        throw std::invalid_argument("predictor method without a model");
      run.gains = predict_gains(*method.model, scene, ctx.smoothing_beta);
      break;
  }

  run.processed =
      apply_response(music, compose_responses(run.gains, ctx.patterns));
  Matrix processed_thresholds = threshold_matrix(ctx, run.processed);
  const Matrix& initial = scene.initial_thresholds_db();

  run.record.method = method.name;
  run.record.valid_band_count =
      nmr_selected_count(scene.noise_band_db(), initial);
  run.record.nmr = nmr(scene.noise_band_db(), processed_thresholds, initial);
  run.record.nmr_initial = nmr(scene.noise_band_db(), initial, initial);
  run.record.gld = gld(music, run.processed, ctx.bands, config.calibration);
  return run;
}

DatasetEval evaluate_dataset(const std::string& manifest_path,
                             const std::vector<MethodSpec>& methods,
                             const EvalConfig& config) {
  for (size_t i = 0; i < methods.size(); ++i)
    for (size_t j = i + 1; j < methods.size(); ++j)
      if (methods[i].name == methods[j].name)
        throw std::invalid_argument("duplicate method name: " +
                                    methods[i].name);

  std::vector<ManifestEntry> entries = read_manifest(manifest_path);
  std::filesystem::path base =
      std::filesystem::path(manifest_path).parent_path();

  MaskingOptions masking;
  masking.calibration = config.calibration;
  AnalysisContext ctx(StftConfig{}, masking, config.smoothing_beta);

  DatasetEval result;
  result.records.reserve(entries.size() * methods.size());

  for (const ManifestEntry& entry : entries) {
    std::string scene_error;
    std::optional<SceneAudio> audio;
    try {
      audio = load_scene(base, entry, ctx.stft);
    } catch (const std::exception& e) {
      scene_error = e.what();
    }

    std::optional<SceneLossEvaluator> scene;
    if (audio.has_value())
      scene.emplace(ctx, audio->music, audio->noise,
                    config.solver.reach_radius);

    for (const MethodSpec& method : methods) {
      EvalRecord record;
      record.scene_id = entry.id;
      record.method = method.name;
      if (!audio.has_value()) {
        record.ok = false;
        record.error = scene_error;
        result.records.push_back(std::move(record));
        continue;
      }
      try {
        SceneRun run = run_scene(ctx, *scene, audio->music, audio->noise,
                                 method, config);
        run.record.scene_id = entry.id;
        record = std::move(run.record);
      } catch (const std::exception& e) {
        record.ok = false;
        record.error = e.what();
      }
      result.records.push_back(std::move(record));
    }
  }

  // Batched statistics against the baseline. Batches are drawn once and
  // shared by every comparison cell so results do not depend on cell order.
  StatReport& stats = result.stats;
  stats.baseline = config.baseline;
  stats.num_batches = config.num_batches;
  stats.batch_size = config.batch_size;

  std::vector<std::vector<size_t>> batches(
      static_cast<size_t>(std::max(config.num_batches, 0)));
  if (!entries.empty()) {
    Rng rng(config.seed);
    for (auto& batch : batches) {
      batch.resize(static_cast<size_t>(std::max(config.batch_size, 0)));
      for (size_t& index : batch)
        index = static_cast<size_t>(rng.uniform(0.0, 1.0) * entries.size()) %
                entries.size();
    }
  }

  auto record_of = [&](const std::string& method,
                       size_t scene_index) -> const EvalRecord& {
    return result.records[scene_index * methods.size() +
                          static_cast<size_t>(
                              std::find_if(methods.begin(), methods.end(),
                                           [&](const MethodSpec& m) {
                                             return m.name == method;
                                           }) -
                              methods.begin())];
  };

  bool have_baseline =
      std::any_of(methods.begin(), methods.end(), [&](const MethodSpec& m) {
        return m.name == config.baseline;
      });

  if (have_baseline) {
    for (const MethodSpec& method : methods) {
      if (method.name == config.baseline) continue;
      for (const char* metric : {"nmr", "gld"}) {
        for (BandRange r : kAllRanges) {
          StatCell cell;
          cell.method = method.name;
          cell.metric = metric;
          cell.range = range_name(r);

          double p_sum = 0.0;
          int used = 0;
          for (const auto& batch : batches) {
            std::vector<double> va, vb;
            for (size_t index : batch) {
              const EvalRecord& ra = record_of(method.name, index);
              const EvalRecord& rb = record_of(config.baseline, index);
              if (!ra.ok || !rb.ok) continue;
              if (std::string(metric) == "nmr") {
                const std::optional<double>& sa = range_slot(ra.nmr, r);
                const std::optional<double>& sb = range_slot(rb.nmr, r);
                if (!sa.has_value() || !sb.has_value()) continue;
                va.push_back(*sa);
                vb.push_back(*sb);
              } else {
                va.push_back(range_slot(ra.gld, r));
                vb.push_back(range_slot(rb.gld, r));
              }
            }
            if (va.size() < 5) continue;
            p_sum += wilcoxon_signed_rank(va, vb);
            ++used;
          }
          cell.batches_used = used;
          cell.mean_p_raw = used > 0 ? p_sum / used : 1.0;
          stats.cells.push_back(cell);
        }
      }
    }
  }

  stats.bonferroni_factor = static_cast<int>(stats.cells.size());
  for (StatCell& cell : stats.cells)
    cell.mean_p_corrected =
        std::min(1.0, cell.mean_p_raw * std::max(stats.bonferroni_factor, 1));

  return result;
}

void write_records_csv(const std::vector<EvalRecord>& records,
                       const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "scene_id,method,ok,error,valid_band_count"
      << ",nmr_broadband,nmr_low,nmr_mid,nmr_high"
      << ",nmr_initial_broadband,nmr_initial_low,nmr_initial_mid"
      << ",nmr_initial_high,gld_broadband,gld_low,gld_mid,gld_high\n";
  for (const EvalRecord& r : records) {
    std::ostringstream line;
    std::string error = r.error;
    std::replace(error.begin(), error.end(), ',', ';');
    std::replace(error.begin(), error.end(), '\n', ' ');
    line << r.scene_id << ',' << r.method << ',' << (r.ok ? 1 : 0) << ','
         << error << ',' << r.valid_band_count;
    append_range_csv(line, r.nmr, r.ok);
    append_range_csv(line, r.nmr_initial, r.ok);
    for (BandRange range : kAllRanges) {
      line << ',';
      if (r.ok) line << format_double(range_slot(r.gld, range));
    }
    out << line.str() << "\n";
  }
  if (!out.flush()) throw std::runtime_error("failed writing " + path);
}

void write_records_jsonl(const std::vector<EvalRecord>& records,
                         const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const EvalRecord& r : records) {
    nlohmann::json line = {
        {"scene_id", r.scene_id},
        {"method", r.method},
        {"ok", r.ok},
        {"error", r.error},
        {"valid_band_count", r.valid_band_count},
        {"nmr", range_json(r.nmr)},
        {"nmr_initial", range_json(r.nmr_initial)},
        {"gld",
         {{"broadband", r.gld.broadband},
          {"low", r.gld.low},
          {"mid", r.gld.mid},
          {"high", r.gld.high}}},
    };
    out << line.dump() << "\n";
  }
  if (!out.flush()) throw std::runtime_error("failed writing " + path);
}

void write_stat_report_json(const StatReport& report,
                            const std::string& path) {
  nlohmann::json cells = nlohmann::json::array();
  for (const StatCell& cell : report.cells) {
    cells.push_back({
        {"method", cell.method},
        {"metric", cell.metric},
        {"range", cell.range},
        {"mean_p_raw", cell.mean_p_raw},
        {"mean_p_corrected", cell.mean_p_corrected},
        {"batches_used", cell.batches_used},
    });
  }
  nlohmann::json doc = {
      {"baseline", report.baseline},
      {"num_batches", report.num_batches},
      {"batch_size", report.batch_size},
      {"bonferroni_factor", report.bonferroni_factor},
      {"cells", cells},
  };
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << doc.dump(2) << "\n";
  if (!out.flush()) throw std::runtime_error("failed writing " + path);
}

}  // namespace maskshaper
