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

#include <optional>
#include <string>
#include <vector>

#include "maskshaper/common.h"
#include "maskshaper/predictor.h"
#include "maskshaper/solver.h"

namespace maskshaper {

// Frequency ranges over the 24 actuated bands: low 1-8, mid 9-16, high
// 17-24. Broadband additionally covers the top analysis bands that no gain
// band reaches.
enum class BandRange { broadband, low, mid, high };

// Inclusive 1-based analysis-band window of a range.
int range_first_band(BandRange range);
int range_last_band(BandRange range);

struct RangeValues {
  std::optional<double> broadband;
  std::optional<double> low;
  std::optional<double> mid;
  std::optional<double> high;
};

// Noise-to-mask ratio per range: mean |noise_dB - T_dB| over the (frame,
// band) cells whose initial threshold sits below the noise, absent when a
// range selects no cells. All matrices are N x 26.
RangeValues nmr(const Matrix& noise_band_db, const Matrix& thresholds_db,
                const Matrix& initial_thresholds_db);

// Selected-cell count of the broadband range (the M normalizer).
int nmr_selected_count(const Matrix& noise_band_db,
                       const Matrix& initial_thresholds_db);

struct GldValues {
  double broadband = 0.0;
  double low = 0.0;
  double mid = 0.0;
  double high = 0.0;
};

// Mean per-frame |processed - original| A-weighted level difference. Range
// values restrict the power sum to the range's bins before the dBA map.
GldValues gld(const Spectrogram& original, const Spectrogram& processed,
              const BarkBands& bands, const DbaCalibration& calibration = {});

enum class WilcoxonMode { automatic, exact, normal };

// Two-sided signed-rank p-value for paired samples. Zero differences are
// dropped; all-zero input gives p = 1. The automatic mode enumerates the
// exact null distribution up to n = 20 and switches to the tie- and
// continuity-corrected normal approximation beyond.
double wilcoxon_signed_rank(const std::vector<double>& a,
                            const std::vector<double>& b,
                            WilcoxonMode mode = WilcoxonMode::automatic);

struct MethodSpec {
  enum class Kind { none, estreder, solver, predictor };
  Kind kind = Kind::none;
  std::string name;                   // record/report label, must be unique
  std::optional<double> delta_p_max;  // solver power budget
  const PredictorModel* model = nullptr;

  static MethodSpec none();
  static MethodSpec estreder();
  static MethodSpec solver(std::optional<double> delta_p_max);
  static MethodSpec predictor(const PredictorModel* model);
};

struct EvalRecord {
  std::string scene_id;
  std::string method;
  bool ok = true;
  std::string error;
  int valid_band_count = 0;  // broadband M
  RangeValues nmr;
  RangeValues nmr_initial;
  GldValues gld;
};

struct EvalConfig {
  SolverConfig solver;  // delta_p_max is overridden per solver method
  double smoothing_beta = 0.8;
  std::string baseline = "estreder";
  int num_batches = 20;
  int batch_size = 10;
  uint64_t seed = 1;
  DbaCalibration calibration;
};

struct StatCell {
  std::string method;  // compared against the baseline
  std::string metric;  // "nmr" | "gld"
  std::string range;   // "broadband" | "low" | "mid" | "high"
  double mean_p_raw = 1.0;
  double mean_p_corrected = 1.0;
  int batches_used = 0;
};

struct StatReport {
  std::string baseline;
  int num_batches = 0;
  int batch_size = 0;
  int bonferroni_factor = 0;  // number of metric/range comparison cells
  std::vector<StatCell> cells;
};

struct DatasetEval {
  std::vector<EvalRecord> records;  // scenes x methods, errors included
  StatReport stats;
};

// One method applied to one analyzed scene: finalized gains, the shaped
// music, the solver trace (empty for the other methods), and the metric
// record with scene_id left for the caller to fill.
struct SceneRun {
  Matrix gains;
  Spectrogram processed;
  SolverTrace trace;
  EvalRecord record;
};

SceneRun run_scene(const AnalysisContext& ctx, const SceneLossEvaluator& scene,
                   const Spectrogram& music, const Spectrogram& noise,
                   const MethodSpec& method, const EvalConfig& config);

// Runs every method over every manifest scene and compares each non-baseline
// method against the baseline with batched Wilcoxon tests. Unreadable scenes
// produce error records and the run continues. Deterministic per seed.
DatasetEval evaluate_dataset(const std::string& manifest_path,
                             const std::vector<MethodSpec>& methods,
                             const EvalConfig& config = {});

// Serialization used by the CLI: records as CSV or JSON lines, the report as
// a JSON document. Absent NMR values become empty CSV cells / JSON nulls.
void write_records_csv(const std::vector<EvalRecord>& records,
                       const std::string& path);
void write_records_jsonl(const std::vector<EvalRecord>& records,
                         const std::string& path);
void write_stat_report_json(const StatReport& report, const std::string& path);

}  // namespace maskshaper
