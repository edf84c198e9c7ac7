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

// Command-line front end: scene simulation, spectral analysis, single-scene
// processing, predictor training, and dataset evaluation. Every run echoes
// its effective configuration to <out>/config.resolved.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "maskshaper/bark.h"
#include "maskshaper/common.h"
#include "maskshaper/envelope.h"
#include "maskshaper/eval.h"
#include "maskshaper/masking.h"
#include "maskshaper/predictor.h"
#include "maskshaper/scene.h"
#include "maskshaper/signal_io.h"
#include "maskshaper/solver.h"

namespace {

namespace fs = std::filesystem;
using namespace maskshaper;

// Thrown for problems the user can fix before anything runs; mapped to
// exit code 2, everything else thrown during a run maps to 1.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Every tunable reachable from the configuration file. Defaults match the
// library defaults.
struct RunConfig {
  StftConfig stft;
  DbaCalibration calibration;
  bool abs_floor = true;
  double smoothing_beta = 0.8;
  SolverConfig solver;
  TrainConfig train;
  std::string sim_environments = "all";
  int sim_per_env = 5;
  uint64_t sim_seed = 1;
  double sim_duration_s = 10.0;
  std::string eval_baseline = "estreder";
  int eval_batches = 20;
  int eval_batch_size = 10;
  uint64_t eval_seed = 1;
};

std::string format_value(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0.0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc{} || res.ptr != value.data() + value.size())
    throw UsageError("config key " + key + ": expected a number, got '" +
                     value + "'");
  return out;
}

int parse_int(const std::string& key, const std::string& value) {
  int out = 0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc{} || res.ptr != value.data() + value.size())
    throw UsageError("config key " + key + ": expected an integer, got '" +
                     value + "'");
  return out;
}

uint64_t parse_u64(const std::string& key, const std::string& value) {
  uint64_t out = 0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc{} || res.ptr != value.data() + value.size())
    throw UsageError("config key " + key + ": expected an unsigned integer, " +
                     "got '" + value + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw UsageError("config key " + key + ": expected true/false, got '" +
                   value + "'");
}

std::optional<double> parse_optional_db(const std::string& key,
                                        const std::string& value) {
  if (value == "none") return std::nullopt;
  return parse_double(key, value);
}

std::string format_optional_db(const std::optional<double>& v) {
  return v.has_value() ? format_value(*v) : "none";
}

struct ConfigKey {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// Sorted by name; the order defines config.resolved.
const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      {"calibration.spl_at_fullscale",
       [](RunConfig& c, const std::string& v) {
         c.calibration.spl_at_fullscale =
             parse_double("calibration.spl_at_fullscale", v);
       },
       [](const RunConfig& c) {
         return format_value(c.calibration.spl_at_fullscale);
       }},
      {"eval.baseline",
       [](RunConfig& c, const std::string& v) { c.eval_baseline = v; },
       [](const RunConfig& c) { return c.eval_baseline; }},
      {"eval.batch_size",
       [](RunConfig& c, const std::string& v) {
         c.eval_batch_size = parse_int("eval.batch_size", v);
       },
       [](const RunConfig& c) { return std::to_string(c.eval_batch_size); }},
      {"eval.num_batches",
       [](RunConfig& c, const std::string& v) {
         c.eval_batches = parse_int("eval.num_batches", v);
       },
       [](const RunConfig& c) { return std::to_string(c.eval_batches); }},
      {"eval.seed",
       [](RunConfig& c, const std::string& v) {
         c.eval_seed = parse_u64("eval.seed", v);
       },
       [](const RunConfig& c) { return std::to_string(c.eval_seed); }},
      {"masking.abs_floor",
       [](RunConfig& c, const std::string& v) {
         c.abs_floor = parse_bool("masking.abs_floor", v);
       },
       [](const RunConfig& c) {
         return std::string(c.abs_floor ? "true" : "false");
       }},
      {"simulate.duration_s",
       [](RunConfig& c, const std::string& v) {
         c.sim_duration_s = parse_double("simulate.duration_s", v);
       },
       [](const RunConfig& c) { return format_value(c.sim_duration_s); }},
      {"simulate.environments",
       [](RunConfig& c, const std::string& v) { c.sim_environments = v; },
       [](const RunConfig& c) { return c.sim_environments; }},
      {"simulate.per_env",
       [](RunConfig& c, const std::string& v) {
         c.sim_per_env = parse_int("simulate.per_env", v);
       },
       [](const RunConfig& c) { return std::to_string(c.sim_per_env); }},
      {"simulate.seed",
       [](RunConfig& c, const std::string& v) {
         c.sim_seed = parse_u64("simulate.seed", v);
       },
       [](const RunConfig& c) { return std::to_string(c.sim_seed); }},
      {"smoothing.beta",
       [](RunConfig& c, const std::string& v) {
         c.smoothing_beta = parse_double("smoothing.beta", v);
       },
       [](const RunConfig& c) { return format_value(c.smoothing_beta); }},
      {"solver.delta_p_max",
       [](RunConfig& c, const std::string& v) {
         c.solver.delta_p_max = parse_optional_db("solver.delta_p_max", v);
       },
       [](const RunConfig& c) {
         return format_optional_db(c.solver.delta_p_max);
       }},
      {"solver.lambda_rate",
       [](RunConfig& c, const std::string& v) {
         c.solver.lambda_rate = parse_double("solver.lambda_rate", v);
       },
       [](const RunConfig& c) { return format_value(c.solver.lambda_rate); }},
      {"solver.max_iters",
       [](RunConfig& c, const std::string& v) {
         c.solver.max_iters = parse_int("solver.max_iters", v);
       },
       [](const RunConfig& c) { return std::to_string(c.solver.max_iters); }},
      {"solver.reach_radius",
       [](RunConfig& c, const std::string& v) {
         c.solver.reach_radius = parse_int("solver.reach_radius", v);
       },
       [](const RunConfig& c) {
         return std::to_string(c.solver.reach_radius);
       }},
      {"solver.smoothing_in_loop",
       [](RunConfig& c, const std::string& v) {
         c.solver.smoothing_in_loop = parse_bool("solver.smoothing_in_loop", v);
       },
       [](const RunConfig& c) {
         return std::string(c.solver.smoothing_in_loop ? "true" : "false");
       }},
      {"solver.step_size",
       [](RunConfig& c, const std::string& v) {
         c.solver.step_size = parse_double("solver.step_size", v);
       },
       [](const RunConfig& c) { return format_value(c.solver.step_size); }},
      {"solver.tolerance",
       [](RunConfig& c, const std::string& v) {
         c.solver.tolerance = parse_double("solver.tolerance", v);
       },
       [](const RunConfig& c) { return format_value(c.solver.tolerance); }},
      {"stft.hop",
       [](RunConfig& c, const std::string& v) {
         c.stft.hop = parse_int("stft.hop", v);
       },
       [](const RunConfig& c) { return std::to_string(c.stft.hop); }},
      {"stft.window_len",
       [](RunConfig& c, const std::string& v) {
         c.stft.window_len = parse_int("stft.window_len", v);
       },
       [](const RunConfig& c) { return std::to_string(c.stft.window_len); }},
      {"train.batch_size",
       [](RunConfig& c, const std::string& v) {
         c.train.batch_size = parse_int("train.batch_size", v);
       },
       [](const RunConfig& c) { return std::to_string(c.train.batch_size); }},
      {"train.delta_p_max",
       [](RunConfig& c, const std::string& v) {
         c.train.delta_p_max = parse_optional_db("train.delta_p_max", v);
       },
       [](const RunConfig& c) {
         return format_optional_db(c.train.delta_p_max);
       }},
      {"train.epochs",
       [](RunConfig& c, const std::string& v) {
         c.train.epochs = parse_int("train.epochs", v);
       },
       [](const RunConfig& c) { return std::to_string(c.train.epochs); }},
      {"train.lambda_rate",
       [](RunConfig& c, const std::string& v) {
         c.train.lambda_rate = parse_double("train.lambda_rate", v);
       },
       [](const RunConfig& c) { return format_value(c.train.lambda_rate); }},
      {"train.learning_rate",
       [](RunConfig& c, const std::string& v) {
         c.train.learning_rate = parse_double("train.learning_rate", v);
       },
       [](const RunConfig& c) {
         return format_value(c.train.learning_rate);
       }},
      {"train.seed",
       [](RunConfig& c, const std::string& v) {
         c.train.seed = parse_u64("train.seed", v);
       },
       [](const RunConfig& c) { return std::to_string(c.train.seed); }},
  };
  return keys;
}

std::string trim(const std::string& s) {
  size_t begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  size_t end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

void load_config_file(const std::string& path, RunConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config file " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string text = trim(line);
    if (text.empty()) continue;
    size_t eq = text.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(line_no) +
                       ": expected key=value");
    std::string key = trim(text.substr(0, eq));
    std::string value = trim(text.substr(eq + 1));
    const auto& keys = config_keys();
    auto it = std::find_if(keys.begin(), keys.end(),
                           [&](const ConfigKey& k) { return k.name == key; });
    if (it == keys.end()) throw UsageError("unknown config key '" + key + "'");
    it->set(cfg, value);
  }
}

void write_resolved(const RunConfig& cfg, const std::string& out_dir) {
  std::string path = (fs::path(out_dir) / "config.resolved").string();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const ConfigKey& key : config_keys())
    out << key.name << "=" << key.get(cfg) << "\n";
  if (!out.flush()) throw std::runtime_error("failed writing " + path);
}

std::string config_help() {
  RunConfig defaults;
  std::ostringstream out;
  out << "Configuration file (--config): plain key=value lines, '#' starts a\n"
         "comment, unknown keys are rejected. Command-line flags override\n"
         "file values. The effective configuration is written to\n"
         "<out>/config.resolved on every run.\n\n"
         "Keys (defaults):\n";
  for (const ConfigKey& key : config_keys())
    out << "  " << key.name << " = " << key.get(defaults) << "\n";
  out << "\nExit codes: 0 success, 1 runtime failure, 2 usage or "
         "configuration error.";
  return out.str();
}

// Values filled by CLI11; applied onto RunConfig only when the flag was
// actually passed, so config-file settings survive unflagged options.
struct Flags {
  std::string config_path;
  std::string out;
  std::string music;
  std::string noise;
  std::string manifest;
  std::string model;
  std::string method;
  std::string methods = "none,estreder,solver";
  std::string envs = "all";
  std::string baseline = "estreder";
  double duration = 10.0;
  int per_env = 5;
  uint64_t seed = 1;
  double smoothing_beta = 0.8;
  double step_size = 0.5;
  double lambda_rate = 1e-3;
  int max_iters = 300;
  double tolerance = 1e-3;
  int reach_radius = 3;
  double delta_p_max = 0.0;
  int epochs = 50;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int eval_batches = 20;
  int eval_batch_size = 10;
};

RunConfig base_config(const CLI::App& cmd, const Flags& f) {
  RunConfig cfg;
  if (cmd.count("--config") > 0) load_config_file(f.config_path, cfg);
  return cfg;
}

void require_file(const std::string& path, const std::string& what) {
  if (!fs::exists(path))
    throw UsageError(what + " not found: " + path);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_matrix_csv(const Matrix& m, const std::string& path,
                      const std::string& col_prefix) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "frame";
  for (int c = 1; c <= m.cols(); ++c)
    out << ',' << col_prefix << (c < 10 ? "0" : "") << c;
  out << "\n";
  for (int n = 0; n < m.rows(); ++n) {
    out << n;
    for (int c = 0; c < m.cols(); ++c) out << ',' << format_value(m(n, c));
    out << "\n";
  }
  if (!out.flush()) throw std::runtime_error("failed writing " + path);
}

void write_dba_csv(const std::vector<double>& values, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "frame,dba\n";
  for (size_t n = 0; n < values.size(); ++n)
    out << n << ',' << format_value(values[n]) << "\n";
  if (!out.flush()) throw std::runtime_error("failed writing " + path);
}

// The silence gate for user-supplied program material.
void require_active(const Signal& music, const std::string& path) {
  double ratio = active_frame_ratio(music);
  if (ratio < 0.5)
    throw std::runtime_error(path + " is mostly silence (active-frame ratio " +
                             format_value(ratio) + " < 0.5)");
}

nlohmann::json range_values_json(const RangeValues& v) {
  auto cell = [](const std::optional<double>& slot) {
    return slot.has_value() ? nlohmann::json(*slot) : nlohmann::json(nullptr);
  };
  return {{"broadband", cell(v.broadband)},
          {"low", cell(v.low)},
          {"mid", cell(v.mid)},
          {"high", cell(v.high)}};
}

nlohmann::json record_json(const EvalRecord& r) {
  return {{"scene_id", r.scene_id},
          {"method", r.method},
          {"ok", r.ok},
          {"error", r.error},
          {"valid_band_count", r.valid_band_count},
          {"nmr", range_values_json(r.nmr)},
          {"nmr_initial", range_values_json(r.nmr_initial)},
          {"gld",
           {{"broadband", r.gld.broadband},
            {"low", r.gld.low},
            {"mid", r.gld.mid},
            {"high", r.gld.high}}}};
}

MethodSpec method_from_name(const std::string& name, const RunConfig& cfg,
                            const PredictorModel* model) {
  if (name == "none") return MethodSpec::none();
  if (name == "estreder") return MethodSpec::estreder();
  if (name == "solver") return MethodSpec::solver(cfg.solver.delta_p_max);
  if (name == "predictor") {
    if (model == nullptr)
      throw UsageError("method 'predictor' requires --model");
    return MethodSpec::predictor(model);
  }
  throw UsageError("unknown method '" + name +
                   "' (expected none, estreder, solver, or predictor)");
}

void cmd_simulate(const CLI::App& cmd, const Flags& f) {
  RunConfig cfg = base_config(cmd, f);
  if (cmd.count("--envs")) cfg.sim_environments = f.envs;
  if (cmd.count("--per-env")) cfg.sim_per_env = f.per_env;
  if (cmd.count("--seed")) cfg.sim_seed = f.seed;
  if (cmd.count("--duration")) cfg.sim_duration_s = f.duration;

  std::vector<std::string> envs;
  if (cfg.sim_environments == "all") {
    for (const EnvironmentProfile& profile : environment_profiles())
      envs.push_back(profile.name);
  } else {
    envs = split_list(cfg.sim_environments);
  }
  if (envs.empty()) throw UsageError("no environments selected");
  for (const std::string& name : envs) {
    try {
      environment_profile(name);
    } catch (const std::invalid_argument&) {
      throw UsageError("unknown environment '" + name + "'");
    }
  }
  if (cfg.sim_per_env <= 0) throw UsageError("--per-env must be positive");
  if (cfg.sim_duration_s <= 0.0) throw UsageError("--duration must be positive");

  fs::create_directories(f.out);
  write_resolved(cfg, f.out);
  std::string manifest =
      build_manifest(envs, cfg.sim_per_env, cfg.sim_seed, f.out,
                     cfg.sim_duration_s, cfg.calibration);
  std::cout << "wrote " << manifest << " ("
            << envs.size() * static_cast<size_t>(cfg.sim_per_env)
            << " scenes)\n";
}

void cmd_analyze(const CLI::App& cmd, const Flags& f) {
  RunConfig cfg = base_config(cmd, f);
  require_file(f.music, "music file");
  if (cmd.count("--noise")) require_file(f.noise, "noise file");

  fs::create_directories(f.out);
  write_resolved(cfg, f.out);

  MaskingOptions masking{cfg.abs_floor, cfg.calibration};
  AnalysisContext ctx(cfg.stft, masking, cfg.smoothing_beta);
  fs::path out(f.out);

  Signal music = read_wav(f.music);
  Spectrogram spec = stft(music, cfg.stft);
  if (spec.num_frames() == 0)
    throw std::runtime_error(f.music + " is too short for one analysis frame");
  require_active(music, f.music);

  BandPsd psd = band_psd(spec, ctx.bands);
  write_matrix_csv(psd.db, (out / "music_band_psd.csv").string(), "band_");
  write_matrix_csv(threshold_matrix(ctx, spec),
                   (out / "music_thresholds.csv").string(), "band_");
  write_dba_csv(frame_power_dba(spec, cfg.calibration).values,
                (out / "music_dba.csv").string());
  int files = 3;

  if (cmd.count("--noise")) {
    Signal noise = read_wav(f.noise);
    Spectrogram nspec = stft(noise, cfg.stft);
    if (nspec.num_frames() == 0)
      throw std::runtime_error(f.noise +
                               " is too short for one analysis frame");
    BandPsd npsd = band_psd(nspec, ctx.bands);
    write_matrix_csv(npsd.db, (out / "noise_band_psd.csv").string(), "band_");
    write_dba_csv(frame_power_dba(nspec, cfg.calibration).values,
                  (out / "noise_dba.csv").string());
    files += 2;
  }
  std::cout << "wrote " << files << " tables to " << f.out << " ("
            << spec.num_frames() << " frames)\n";
}

void cmd_process(const CLI::App& cmd, const Flags& f) {
  RunConfig cfg = base_config(cmd, f);
  if (cmd.count("--smoothing-beta")) cfg.smoothing_beta = f.smoothing_beta;
  if (cmd.count("--step-size")) cfg.solver.step_size = f.step_size;
  if (cmd.count("--lambda-rate")) cfg.solver.lambda_rate = f.lambda_rate;
  if (cmd.count("--max-iters")) cfg.solver.max_iters = f.max_iters;
  if (cmd.count("--tolerance")) cfg.solver.tolerance = f.tolerance;
  if (cmd.count("--reach-radius")) cfg.solver.reach_radius = f.reach_radius;
  if (cmd.count("--delta-p-max")) cfg.solver.delta_p_max = f.delta_p_max;

  if (f.method != "estreder" && f.method != "solver" &&
      f.method != "predictor")
    throw UsageError("unknown method '" + f.method +
                     "' (expected estreder, solver, or predictor)");
  require_file(f.music, "music file");
  require_file(f.noise, "noise file");
  PredictorModel model;
  if (f.method == "predictor") {
    if (!cmd.count("--model"))
      throw UsageError("method 'predictor' requires --model");
    require_file(f.model, "model file");
    model = load_model(f.model);
  }

  fs::create_directories(f.out);
  write_resolved(cfg, f.out);

  Signal music = read_wav(f.music);
  Signal noise = read_wav(f.noise);
  size_t shared = std::min(music.samples.size(), noise.samples.size());
  music.samples.resize(shared);
  noise.samples.resize(shared);

  Spectrogram mspec = stft(music, cfg.stft);
  Spectrogram nspec = stft(noise, cfg.stft);
  if (mspec.num_frames() == 0)
    throw std::runtime_error("inputs are too short for one analysis frame");
  require_active(music, f.music);

  MaskingOptions masking{cfg.abs_floor, cfg.calibration};
  AnalysisContext ctx(cfg.stft, masking, cfg.smoothing_beta);
  SceneLossEvaluator scene(ctx, mspec, nspec, cfg.solver.reach_radius);

  EvalConfig eval_config;
  eval_config.solver = cfg.solver;
  eval_config.smoothing_beta = cfg.smoothing_beta;
  eval_config.calibration = cfg.calibration;
  MethodSpec method = method_from_name(f.method, cfg, &model);

  SceneRun run = run_scene(ctx, scene, mspec, nspec, method, eval_config);
  run.record.scene_id = fs::path(f.music).stem().string();
  SceneLossEvaluator::SceneLoss losses = scene.eval(run.gains);

  fs::path out(f.out);
  Signal shaped = istft(run.processed);
  WavWriteResult wav = write_wav(shaped, (out / "processed.wav").string());
  write_matrix_csv(run.gains, (out / "gains.csv").string(), "gain_");

  nlohmann::json solver_info;
  if (method.kind == MethodSpec::Kind::solver && !run.trace.rows.empty()) {
    solver_info = {{"iterations", run.trace.rows.size()},
                   {"lambda_final", run.trace.rows.back().lambda},
                   {"aborted", run.trace.aborted}};
  }
  nlohmann::json report = {
      {"music", f.music},
      {"noise", f.noise},
      {"method", method.name},
      {"frames", scene.num_frames()},
      {"l0_db", losses.l0},
      {"l_power_dba", losses.l_power},
      {"delta_p_max", method.delta_p_max.has_value()
                          ? nlohmann::json(*method.delta_p_max)
                          : nlohmann::json(nullptr)},
      {"solver", solver_info},
      {"clipped_samples", wav.clipped_samples},
      {"record", record_json(run.record)},
  };
  std::string report_path = (out / "report.json").string();
  std::ofstream report_out(report_path, std::ios::trunc);
  if (!report_out) throw std::runtime_error("cannot write " + report_path);
  report_out << report.dump(2) << "\n";
  if (!report_out.flush())
    throw std::runtime_error("failed writing " + report_path);

  if (wav.clipped)
    std::cerr << "warning: " << wav.clipped_samples
              << " output samples clipped\n";
  std::cout << "wrote " << (out / "processed.wav").string() << " (L0 "
            << format_value(losses.l0) << " dB, L_power "
            << format_value(losses.l_power) << " dBA)\n";
}

void cmd_train(const CLI::App& cmd, const Flags& f) {
  RunConfig cfg = base_config(cmd, f);
  if (cmd.count("--epochs")) cfg.train.epochs = f.epochs;
  if (cmd.count("--learning-rate")) cfg.train.learning_rate = f.learning_rate;
  if (cmd.count("--batch-size")) cfg.train.batch_size = f.batch_size;
  if (cmd.count("--seed")) cfg.train.seed = f.seed;
  if (cmd.count("--lambda-rate")) cfg.train.lambda_rate = f.lambda_rate;
  if (cmd.count("--delta-p-max")) cfg.train.delta_p_max = f.delta_p_max;
  if (cmd.count("--smoothing-beta")) cfg.smoothing_beta = f.smoothing_beta;

  require_file(f.manifest, "manifest");
  fs::create_directories(f.out);
  write_resolved(cfg, f.out);

  std::vector<ManifestEntry> entries = read_manifest(f.manifest);
  if (entries.empty()) throw std::runtime_error("manifest lists no scenes");
  fs::path base = fs::path(f.manifest).parent_path();

  MaskingOptions masking{cfg.abs_floor, cfg.calibration};
  AnalysisContext ctx(cfg.stft, masking, cfg.smoothing_beta);

  std::vector<std::unique_ptr<SceneLossEvaluator>> scenes;
  std::vector<TrainingScene> dataset;
  for (const ManifestEntry& entry : entries) {
    Signal music = read_wav((base / entry.music_path).string());
    Signal noise = read_wav((base / entry.noise_path).string());
    Spectrogram mspec = stft(music, cfg.stft);
    Spectrogram nspec = stft(noise, cfg.stft);
    if (mspec.num_frames() == 0 ||
        mspec.num_frames() != nspec.num_frames())
      throw std::runtime_error("scene " + entry.id +
                               ": unusable music/noise frame counts");
    scenes.push_back(std::make_unique<SceneLossEvaluator>(
        ctx, mspec, nspec, cfg.solver.reach_radius));
    dataset.push_back({scenes.back().get(), build_features(*scenes.back())});
  }

  PredictorModel model = init_model(cfg.train);
  TrainLog log = train(model, dataset, cfg.train);
  if (log.aborted) throw std::runtime_error("training aborted: " + log.message);

  fs::path out(f.out);
  save_model(model, (out / "model.bin").string());
  std::string log_path = (out / "training_log.csv").string();
  std::ofstream log_out(log_path, std::ios::trunc);
  if (!log_out) throw std::runtime_error("cannot write " + log_path);
  log_out << "epoch,l0_db,l_power_dba,lambda\n";
  for (const EpochRow& row : log.rows)
    log_out << row.epoch << ',' << format_value(row.l0) << ','
            << format_value(row.l_power) << ',' << format_value(row.lambda)
            << "\n";
  if (!log_out.flush()) throw std::runtime_error("failed writing " + log_path);

  std::cout << "wrote " << (out / "model.bin").string() << " ("
            << log.rows.size() << " epochs over " << dataset.size()
            << " scenes)\n";
}

void cmd_evaluate(const CLI::App& cmd, const Flags& f) {
  RunConfig cfg = base_config(cmd, f);
  if (cmd.count("--baseline")) cfg.eval_baseline = f.baseline;
  if (cmd.count("--batches")) cfg.eval_batches = f.eval_batches;
  if (cmd.count("--batch-size")) cfg.eval_batch_size = f.eval_batch_size;
  if (cmd.count("--seed")) cfg.eval_seed = f.seed;
  if (cmd.count("--delta-p-max")) cfg.solver.delta_p_max = f.delta_p_max;
  if (cmd.count("--max-iters")) cfg.solver.max_iters = f.max_iters;
  if (cmd.count("--smoothing-beta")) cfg.smoothing_beta = f.smoothing_beta;

  require_file(f.manifest, "manifest");
  std::vector<std::string> names = split_list(f.methods);
  if (names.empty()) throw UsageError("no methods selected");

  PredictorModel model;
  bool model_loaded = false;
  if (std::find(names.begin(), names.end(), "predictor") != names.end()) {
    if (!cmd.count("--model"))
      throw UsageError("method 'predictor' requires --model");
    require_file(f.model, "model file");
    model = load_model(f.model);
    model_loaded = true;
  }

  std::vector<MethodSpec> methods;
  for (const std::string& name : names)
    methods.push_back(
        method_from_name(name, cfg, model_loaded ? &model : nullptr));
  for (size_t i = 0; i < methods.size(); ++i)
    for (size_t j = i + 1; j < methods.size(); ++j)
      if (methods[i].name == methods[j].name)
        throw UsageError("duplicate method '" + methods[i].name + "'");

  bool have_baseline =
      std::any_of(methods.begin(), methods.end(), [&](const MethodSpec& m) {
        return m.name == cfg.eval_baseline;
      });
  if (!have_baseline)
    std::cerr << "warning: baseline '" << cfg.eval_baseline
              << "' is not among the methods; no statistics computed\n";

  fs::create_directories(f.out);
  write_resolved(cfg, f.out);

  EvalConfig eval_config;
  eval_config.solver = cfg.solver;
  eval_config.smoothing_beta = cfg.smoothing_beta;
  eval_config.baseline = cfg.eval_baseline;
  eval_config.num_batches = cfg.eval_batches;
  eval_config.batch_size = cfg.eval_batch_size;
  eval_config.seed = cfg.eval_seed;
  eval_config.calibration = cfg.calibration;

  DatasetEval result = evaluate_dataset(f.manifest, methods, eval_config);

  fs::path out(f.out);
  write_records_csv(result.records, (out / "records.csv").string());
  write_records_jsonl(result.records, (out / "records.jsonl").string());
  write_stat_report_json(result.stats, (out / "stats.json").string());

  size_t failed = 0;
  for (const EvalRecord& record : result.records)
    if (!record.ok) ++failed;
  std::cout << "wrote " << result.records.size() << " records ("
            << failed << " failed) and " << result.stats.cells.size()
            << " statistic cells to " << f.out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shapes music so its masking thresholds rise above ambient "
               "noise: scene simulation, analysis, processing, predictor "
               "training, and evaluation."};
  app.require_subcommand(1);
  app.footer(config_help());

  Flags f;

  CLI::App* sim = app.add_subcommand(
      "simulate", "Generate a synthetic scene dataset (WAV pairs + manifest)");
  sim->add_option("--config", f.config_path, "Configuration file");
  sim->add_option("--out", f.out, "Output directory")->required();
  sim->add_option("--envs", f.envs,
                  "Comma-separated environment names, or 'all'")
      ->capture_default_str();
  sim->add_option("--per-env", f.per_env, "Scenes per environment")
      ->capture_default_str();
  sim->add_option("--seed", f.seed, "Master seed")->capture_default_str();
  sim->add_option("--duration", f.duration, "Scene duration in seconds")
      ->capture_default_str();
  sim->footer(
      "Outputs in --out:\n"
      "  manifest.jsonl   one scene per line: id, environment, headphone,\n"
      "                   noise_level_dba, snr_db, music_level_dba,\n"
      "                   duration_s, seed, music_path, noise_path\n"
      "  <id>_music.wav / <id>_noise.wav   float32 mono 44.1 kHz\n"
      "  config.resolved  effective configuration");
  sim->callback([&] { cmd_simulate(*sim, f); });

  CLI::App* analyze = app.add_subcommand(
      "analyze", "Export band levels, masking thresholds, and dBA tracks");
  analyze->add_option("--config", f.config_path, "Configuration file");
  analyze->add_option("--out", f.out, "Output directory")->required();
  analyze->add_option("--music", f.music, "Music WAV (44.1 kHz)")->required();
  analyze->add_option("--noise", f.noise, "Optional noise WAV (44.1 kHz)");
  analyze->footer(
      "Outputs in --out (CSV, one row per STFT frame):\n"
      "  music_band_psd.csv    frame, band_01..band_26 critical-band levels"
      " (dB)\n"
      "  music_thresholds.csv  frame, band_01..band_26 masking thresholds"
      " (dB)\n"
      "  music_dba.csv         frame, dba A-weighted level\n"
      "  noise_band_psd.csv / noise_dba.csv   with --noise\n"
      "  config.resolved       effective configuration");
  analyze->callback([&] { cmd_analyze(*analyze, f); });

  CLI::App* process = app.add_subcommand(
      "process", "Shape one music track against one noise track");
  process->add_option("--config", f.config_path, "Configuration file");
  process->add_option("--out", f.out, "Output directory")->required();
  process->add_option("--music", f.music, "Music WAV (44.1 kHz)")->required();
  process->add_option("--noise", f.noise, "Noise WAV (44.1 kHz)")->required();
  process->add_option("--method", f.method,
                      "Gain method: estreder | solver | predictor")
      ->required();
  process->add_option("--model", f.model, "Predictor model file");
  process->add_option("--delta-p-max", f.delta_p_max,
                      "Loudness budget in dBA (solver constraint)");
  process->add_option("--smoothing-beta", f.smoothing_beta,
                      "Temporal gain smoothing factor in [0, 1)");
  process->add_option("--step-size", f.step_size, "Solver gradient step");
  process->add_option("--lambda-rate", f.lambda_rate,
                      "Solver multiplier ascent rate");
  process->add_option("--max-iters", f.max_iters, "Solver iteration cap");
  process->add_option("--tolerance", f.tolerance,
                      "Solver stop threshold on gain change (dB)");
  process->add_option("--reach-radius", f.reach_radius,
                      "Band activity reach in Bark bands");
  process->footer(
      "Outputs in --out:\n"
      "  processed.wav   shaped music (float32; inputs are trimmed to their\n"
      "                  shared length before analysis)\n"
      "  gains.csv       frame, gain_01..gain_24 band gains (dB)\n"
      "  report.json     method, losses (l0_db, l_power_dba), solver trace\n"
      "                  summary, clipped sample count, and the scene's\n"
      "                  metric record (NMR / GLD per range)\n"
      "  config.resolved effective configuration");
  process->callback([&] { cmd_process(*process, f); });

  CLI::App* train_cmd = app.add_subcommand(
      "train", "Train the gain predictor on a simulated dataset");
  train_cmd->add_option("--config", f.config_path, "Configuration file");
  train_cmd->add_option("--out", f.out, "Output directory")->required();
  train_cmd->add_option("--manifest", f.manifest, "Scene manifest (JSONL)")
      ->required();
  train_cmd->add_option("--epochs", f.epochs, "Training epochs")
      ->capture_default_str();
  train_cmd->add_option("--learning-rate", f.learning_rate, "SGD step size")
      ->capture_default_str();
  train_cmd->add_option("--batch-size", f.batch_size, "Frames per mini-batch")
      ->capture_default_str();
  train_cmd->add_option("--seed", f.seed, "Initialization/shuffle seed")
      ->capture_default_str();
  train_cmd->add_option("--lambda-rate", f.lambda_rate,
                        "Multiplier ascent rate");
  train_cmd->add_option("--delta-p-max", f.delta_p_max,
                        "Loudness budget in dBA");
  train_cmd->add_option("--smoothing-beta", f.smoothing_beta,
                        "Temporal gain smoothing factor in [0, 1)");
  train_cmd->footer(
      "Outputs in --out:\n"
      "  model.bin         trained predictor (binary, reloadable)\n"
      "  training_log.csv  epoch, l0_db, l_power_dba, lambda\n"
      "  config.resolved   effective configuration");
  train_cmd->callback([&] { cmd_train(*train_cmd, f); });

  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "Run gain methods over a dataset and compare statistically");
  evaluate->add_option("--config", f.config_path, "Configuration file");
  evaluate->add_option("--out", f.out, "Output directory")->required();
  evaluate->add_option("--manifest", f.manifest, "Scene manifest (JSONL)")
      ->required();
  evaluate->add_option("--methods", f.methods,
                       "Comma-separated methods to run")
      ->capture_default_str();
  evaluate->add_option("--model", f.model, "Predictor model file");
  evaluate->add_option("--baseline", f.baseline,
                       "Method the others are compared against")
      ->capture_default_str();
  evaluate->add_option("--batches", f.eval_batches,
                       "Number of Wilcoxon batches")
      ->capture_default_str();
  evaluate->add_option("--batch-size", f.eval_batch_size,
                       "Scenes drawn per batch")
      ->capture_default_str();
  evaluate->add_option("--seed", f.seed, "Batch sampling seed")
      ->capture_default_str();
  evaluate->add_option("--delta-p-max", f.delta_p_max,
                       "Loudness budget in dBA (solver method)");
  evaluate->add_option("--max-iters", f.max_iters, "Solver iteration cap");
  evaluate->add_option("--smoothing-beta", f.smoothing_beta,
                       "Temporal gain smoothing factor in [0, 1)");
  evaluate->footer(
      "Outputs in --out:\n"
      "  records.csv      one row per scene x method with columns scene_id,\n"
      "                   method, ok (1/0), error, valid_band_count,\n"
      "                   nmr_broadband, nmr_low, nmr_mid, nmr_high,\n"
      "                   nmr_initial_{broadband,low,mid,high},\n"
      "                   gld_{broadband,low,mid,high}. NMR cells hold the\n"
      "                   mean |noise - threshold| gap in dB over cells\n"
      "                   where noise exceeds the initial threshold (empty\n"
      "                   when none qualifies); GLD cells hold the mean\n"
      "                   per-frame |level change| in dBA; valid_band_count\n"
      "                   is the number of selected (frame, band) cells.\n"
      "  records.jsonl    the same records, one JSON object per line\n"
      "  stats.json       baseline, num_batches, batch_size,\n"
      "                   bonferroni_factor, cells[] with method, metric\n"
      "                   (nmr|gld), range, mean_p_raw, mean_p_corrected,\n"
      "                   batches_used\n"
      "  config.resolved  effective configuration");
  evaluate->callback([&] { cmd_evaluate(*evaluate, f); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
