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

#include "maskshaper/signal_io.h"

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <vector>

#include "doctest.h"
#include "maskshaper/common.h"

namespace maskshaper {
namespace {

Signal make_sine(double freq_hz, double amplitude, double duration_s) {
  Signal s;
  s.samples.resize(static_cast<size_t>(duration_s * kSampleRate));
  for (size_t i = 0; i < s.samples.size(); ++i)
    s.samples[i] =
        amplitude * std::sin(2.0 * std::numbers::pi * freq_hz * i / kSampleRate);
  return s;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

TEST_CASE("periodic hann window") {
  std::vector<double> w = hann_window(2048);
  CHECK(w[0] == 0.0);
  CHECK(w[1024] == doctest::Approx(1.0).epsilon(1e-12));
  // Periodic symmetry: w[i] == w[N - i].
  CHECK(w[100] == doctest::Approx(w[2048 - 100]).epsilon(1e-12));

  double sum = 0.0, sum_sq = 0.0;
  for (double v : w) {
    sum += v;
    sum_sq += v * v;
  }
  CHECK(sum == doctest::Approx(1024.0).epsilon(1e-12));
  CHECK(sum_sq == doctest::Approx(768.0).epsilon(1e-12));
  CHECK(hann_window_power(2048) == doctest::Approx(768.0));
}

TEST_CASE("stft frame geometry") {
  StftConfig config;
  CHECK(config.bins() == 1025);
  CHECK(config.frame_count(441000) == 858);  // 10.0 s
  CHECK(config.frame_count(88200) == 169);   // 2.0 s
  CHECK(config.frame_count(44100) == 83);    // 1.0 s
  CHECK(config.frame_count(2048) == 1);
  CHECK(config.frame_count(2047) == 0);

  Signal s = make_sine(1000.0, 0.5, 0.5);
  Spectrogram spec = stft(s);
  CHECK(spec.num_frames() == config.frame_count(s.samples.size()));
  CHECK(spec.num_bins() == 1025);
  CHECK(spec.bin_freq_hz(46) == doctest::Approx(46.0 * 44100.0 / 2048.0));
  CHECK(spec.bin_freq_hz(1024) == doctest::Approx(22050.0));
}

TEST_CASE("stft of a constant signal carries the hann transform") {
  // DFT of the periodic Hann window: X[0] = N/2, X[1] = -N/4, X[k>=2] = 0.
  Signal s;
  s.samples.assign(4096, 1.0);
  Spectrogram spec = stft(s);
  CHECK(spec.at(0, 0).real() == doctest::Approx(1024.0).epsilon(1e-12));
  CHECK(spec.at(0, 1).real() == doctest::Approx(-512.0).epsilon(1e-9));
  CHECK(std::abs(spec.at(0, 2)) < 1e-9);
  CHECK(std::abs(spec.at(0, 500)) < 1e-9);
}

TEST_CASE("windowed frame satisfies parseval") {
  Rng rng(7);
  Signal s;
  s.samples.resize(2048);
  for (double& x : s.samples) x = rng.uniform(-0.9, 0.9);

  Spectrogram spec = stft(s);
  REQUIRE(spec.num_frames() == 1);

  std::vector<double> w = hann_window(2048);
  double time_energy = 0.0;
  for (int i = 0; i < 2048; ++i) {
    double v = s.samples[i] * w[i];
    time_energy += v * v;
  }
  double freq_energy = 0.0;
  for (int k = 0; k < spec.num_bins(); ++k) {
    double c = (k == 0 || k == spec.num_bins() - 1) ? 1.0 : 2.0;
    freq_energy += c * std::norm(spec.at(0, k));
  }
  freq_energy /= 2048.0;
  CHECK(freq_energy == doctest::Approx(time_energy).epsilon(1e-12));
}

TEST_CASE("istft reconstructs the analyzed signal") {
  Rng rng(11);
  Signal s;
  s.samples.resize(44100 / 4);
  for (double& x : s.samples) x = rng.uniform(-0.9, 0.9);

  Spectrogram spec = stft(s);
  Signal back = istft(spec);
  size_t expected_len =
      static_cast<size_t>(spec.num_frames() - 1) * 512 + 2048;
  REQUIRE(back.samples.size() == expected_len);

  // The very first sample has zero window weight and is defined as 0.
  CHECK(back.samples[0] == 0.0);

  // Full overlap coverage makes the reconstruction exact.
  double max_err_interior = 0.0;
  for (size_t i = 2048; i + 2048 < expected_len; ++i)
    max_err_interior =
        std::max(max_err_interior, std::abs(back.samples[i] - s.samples[i]));
  CHECK(max_err_interior < 1e-9);

  // Partially covered edges are still normalized per sample.
  double max_err_edge = 0.0;
  for (size_t i = 1; i < 2048; ++i)
    max_err_edge = std::max(max_err_edge, std::abs(back.samples[i] - s.samples[i]));
  CHECK(max_err_edge < 1e-6);
}

TEST_CASE("a-weighting curve") {
  CHECK(a_weighting_db(1000.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(a_weighting_db(100.0) == doctest::Approx(-19.145095819012425));
  CHECK(a_weighting_db(0.0) == -200.0);
  // Rises through the low-frequency range, rolls off at the top.
  CHECK(a_weighting_db(50.0) < a_weighting_db(100.0));
  CHECK(a_weighting_db(100.0) < a_weighting_db(500.0));
  CHECK(a_weighting_db(16000.0) < a_weighting_db(4000.0));
  CHECK(a_weighting_power_gain(100.0) ==
        doctest::Approx(std::pow(10.0, -19.145095819012425 / 10.0)));
}

TEST_CASE("frame dBA calibration") {
  StftConfig config;
  DbaCalibration calibration;

  SUBCASE("full-scale 1 kHz sine reads the calibration level") {
    Signal s = make_sine(1000.0, 1.0, 0.5);
    FramePowerDba dba = frame_power_dba(stft(s));
    for (double v : dba.values) CHECK(v == doctest::Approx(100.0).epsilon(1e-4));
  }

  SUBCASE("scaling the signal shifts the level by the same amount") {
    Signal loud = make_sine(440.0, 0.8, 0.25);
    Signal soft = loud;
    for (double& x : soft.samples) x *= 0.5;  // -6.0206 dB
    FramePowerDba da = frame_power_dba(stft(loud));
    FramePowerDba db = frame_power_dba(stft(soft));
    REQUIRE(da.values.size() == db.values.size());
    for (size_t n = 0; n < da.values.size(); ++n)
      CHECK(da.values[n] - db.values[n] ==
            doctest::Approx(20.0 * std::log10(2.0)).epsilon(1e-9));
  }

  SUBCASE("silence floors at -120 dBA") {
    Signal s;
    s.samples.assign(4096, 0.0);
    FramePowerDba dba = frame_power_dba(stft(s));
    for (double v : dba.values) CHECK(v == -120.0);
  }

  SUBCASE("weighted power helper matches the per-frame path") {
    Signal s = make_sine(2000.0, 0.3, 0.1);
    Spectrogram spec = stft(s);
    std::vector<double> gains = a_weighted_bin_gains(config, kSampleRate);
    double acc = 0.0;
    for (int k = 0; k < spec.num_bins(); ++k)
      acc += gains[k] * std::norm(spec.at(0, k));
    FramePowerDba dba = frame_power_dba(spec);
    CHECK(frame_dba_from_weighted_power(acc, config, calibration) ==
          doctest::Approx(dba.values[0]).epsilon(1e-12));
  }
}

TEST_CASE("wav round trips") {
  Rng rng(23);
  Signal s;
  s.samples.resize(2205);
  for (double& x : s.samples) x = rng.uniform(-0.99, 0.99);

  SUBCASE("float32") {
    std::string path = temp_path("maskshaper_roundtrip_f32.wav");
    WavWriteResult r = write_wav(s, path, WavDepth::float32);
    CHECK_FALSE(r.clipped);
    Signal back = read_wav(path);
    REQUIRE(back.samples.size() == s.samples.size());
    for (size_t i = 0; i < s.samples.size(); ++i)
      CHECK(back.samples[i] == doctest::Approx(s.samples[i]).epsilon(1e-7));
    std::filesystem::remove(path);
  }

  SUBCASE("pcm16 stays within the quantization bound") {
    std::string path = temp_path("maskshaper_roundtrip_p16.wav");
    write_wav(s, path, WavDepth::pcm16);
    Signal back = read_wav(path);
    REQUIRE(back.samples.size() == s.samples.size());
    double max_err = 0.0;
    for (size_t i = 0; i < s.samples.size(); ++i)
      max_err = std::max(max_err, std::abs(back.samples[i] - s.samples[i]));
    CHECK(max_err <= std::pow(2.0, -15.0));
    std::filesystem::remove(path);
  }

  SUBCASE("pcm24 stays within the quantization bound") {
    std::string path = temp_path("maskshaper_roundtrip_p24.wav");
    write_wav(s, path, WavDepth::pcm24);
    Signal back = read_wav(path);
    REQUIRE(back.samples.size() == s.samples.size());
    double max_err = 0.0;
    for (size_t i = 0; i < s.samples.size(); ++i)
      max_err = std::max(max_err, std::abs(back.samples[i] - s.samples[i]));
    CHECK(max_err <= std::pow(2.0, -23.0));
    std::filesystem::remove(path);
  }

  SUBCASE("integer depths report clipping") {
    Signal hot = s;
    hot.samples[10] = 1.5;
    hot.samples[20] = -1.2;
    std::string path = temp_path("maskshaper_clip.wav");
    WavWriteResult r = write_wav(hot, path, WavDepth::pcm16);
    CHECK(r.clipped);
    CHECK(r.clipped_samples == 2);
    Signal back = read_wav(path);
    CHECK(back.samples[10] == doctest::Approx(32767.0 / 32768.0));
    CHECK(back.samples[20] == doctest::Approx(-1.0));
    std::filesystem::remove(path);
  }
}

TEST_CASE("wav reader rejects what it cannot honor") {
  SUBCASE("missing file") {
    CHECK_THROWS_AS(read_wav(temp_path("maskshaper_does_not_exist.wav")),
                    std::runtime_error);
  }

  SUBCASE("garbage header") {
    std::string path = temp_path("maskshaper_garbage.wav");
    std::ofstream out(path, std::ios::binary);
    out << "this is not a wav file at all";
    out.close();
    CHECK_THROWS_AS(read_wav(path), std::runtime_error);
    std::filesystem::remove(path);
  }

  SUBCASE("unsupported sample rate") {
    Signal s;
    s.sample_rate = 48000;
    s.samples.assign(480, 0.1);
    std::string path = temp_path("maskshaper_48k.wav");
    write_wav(s, path);
    CHECK_THROWS_WITH_AS(read_wav(path),
                         doctest::Contains("unsupported sample rate"),
                         std::runtime_error);
    std::filesystem::remove(path);
  }
}

TEST_CASE("multichannel wav is downmixed by averaging") {
  // Hand-built stereo PCM16 file: L = +0.5, R = -0.25 for every frame.
  std::string path = temp_path("maskshaper_stereo.wav");
  {
    std::ofstream out(path, std::ios::binary);
    auto u16 = [&](uint16_t v) {
      char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
      out.write(b, 2);
    };
    auto u32 = [&](uint32_t v) {
      char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                   static_cast<char>((v >> 16) & 0xff),
                   static_cast<char>((v >> 24) & 0xff)};
      out.write(b, 4);
    };
    const int frames = 100;
    out.write("RIFF", 4);
    u32(36 + frames * 4);
    out.write("WAVE", 4);
    out.write("fmt ", 4);
    u32(16);
    u16(1);      // PCM
    u16(2);      // stereo
    u32(44100);
    u32(44100 * 4);
    u16(4);
    u16(16);
    out.write("data", 4);
    u32(frames * 4);
    for (int i = 0; i < frames; ++i) {
      u16(static_cast<uint16_t>(16384));                        // +0.5
      u16(static_cast<uint16_t>(static_cast<int16_t>(-8192)));  // -0.25
    }
  }
  Signal s = read_wav(path);
  REQUIRE(s.samples.size() == 100);
  for (double x : s.samples) CHECK(x == doctest::Approx(0.125).epsilon(1e-9));
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace maskshaper
