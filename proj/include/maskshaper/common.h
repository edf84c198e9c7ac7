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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace maskshaper {

// dB floor used for all power-to-dB views: 10*log10(1e-12) = -120 dB.
inline constexpr double kDbFloor = -120.0;
inline constexpr double kLinearFloor = 1e-12;

inline double db_from_power(double p) {
  return 10.0 * std::log10(std::max(p, kLinearFloor));
}

inline double power_from_db(double db) { return std::pow(10.0, db / 10.0); }
inline double amp_from_db(double db) { return std::pow(10.0, db / 20.0); }

// Dense row-major matrix of doubles. Small helper, not a linear algebra
// library; the pipeline only needs storage plus element access.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) throw std::invalid_argument("Matrix: negative shape");
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }

  double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

  double* row(int r) { return data_.data() + static_cast<size_t>(r) * cols_; }
  const double* row(int r) const { return data_.data() + static_cast<size_t>(r) * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

// SplitMix64-based generator. Deterministic across platforms and compilers,
// which the reproducibility contract needs; std::uniform_real_distribution
// makes no such promise. The constructor scrambles the seed through the
// output mix: raw SplitMix64 states that differ by a small integer (adjacent
// user seeds) produce streams whose slow components correlate, which shows
// up as audible cross-correlation between supposedly independent scenes.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) { state_ = next_u64(); }

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; consumes two uniforms per draw.
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Independent stream for a subtask; mixes the index through the state.
  Rng derive(uint64_t index) const {
    Rng child(state_ ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
    child.next_u64();
    return child;
  }

 private:
  uint64_t state_;
};

}  // namespace maskshaper
