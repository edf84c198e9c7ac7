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

#include "maskshaper/masking.h"

#include <array>
#include <cmath>
#include <vector>

#include "doctest.h"

namespace maskshaper {
namespace {

std::array<double, kNumBands> zero_bands() {
  std::array<double, kNumBands> b{};
  return b;
}

TEST_CASE("spreading function") {
  CHECK(spreading_db(0) == doctest::Approx(-0.001389054));
  CHECK(spreading_db(1) == doctest::Approx(-4.306012576));
  CHECK(spreading_db(-1) == doctest::Approx(-7.908265411));
  CHECK(spreading_db(2) == doctest::Approx(-12.333040912));
  CHECK(spreading_db(-2) == doctest::Approx(-27.563154112));
  CHECK(spreading_db(3) == doctest::Approx(-21.398591623));
  // Masking spreads farther upward in frequency than downward.
  for (int d = 1; d <= 10; ++d) CHECK(spreading_db(-d) < spreading_db(d));
}

TEST_CASE("spreading matrix") {
  SpreadingMatrix s;
  for (int v = 1; v <= kNumBands; ++v) {
    double row = 0.0;
    for (int u = 1; u <= kNumBands; ++u) {
      CHECK(s.gain(v, u) > 0.0);
      CHECK(s.gain(v, u) <= s.gain(v, v));
      row += s.gain(v, u);
    }
    CHECK(s.row_sum(v) == doctest::Approx(row).epsilon(1e-12));
    CHECK(s.row_sum(v) > 1.0);
  }
  CHECK(s.row_sum(13) == doctest::Approx(1.600939329637593));
}

TEST_CASE("tonality estimate") {
  SUBCASE("flat spectrum is maximally noiselike") {
    std::vector<double> p(1025, 0.7);
    TonalityEstimate t = tonality(p.data(), 1025);
    CHECK(t.sfm_db == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(t.alpha == doctest::Approx(0.0).epsilon(1e-9));
  }

  SUBCASE("single line is fully tonal") {
    std::vector<double> p(1025, 0.0);
    p[300] = 5.0;
    TonalityEstimate t = tonality(p.data(), 1025);
    CHECK(t.sfm_db < -60.0);
    CHECK(t.alpha == 1.0);
  }

  SUBCASE("two-level spectrum maps linearly to alpha") {
    // Half the bins at 1, half at 4e6: flatness lands at -30 dB.
    std::vector<double> p(1025, 1.0);
    for (int k = 1; k <= 512; ++k) p[k] = 4e6;
    TonalityEstimate t = tonality(p.data(), 1025);
    CHECK(t.sfm_db == doctest::Approx(-30.000001).epsilon(1e-6));
    CHECK(t.alpha == doctest::Approx(0.5).epsilon(1e-6));
  }

  SUBCASE("all-zero frame falls back to noiselike") {
    std::vector<double> p(1025, 0.0);
    TonalityEstimate t = tonality(p.data(), 1025);
    CHECK(t.alpha == 0.0);
    CHECK(t.sfm_db == 0.0);
  }

  SUBCASE("scale invariance") {
    Rng rng(17);
    std::vector<double> p(1025);
    for (double& x : p) x = std::pow(10.0, rng.uniform(-6.0, 0.0));
    TonalityEstimate a = tonality(p.data(), 1025);
    for (double& x : p) x *= 1e4;
    TonalityEstimate b = tonality(p.data(), 1025);
    CHECK(a.sfm_db == doctest::Approx(b.sfm_db).epsilon(1e-9));
    CHECK(a.alpha == doctest::Approx(b.alpha).epsilon(1e-9));
  }
}

TEST_CASE("hearing threshold in quiet") {
  CHECK(absolute_threshold_db_spl(50.0) == doctest::Approx(39.976107112));
  CHECK(absolute_threshold_db_spl(100.0) == doctest::Approx(22.952896352));
  CHECK(absolute_threshold_db_spl(1000.0) == doctest::Approx(3.369066526));
  CHECK(absolute_threshold_db_spl(4000.0) == doctest::Approx(-3.387544996));
  CHECK(absolute_threshold_db_spl(16000.0) == doctest::Approx(65.932100506));
}

TEST_CASE("masking thresholds") {
  BarkBands bands;
  StftConfig config;
  MaskingOptions no_floor;
  no_floor.abs_floor = false;
  MaskingModel model(bands, config, no_floor);
  MaskingModel floored(bands, config, {});
  TonalityEstimate noiselike{0.0, 0.0};

  SUBCASE("zero input with the floor disabled bottoms out") {
    auto b = zero_bands();
    ThresholdRow row = model.thresholds(b.data(), noiselike);
    for (int v = 0; v < kNumBands; ++v) {
      CHECK(row.linear[v] == 0.0);
      CHECK(row.db[v] == -120.0);
    }
    CHECK(row.floor_active == 0);
  }

  SUBCASE("zero input with the floor enabled rests on the hearing threshold") {
    auto b = zero_bands();
    ThresholdRow row = floored.thresholds(b.data(), noiselike);
    for (int v = 1; v <= kNumBands; ++v) {
      CHECK(row.is_floor_active(v));
      CHECK(row.db[v - 1] == doctest::Approx(floored.floor_db(v)));
    }
  }

  SUBCASE("floor maps the quiet threshold through the calibration") {
    // Full scale = 100 dB SPL; the window adds 10*log10(W*sum(w^2)/4).
    double expected = absolute_threshold_db_spl(bands.band_center_hz(9)) -
                      100.0 + 55.94631181007343;
    CHECK(floored.floor_db(9) == doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("single active band closes to the analytic form") {
    auto b = zero_bands();
    b[9] = 1e6;  // band 10 at 60 dB
    ThresholdRow row = model.thresholds(b.data(), noiselike);
    CHECK(row.db[7] == doctest::Approx(24.893097454188823));   // band 8
    CHECK(row.db[9] == doctest::Approx(52.454862210037454));   // band 10
    CHECK(row.db[11] == doctest::Approx(40.12321034931836));   // band 12
  }

  SUBCASE("uniform power shift moves thresholds by the same amount") {
    Rng rng(29);
    auto b = zero_bands();
    for (double& x : b) x = std::pow(10.0, rng.uniform(2.0, 6.0));
    TonalityEstimate t{-20.0, 1.0 / 3.0};
    ThresholdRow base = model.thresholds(b.data(), t);
    for (double& x : b) x *= 10.0;
    ThresholdRow shifted = model.thresholds(b.data(), t);
    for (int v = 0; v < kNumBands; ++v)
      CHECK(shifted.linear[v] == doctest::Approx(10.0 * base.linear[v]).epsilon(1e-12));
  }

  SUBCASE("thresholds sit at least 5.5 dB under the spread power") {
    Rng rng(31);
    auto b = zero_bands();
    for (double& x : b) x = std::pow(10.0, rng.uniform(1.0, 6.0));
    TonalityEstimate t{-45.0, 0.75};
    ThresholdRow row = model.thresholds(b.data(), t);
    for (int v = 1; v <= kNumBands; ++v) {
      double spread = 0.0;
      for (int u = 1; u <= kNumBands; ++u)
        spread += model.spreading().gain(v, u) * b[u - 1];
      CHECK(row.db[v - 1] <= db_from_power(spread) - 5.5 + 1e-9);
    }
  }

  SUBCASE("loud input keeps the floor inactive where hearing is sensitive") {
    auto b = zero_bands();
    for (double& x : b) x = 1e8;
    ThresholdRow row = floored.thresholds(b.data(), noiselike);
    // The top of the spectrum (bands 25-26) stays floored: the threshold in
    // quiet rises steeply past 15 kHz.
    for (int v = 1; v <= 24; ++v) CHECK_FALSE(row.is_floor_active(v));
    CHECK(row.is_floor_active(26));
  }
}

TEST_CASE("threshold jacobian") {
  BarkBands bands;
  StftConfig config;
  MaskingOptions no_floor;
  no_floor.abs_floor = false;
  MaskingModel model(bands, config, no_floor);
  MaskingModel floored(bands, config, {});

  SUBCASE("matches central finite differences on random frames") {
    Rng rng(37);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      std::array<double, kNumBands> b;
      for (double& x : b) x = std::pow(10.0, rng.uniform(0.0, 6.0));
      TonalityEstimate t{rng.uniform(-60.0, 0.0), 0.0};
      t.alpha = t.sfm_db / -60.0;

      ThresholdRow base = model.thresholds(b.data(), t);
      Matrix jac = model.threshold_jacobian(b.data(), t);
      for (int u = 0; u < kNumBands; ++u) {
        // Thresholds are linear in band power at fixed tonality, so a large
        // step keeps the difference well above rounding noise.
        double h = 0.25 * b[u];
        std::array<double, kNumBands> hi = b, lo = b;
        hi[u] += h;
        lo[u] -= h;
        ThresholdRow th = model.thresholds(hi.data(), t);
        ThresholdRow tl = model.thresholds(lo.data(), t);
        for (int v = 0; v < kNumBands; ++v) {
          double fd = (th.linear[v] - tl.linear[v]) / (2.0 * h);
          // Couplings more than ~80 dB below the row scale sit beneath the
          // resolution of the difference itself; nothing to compare there.
          double resolvable = 1e-8 * base.linear[v] / b[u];
          if (std::max(std::abs(fd), jac(v, u)) < resolvable) continue;
          double denom = std::max(std::abs(fd), std::abs(jac(v, u)));
          worst = std::max(worst, std::abs(jac(v, u) - fd) / denom);
        }
      }
    }
    CHECK(worst <= 1e-6);
  }

  SUBCASE("entries are nonnegative") {
    std::array<double, kNumBands> b;
    Rng rng(41);
    for (double& x : b) x = std::pow(10.0, rng.uniform(0.0, 6.0));
    Matrix jac = model.threshold_jacobian(b.data(), {-12.0, 0.2});
    for (int v = 0; v < kNumBands; ++v)
      for (int u = 0; u < kNumBands; ++u) CHECK(jac(v, u) >= 0.0);
  }

  SUBCASE("floor-active bands have zero sensitivity") {
    auto b = zero_bands();
    b[9] = 1e6;  // only bands near 10 rise above the hearing threshold
    TonalityEstimate t{0.0, 0.0};
    ThresholdRow row = floored.thresholds(b.data(), t);
    Matrix jac = floored.threshold_jacobian(b.data(), t);
    bool saw_clamped = false, saw_free = false;
    for (int v = 1; v <= kNumBands; ++v) {
      double row_mag = 0.0;
      for (int u = 0; u < kNumBands; ++u) row_mag += jac(v - 1, u);
      if (row.is_floor_active(v)) {
        CHECK(row_mag == 0.0);
        saw_clamped = true;
      } else {
        CHECK(row_mag > 0.0);
        saw_free = true;
      }
    }
    CHECK(saw_clamped);
    CHECK(saw_free);
  }
}

}  // namespace
}  // namespace maskshaper
