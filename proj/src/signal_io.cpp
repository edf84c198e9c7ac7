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

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>
#include <stdexcept>

namespace maskshaper {
namespace {

static_assert(std::endian::native == std::endian::little,
              "WAV I/O assumes a little-endian host");

// FFTW plan creation is not thread-safe; execution on private buffers is.
std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

// Real <-> one-sided complex FFT of a fixed size, unnormalized in both
// directions (inverse output carries a factor of n).
class Fft {
 public:
  explicit Fft(int n) : n_(n) {
    real_ = fftw_alloc_real(n);
    cmplx_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    forward_ = fftw_plan_dft_r2c_1d(n, real_, cmplx_, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_c2r_1d(n, cmplx_, real_, FFTW_ESTIMATE);
  }

  ~Fft() {
    std::lock_guard<std::mutex> lock(fftw_plan_mutex());
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
    fftw_free(real_);
    fftw_free(cmplx_);
  }

  Fft(const Fft&) = delete;
  Fft& operator=(const Fft&) = delete;

  void forward(const double* in, std::complex<double>* out) {
    std::copy(in, in + n_, real_);
    fftw_execute(forward_);
    // std::complex<double> is layout-compatible with fftw_complex.
    std::memcpy(reinterpret_cast<double*>(out), cmplx_,
                sizeof(fftw_complex) * (n_ / 2 + 1));
  }

  void inverse(const std::complex<double>* in, double* out) {
    std::memcpy(cmplx_, reinterpret_cast<const double*>(in),
                sizeof(fftw_complex) * (n_ / 2 + 1));
    fftw_execute(inverse_);
    std::copy(real_, real_ + n_, out);
  }

 private:
  int n_;
  double* real_;
  fftw_complex* cmplx_;
  fftw_plan forward_;
  fftw_plan inverse_;
};

struct WavFormat {
  uint16_t format_tag = 0;
  uint16_t channels = 0;
  uint32_t sample_rate = 0;
  uint16_t bits_per_sample = 0;
};

uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

void write_u32(std::ostream& out, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff),
               static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

void write_u16(std::ostream& out, uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff)};
  out.write(b, 2);
}

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatIeeeFloat = 3;
constexpr uint16_t kFormatExtensible = 0xfffe;

double decode_sample(const unsigned char* p, const WavFormat& fmt) {
  if (fmt.format_tag == kFormatIeeeFloat) {
    float v;
    std::memcpy(&v, p, 4);
    return static_cast<double>(v);
  }
  if (fmt.bits_per_sample == 16) {
    int16_t v = static_cast<int16_t>(p[0] | (p[1] << 8));
    return v / 32768.0;
  }
  // 24-bit: sign-extend the packed little-endian triple.
  int32_t v = (p[0] << 8) | (p[1] << 16) |
              (static_cast<int32_t>(static_cast<int8_t>(p[2])) << 24);
  return (v >> 8) / 8388608.0;
}

}  // namespace

Signal read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open WAV file: " + path);

  char tag[4];
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "RIFF", 4) != 0)
    throw std::runtime_error("not a RIFF file: " + path);
  read_u32(in);  // RIFF payload size; chunk sizes below are authoritative.
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "WAVE", 4) != 0)
    throw std::runtime_error("not a WAVE file: " + path);

  WavFormat fmt;
  bool have_fmt = false;
  std::vector<unsigned char> data;
  bool have_data = false;

  while (in.read(tag, 4)) {
    uint32_t chunk_size = read_u32(in);
    if (!in) break;
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      if (chunk_size < 16)
        throw std::runtime_error("malformed fmt chunk: " + path);
      fmt.format_tag = read_u16(in);
      fmt.channels = read_u16(in);
      fmt.sample_rate = read_u32(in);
      read_u32(in);  // byte rate
      read_u16(in);  // block align
      fmt.bits_per_sample = read_u16(in);
      uint32_t consumed = 16;
      if (fmt.format_tag == kFormatExtensible && chunk_size >= 40) {
        read_u16(in);  // cbSize
        read_u16(in);  // valid bits
        read_u32(in);  // channel mask
        fmt.format_tag = read_u16(in);  // first subformat GUID word
        consumed = 26;
      }
      in.ignore(chunk_size - consumed);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data.resize(chunk_size);
      in.read(reinterpret_cast<char*>(data.data()), chunk_size);
      if (static_cast<uint32_t>(in.gcount()) != chunk_size)
        throw std::runtime_error("truncated data chunk: " + path);
      have_data = true;
    } else {
      in.ignore(chunk_size);
    }
    if (chunk_size % 2 == 1) in.ignore(1);  // chunks are word-aligned
  }

  if (!have_fmt || !have_data)
    throw std::runtime_error("missing fmt or data chunk: " + path);

  bool supported =
      (fmt.format_tag == kFormatPcm &&
       (fmt.bits_per_sample == 16 || fmt.bits_per_sample == 24)) ||
      (fmt.format_tag == kFormatIeeeFloat && fmt.bits_per_sample == 32);
  if (!supported)
    throw std::runtime_error("unsupported WAV encoding in " + path);
  if (fmt.channels == 0)
    throw std::runtime_error("malformed fmt chunk: " + path);
  if (fmt.sample_rate != static_cast<uint32_t>(kSampleRate))
    throw std::runtime_error("unsupported sample rate " +
                             std::to_string(fmt.sample_rate) + " in " + path +
                             " (expected 44100)");

  size_t bytes_per_sample = fmt.bits_per_sample / 8;
  size_t frame_bytes = bytes_per_sample * fmt.channels;
  size_t num_frames = data.size() / frame_bytes;

  Signal signal;
  signal.sample_rate = kSampleRate;
  signal.samples.resize(num_frames);
  for (size_t i = 0; i < num_frames; ++i) {
    const unsigned char* p = data.data() + i * frame_bytes;
    double acc = 0.0;
    for (int c = 0; c < fmt.channels; ++c)
      acc += decode_sample(p + c * bytes_per_sample, fmt);
    signal.samples[i] = acc / fmt.channels;
  }
  return signal;
}

WavWriteResult write_wav(const Signal& signal, const std::string& path,
                         WavDepth depth) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot create WAV file: " + path);

  uint16_t bits = depth == WavDepth::pcm16   ? 16
                  : depth == WavDepth::pcm24 ? 24
                                             : 32;
  uint16_t format_tag =
      depth == WavDepth::float32 ? kFormatIeeeFloat : kFormatPcm;
  uint32_t num_samples = static_cast<uint32_t>(signal.samples.size());
  uint32_t data_bytes = num_samples * (bits / 8);

  out.write("RIFF", 4);
  write_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  write_u16(out, format_tag);
  write_u16(out, 1);  // mono
  write_u32(out, static_cast<uint32_t>(signal.sample_rate));
  write_u32(out, static_cast<uint32_t>(signal.sample_rate) * (bits / 8));
  write_u16(out, bits / 8);
  write_u16(out, bits);
  out.write("data", 4);
  write_u32(out, data_bytes);

  WavWriteResult result;
  for (double x : signal.samples) {
    double clamped = std::clamp(x, -1.0, 1.0);
    if (depth != WavDepth::float32 && clamped != x) {
      result.clipped = true;
      ++result.clipped_samples;
    }
    switch (depth) {
      case WavDepth::float32: {
        float v = static_cast<float>(x);
        out.write(reinterpret_cast<const char*>(&v), 4);
        break;
      }
      case WavDepth::pcm16: {
        double scaled = std::nearbyint(clamped * 32768.0);
        int16_t v = static_cast<int16_t>(std::clamp(scaled, -32768.0, 32767.0));
        char b[2] = {static_cast<char>(v & 0xff),
                     static_cast<char>((v >> 8) & 0xff)};
        out.write(b, 2);
        break;
      }
      case WavDepth::pcm24: {
        double scaled = std::nearbyint(clamped * 8388608.0);
        int32_t v =
            static_cast<int32_t>(std::clamp(scaled, -8388608.0, 8388607.0));
        char b[3] = {static_cast<char>(v & 0xff),
                     static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff)};
        out.write(b, 3);
        break;
      }
    }
  }
  if (!out) throw std::runtime_error("failed writing WAV file: " + path);
  return result;
}

std::vector<double> hann_window(int length) {
  std::vector<double> w(length);
  for (int i = 0; i < length; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / length);
  return w;
}

double hann_window_power(int length) { return 0.375 * length; }

Spectrogram stft(const Signal& signal, const StftConfig& config) {
  int num_frames = config.frame_count(signal.samples.size());
  Spectrogram spec(num_frames, config, signal.sample_rate);
  std::vector<double> window = hann_window(config.window_len);
  std::vector<double> buffer(config.window_len);
  Fft fft(config.window_len);
  for (int n = 0; n < num_frames; ++n) {
    const double* src = signal.samples.data() + static_cast<size_t>(n) * config.hop;
    for (int i = 0; i < config.window_len; ++i) buffer[i] = src[i] * window[i];
    fft.forward(buffer.data(), spec.frame(n));
  }
  return spec;
}

Signal istft(const Spectrogram& spec) {
  const StftConfig& config = spec.config();
  int num_frames = spec.num_frames();
  size_t out_len =
      num_frames == 0
          ? 0
          : static_cast<size_t>(num_frames - 1) * config.hop + config.window_len;

  Signal signal;
  signal.sample_rate = spec.sample_rate();
  signal.samples.assign(out_len, 0.0);
  if (out_len == 0) return signal;

  std::vector<double> window = hann_window(config.window_len);
  std::vector<double> weight(out_len, 0.0);
  std::vector<double> frame(config.window_len);
  Fft fft(config.window_len);
  double inv_n = 1.0 / config.window_len;

  for (int n = 0; n < num_frames; ++n) {
    fft.inverse(spec.frame(n), frame.data());
    size_t offset = static_cast<size_t>(n) * config.hop;
    for (int i = 0; i < config.window_len; ++i) {
      signal.samples[offset + i] += frame[i] * inv_n * window[i];
      weight[offset + i] += window[i] * window[i];
    }
  }
  for (size_t i = 0; i < out_len; ++i) {
    if (weight[i] > 1e-12)
      signal.samples[i] /= weight[i];
    else
      signal.samples[i] = 0.0;
  }
  return signal;
}

double a_weighting_db(double frequency_hz) {
  constexpr double kFloorDb = -200.0;
  if (frequency_hz <= 0.0) return kFloorDb;
  auto response = [](double f) {
    double f2 = f * f;
    double r = 12194.0 * 12194.0 * f2 * f2 /
               ((f2 + 20.6 * 20.6) * (f2 + 12194.0 * 12194.0) *
                std::sqrt((f2 + 107.7 * 107.7) * (f2 + 737.9 * 737.9)));
    return r;
  };
  static const double norm = response(1000.0);
  double db = 20.0 * std::log10(response(frequency_hz) / norm);
  return std::max(db, kFloorDb);
}

double a_weighting_power_gain(double frequency_hz) {
  return std::pow(10.0, a_weighting_db(frequency_hz) / 10.0);
}

std::vector<double> a_weighted_bin_gains(const StftConfig& config,
                                         int sample_rate) {
  int bins = config.bins();
  std::vector<double> gains(bins);
  for (int k = 0; k < bins; ++k) {
    double f = static_cast<double>(k) * sample_rate / config.window_len;
    double one_sided = (k == 0 || k == bins - 1) ? 1.0 : 2.0;
    gains[k] = one_sided * a_weighting_power_gain(f);
  }
  return gains;
}

double frame_dba_from_weighted_power(double weighted_power,
                                     const StftConfig& config,
                                     const DbaCalibration& calibration) {
  if (weighted_power <= 0.0) return kDbFloor;
  // Mean square of the frame, corrected for the analysis window; a
  // full-scale sine (mean square 1/2) maps to spl_at_fullscale.
  double mean_square = weighted_power / (config.window_len *
                                         hann_window_power(config.window_len));
  double dba =
      10.0 * std::log10(2.0 * mean_square) + calibration.spl_at_fullscale;
  return std::max(dba, kDbFloor);
}

FramePowerDba frame_power_dba(const Spectrogram& spec,
                              const DbaCalibration& calibration) {
  std::vector<double> gains = a_weighted_bin_gains(spec.config(), spec.sample_rate());
  FramePowerDba out;
  out.values.resize(spec.num_frames());
  for (int n = 0; n < spec.num_frames(); ++n) {
    const std::complex<double>* frame = spec.frame(n);
    double acc = 0.0;
    for (int k = 0; k < spec.num_bins(); ++k) acc += gains[k] * std::norm(frame[k]);
    out.values[n] = frame_dba_from_weighted_power(acc, spec.config(), calibration);
  }
  return out;
}

}  // namespace maskshaper
