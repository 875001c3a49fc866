// Copyright 2026 The TKWS Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "kws/frontend.h"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "kws/error.h"

namespace kws {
namespace {

// FFTW planning is not thread-safe; execution with the new-array interface is.
class FftPlanCache {
 public:
  static FftPlanCache& instance() {
    static FftPlanCache cache;
    return cache;
  }

  fftw_plan real_to_complex(int n) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = r2c_.find(n);
    if (it != r2c_.end()) return it->second;
    double* in = fftw_alloc_real(static_cast<size_t>(n));
    fftw_complex* out = fftw_alloc_complex(static_cast<size_t>(n / 2 + 1));
    fftw_plan p = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    r2c_.emplace(n, p);
    return p;
  }

  // Unnormalized DCT-II (FFTW REDFT10).
  fftw_plan dct(int n) {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = dct_.find(n);
    if (it != dct_.end()) return it->second;
    double* in = fftw_alloc_real(static_cast<size_t>(n));
    double* out = fftw_alloc_real(static_cast<size_t>(n));
    fftw_plan p = fftw_plan_r2r_1d(n, in, out, FFTW_REDFT10, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    dct_.emplace(n, p);
    return p;
  }

  ~FftPlanCache() {
    for (auto& [n, p] : r2c_) fftw_destroy_plan(p);
    for (auto& [n, p] : dct_) fftw_destroy_plan(p);
  }

 private:
  std::mutex mu_;
  std::map<int, fftw_plan> r2c_;
  std::map<int, fftw_plan> dct_;
};

struct FftwDeleter {
  void operator()(void* p) const { fftw_free(p); }
};

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xFF));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

uint16_t get_u16(std::span<const uint8_t> b, size_t at) {
  return static_cast<uint16_t>(b[at] | (b[at + 1] << 8));
}

}  // namespace

std::string MfccConfig::label() const {
  return std::to_string(n_mels) + "x" + std::to_string(n_windows);
}

MfccConfig make_mfcc_config(int n_mels, int n_windows) {
  MfccConfig c;
  c.n_mels = n_mels;
  c.n_windows = n_windows;
  if (n_windows == 32) {
    c.fft_size = 1024;
  } else if (n_windows == 63) {
    c.fft_size = 512;
  } else {
    throw Error(ErrorCode::kParameter,
                "n_windows must be 32 or 63, got " + std::to_string(n_windows));
  }
  if (n_mels != 15 && n_mels != 30)
    throw Error(ErrorCode::kParameter,
                "n_mels must be 15 or 30, got " + std::to_string(n_mels));
  return c;
}

std::vector<MfccConfig> standard_mfcc_configs() {
  return {make_mfcc_config(15, 32), make_mfcc_config(30, 32),
          make_mfcc_config(15, 63), make_mfcc_config(30, 63)};
}

void validate(const MfccConfig& c) {
  if (c.n_mels < 1) throw Error(ErrorCode::kParameter, "n_mels must be positive");
  if (c.n_windows < 2)
    throw Error(ErrorCode::kParameter, "n_windows must be at least 2");
  if (c.fft_size < 2) throw Error(ErrorCode::kParameter, "fft_size must be >= 2");
  if (!(c.fmin_hz >= 0.0 && c.fmin_hz < c.fmax_hz &&
        c.fmax_hz <= kSampleRateHz / 2.0))
    throw Error(ErrorCode::kParameter,
                "require 0 <= fmin < fmax <= sample_rate / 2");
}

FramePlan frame_plan(const MfccConfig& config) {
  validate(config);
  if (config.fft_size > kClipSamples)
    throw Error(ErrorCode::kInfeasiblePlan,
                "frame of " + std::to_string(config.fft_size) +
                    " samples exceeds the clip");
  FramePlan plan;
  plan.frame_len = config.fft_size;
  plan.n_frames = config.n_windows;
  plan.hop = (kClipSamples - plan.frame_len) / (config.n_windows - 1);
  return plan;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> power_spectrum(std::span<const double> frame) {
  const int n = static_cast<int>(frame.size());
  if (n < 2) throw Error(ErrorCode::kShape, "frame shorter than 2 samples");
  fftw_plan plan = FftPlanCache::instance().real_to_complex(n);

  std::unique_ptr<double, FftwDeleter> in(fftw_alloc_real(frame.size()));
  std::unique_ptr<fftw_complex, FftwDeleter> out(
      fftw_alloc_complex(frame.size() / 2 + 1));
  // Periodic Hann.
  for (int i = 0; i < n; ++i) {
    const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
    in.get()[i] = frame[i] * w;
  }
  fftw_execute_dft_r2c(plan, in.get(), out.get());

  std::vector<double> power(static_cast<size_t>(n / 2 + 1));
  for (size_t k = 0; k < power.size(); ++k) {
    const double re = out.get()[k][0];
    const double im = out.get()[k][1];
    power[k] = re * re + im * im;
  }
  return power;
}

std::vector<double> power_spectrum(std::span<const double> frame, int fft_size) {
  if (frame.size() != static_cast<size_t>(fft_size))
    throw Error(ErrorCode::kShape, "frame has " + std::to_string(frame.size()) +
                                       " samples, expected " + std::to_string(fft_size));
  return power_spectrum(frame);
}

std::vector<double> mel_band_edges(const MfccConfig& config) {
  validate(config);
  const double lo = hz_to_mel(config.fmin_hz);
  const double hi = hz_to_mel(config.fmax_hz);
  std::vector<double> edges(static_cast<size_t>(config.n_mels + 2));
  for (size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) /
                                  static_cast<double>(config.n_mels + 1));
  return edges;
}

std::vector<double> mel_filterbank(const MfccConfig& config) {
  const auto edges = mel_band_edges(config);
  const int bins = config.fft_size / 2 + 1;
  const double bin_hz = static_cast<double>(kSampleRateHz) / config.fft_size;
  std::vector<double> fb(static_cast<size_t>(config.n_mels) * bins, 0.0);

  for (int m = 0; m < config.n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    double* row = fb.data() + static_cast<size_t>(m) * bins;
    double peak = 0.0;
    for (int k = 0; k < bins; ++k) {
      const double f = k * bin_hz;
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      row[k] = w;
      peak = std::max(peak, w);
    }
    if (peak <= 0.0)
      throw Error(ErrorCode::kDegenerate,
                  "mel filter " + std::to_string(m) +
                      " has no FFT bin in its support; too many mels for fft_size " +
                      std::to_string(config.fft_size));
    for (int k = 0; k < bins; ++k) row[k] /= peak;
  }
  return fb;
}

std::vector<double> dct_ii(std::span<const double> v) {
  const int n = static_cast<int>(v.size());
  std::vector<double> out(v.size(), 0.0);
  if (n == 0) return out;
  fftw_plan plan = FftPlanCache::instance().dct(n);
  std::unique_ptr<double, FftwDeleter> in(fftw_alloc_real(v.size()));
  std::unique_ptr<double, FftwDeleter> res(fftw_alloc_real(v.size()));
  std::copy(v.begin(), v.end(), in.get());
  fftw_execute_r2r(plan, in.get(), res.get());
  // REDFT10 yields 2 * sum; rescale to the orthonormal basis.
  const double s0 = std::sqrt(1.0 / n) / 2.0;
  const double sk = std::sqrt(2.0 / n) / 2.0;
  for (int k = 0; k < n; ++k) out[k] = res.get()[k] * (k == 0 ? s0 : sk);
  return out;
}

FeatureMap extract_mfcc(const AudioClip& clip, const MfccConfig& config) {
  if (!clip.is_canonical())
    throw Error(ErrorCode::kShape, "clip must be 16000 samples at 16 kHz");
  const FramePlan plan = frame_plan(config);
  const auto fb = mel_filterbank(config);
  const int bins = config.fft_size / 2 + 1;

  FeatureMap out(config);
  std::vector<double> frame(static_cast<size_t>(plan.frame_len));
  std::vector<double> log_mel(static_cast<size_t>(config.n_mels));
  for (int t = 0; t < plan.n_frames; ++t) {
    const size_t start = static_cast<size_t>(t) * plan.hop;
    for (int i = 0; i < plan.frame_len; ++i)
      frame[i] = clip.samples[start + i] / 32768.0;
    const auto power = power_spectrum(frame, config.fft_size);
    for (int m = 0; m < config.n_mels; ++m) {
      const double* row = fb.data() + static_cast<size_t>(m) * bins;
      double e = 0.0;
      for (int k = 0; k < bins; ++k) e += row[k] * power[k];
      log_mel[m] = std::log(e + kLogFloor);
    }
    const auto coeffs = dct_ii(log_mel);
    for (int m = 0; m < config.n_mels; ++m) out.at(m, t) = coeffs[m];
  }
  return out;
}

FeatureMap normalize(const FeatureMap& features, const NormStats& stats) {
  const int rows = features.rows();
  if (stats.mean.size() != static_cast<size_t>(rows) ||
      stats.std.size() != static_cast<size_t>(rows))
    throw Error(ErrorCode::kShape, "norm stats do not match n_mels");
  FeatureMap out = features;
  for (int m = 0; m < rows; ++m) {
    if (!(stats.std[m] > 0.0))
      throw Error(ErrorCode::kDegenerate,
                  "zero std for coefficient " + std::to_string(m));
    for (int t = 0; t < features.cols(); ++t)
      out.at(m, t) = (features.at(m, t) - stats.mean[m]) / stats.std[m];
  }
  return out;
}

NormStats compute_norm_stats(std::span<const FeatureMap> maps) {
  if (maps.empty()) throw Error(ErrorCode::kArgument, "no feature maps");
  const int rows = maps.front().rows();
  NormStats stats{std::vector<double>(rows, 0.0), std::vector<double>(rows, 0.0)};
  double count = 0.0;
  for (const auto& fm : maps) {
    if (fm.rows() != rows) throw Error(ErrorCode::kShape, "mixed n_mels");
    count += fm.cols();
    for (int m = 0; m < rows; ++m)
      for (int t = 0; t < fm.cols(); ++t) stats.mean[m] += fm.at(m, t);
  }
  for (auto& v : stats.mean) v /= count;
  for (const auto& fm : maps)
    for (int m = 0; m < rows; ++m)
      for (int t = 0; t < fm.cols(); ++t) {
        const double d = fm.at(m, t) - stats.mean[m];
        stats.std[m] += d * d;
      }
  for (int m = 0; m < rows; ++m) {
    stats.std[m] = std::sqrt(stats.std[m] / count);
    if (!(stats.std[m] > 0.0))
      throw Error(ErrorCode::kDegenerate,
                  "coefficient " + std::to_string(m) + " has zero variance");
  }
  return stats;
}

std::vector<uint8_t> encode_features(const FeatureMap& features) {
  std::vector<uint8_t> out{'K', 'W', 'S', 'F'};
  put_u16(out, kFeatureFileVersion);
  put_u16(out, static_cast<uint16_t>(features.rows()));
  put_u16(out, static_cast<uint16_t>(features.cols()));
  for (double v : features.data) {
    const float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(bits >> (8 * i)));
  }
  return out;
}

FeatureMap decode_features(std::span<const uint8_t> bytes) {
  if (bytes.size() < 10 || !std::equal(bytes.begin(), bytes.begin() + 4, "KWSF"))
    throw Error(ErrorCode::kFormat, "not a KWSF feature file");
  const uint16_t version = get_u16(bytes, 4);
  if (version != kFeatureFileVersion)
    throw Error(ErrorCode::kFormat, "unsupported KWSF version " + std::to_string(version));
  MfccConfig config;
  config.n_mels = get_u16(bytes, 6);
  config.n_windows = get_u16(bytes, 8);
  if (config.n_windows == 32) config.fft_size = 1024;
  else if (config.n_windows == 63) config.fft_size = 512;
  const size_t count = static_cast<size_t>(config.n_mels) * config.n_windows;
  if (bytes.size() != 10 + 4 * count)
    throw Error(ErrorCode::kCorruption, "KWSF payload size mismatch");
  FeatureMap fm(config);
  for (size_t i = 0; i < count; ++i) {
    uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<uint32_t>(bytes[10 + 4 * i + b]) << (8 * b);
    float f;
    std::memcpy(&f, &bits, sizeof f);
    fm.data[i] = f;
  }
  return fm;
}

void save_features(const FeatureMap& features, const std::filesystem::path& path) {
  const auto bytes = encode_features(features);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

FeatureMap load_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return decode_features(bytes);
}

}  // namespace kws
