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

#ifndef KWS_FRONTEND_H_
#define KWS_FRONTEND_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "kws/audio.h"

namespace kws {

struct MfccConfig {
  int n_mels = 15;
  int n_windows = 63;
  int fft_size = 512;
  double fmin_hz = 20.0;
  double fmax_hz = 8000.0;

  // "15x63" style label used in reports.
  std::string label() const;
  bool operator==(const MfccConfig&) const = default;
};

// The four evaluated configurations: {15, 30} mels x {(32, 1024), (63, 512)}.
MfccConfig make_mfcc_config(int n_mels, int n_windows);
std::vector<MfccConfig> standard_mfcc_configs();

// Throws kParameter if the fields are out of range. Only checks general
// feasibility; non-standard (n_windows, fft_size) pairs are accepted.
void validate(const MfccConfig& config);

struct FramePlan {
  int frame_len = 0;
  int hop = 0;
  int n_frames = 0;

  // One past the last sample read by the final frame.
  int end_sample() const { return (n_frames - 1) * hop + frame_len; }
};

FramePlan frame_plan(const MfccConfig& config);

// Row-major matrix of n_mels rows by n_windows columns.
struct FeatureMap {
  MfccConfig config;
  std::vector<double> data;

  FeatureMap() = default;
  explicit FeatureMap(const MfccConfig& c)
      : config(c), data(static_cast<size_t>(c.n_mels) * c.n_windows, 0.0) {}

  int rows() const { return config.n_mels; }
  int cols() const { return config.n_windows; }
  double& at(int mel, int t) { return data[static_cast<size_t>(mel) * cols() + t]; }
  double at(int mel, int t) const {
    return data[static_cast<size_t>(mel) * cols() + t];
  }
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;

  static NormStats identity(int n_mels) {
    return {std::vector<double>(n_mels, 0.0), std::vector<double>(n_mels, 1.0)};
  }
};

inline constexpr double kLogFloor = 1e-6;

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// |DFT|^2 of the Hann-windowed frame, bins 0..N/2.
std::vector<double> power_spectrum(std::span<const double> frame);
// As above, rejecting frames whose length is not fft_size.
std::vector<double> power_spectrum(std::span<const double> frame, int fft_size);

// n_mels x (fft_size/2 + 1), row-major.
std::vector<double> mel_filterbank(const MfccConfig& config);

// Mel band edges in Hz (n_mels + 2 points).
std::vector<double> mel_band_edges(const MfccConfig& config);

// Orthonormal DCT-II keeping every coefficient.
std::vector<double> dct_ii(std::span<const double> v);

FeatureMap extract_mfcc(const AudioClip& clip, const MfccConfig& config);

FeatureMap normalize(const FeatureMap& features, const NormStats& stats);

// Per-coefficient mean/std pooled over every frame of every map.
NormStats compute_norm_stats(std::span<const FeatureMap> maps);

// KWSF: "KWSF", u16 version, u16 n_mels, u16 n_windows, f32 data (mel-major).
inline constexpr uint16_t kFeatureFileVersion = 1;
std::vector<uint8_t> encode_features(const FeatureMap& features);
FeatureMap decode_features(std::span<const uint8_t> bytes);
void save_features(const FeatureMap& features, const std::filesystem::path& path);
FeatureMap load_features(const std::filesystem::path& path);

}  // namespace kws

#endif  // KWS_FRONTEND_H_
