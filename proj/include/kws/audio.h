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

#ifndef KWS_AUDIO_H_
#define KWS_AUDIO_H_

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace kws {

inline constexpr int kSampleRateHz = 16000;
inline constexpr int kClipSamples = 16000;

// Mono 16-bit PCM. Clips produced by load_wav are always canonical: 16 kHz and
// exactly kClipSamples long.
struct AudioClip {
  std::vector<int16_t> samples;
  int sample_rate_hz = kSampleRateHz;

  bool is_canonical() const {
    return sample_rate_hz == kSampleRateHz &&
           samples.size() == static_cast<size_t>(kClipSamples);
  }
};

struct SnrSpec {
  double mean_db = 10.0;
  double std_db = 5.0;
};

struct ManifestEntry {
  std::filesystem::path path;  // resolved against the manifest directory
  std::string label;
};

// Reads a RIFF/WAVE file with a 16-bit PCM payload. Multi-channel data is
// averaged to mono and the result padded or truncated to one second.
AudioClip load_wav(const std::filesystem::path& path);

// Parses an in-memory WAV image; load_wav is a thin wrapper over this.
AudioClip decode_wav(std::span<const uint8_t> bytes);

// Writes a mono 16-bit PCM WAV.
void save_wav(const AudioClip& clip, const std::filesystem::path& path);
std::vector<uint8_t> encode_wav(const AudioClip& clip);

// Pads with trailing zeros or truncates to kClipSamples.
AudioClip canonicalize(std::vector<int16_t> samples);

double rms(std::span<const int16_t> samples);

// Gain applied to the noise so that the signal-to-scaled-noise power ratio is
// snr_db decibels.
double snr_gain(double signal_rms, double noise_rms, double snr_db);

// signal + g * noise, saturated to int16.
AudioClip mix_at_snr(const AudioClip& signal, const AudioClip& noise,
                     double snr_db);

// One draw from N(mean_db, std_db). Deterministic for a given engine state.
double sample_snr(std::mt19937_64& rng, const SnrSpec& spec);

// `relative/path.wav<TAB>label` per line. Blank lines are skipped.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
std::vector<ManifestEntry> parse_manifest(const std::string& text,
                                          const std::filesystem::path& base);

}  // namespace kws

#endif  // KWS_AUDIO_H_
