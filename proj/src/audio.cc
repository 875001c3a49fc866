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

#include "kws/audio.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "kws/error.h"

namespace kws {
namespace {

constexpr uint16_t kWaveFormatPcm = 1;
constexpr uint16_t kWaveFormatExtensible = 0xFFFE;

uint16_t read_u16(std::span<const uint8_t> b, size_t at) {
  return static_cast<uint16_t>(b[at] | (b[at + 1] << 8));
}

uint32_t read_u32(std::span<const uint8_t> b, size_t at) {
  return static_cast<uint32_t>(b[at]) | (static_cast<uint32_t>(b[at + 1]) << 8) |
         (static_cast<uint32_t>(b[at + 2]) << 16) |
         (static_cast<uint32_t>(b[at + 3]) << 24);
}

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
  out.push_back(static_cast<uint8_t>(v & 0xFF));
  out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

bool tag_is(std::span<const uint8_t> b, size_t at, const char* tag) {
  return std::equal(tag, tag + 4, b.begin() + static_cast<std::ptrdiff_t>(at));
}

int16_t saturate_i16(double v) {
  return static_cast<int16_t>(std::clamp(std::round(v), -32768.0, 32767.0));
}

}  // namespace

AudioClip canonicalize(std::vector<int16_t> samples) {
  samples.resize(kClipSamples, 0);
  return AudioClip{std::move(samples), kSampleRateHz};
}

AudioClip decode_wav(std::span<const uint8_t> bytes) {
  if (bytes.size() < 12 || !tag_is(bytes, 0, "RIFF") || !tag_is(bytes, 8, "WAVE"))
    throw Error(ErrorCode::kFormat, "not a RIFF/WAVE container");

  bool have_fmt = false;
  uint16_t channels = 0;
  uint32_t rate = 0;
  std::span<const uint8_t> data;
  bool have_data = false;

  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const uint32_t size = read_u32(bytes, pos + 4);
    const size_t body = pos + 8;
    if (size > bytes.size() - body) {
      // Tolerate a data chunk whose declared size overruns the file (common in
      // streamed recordings); any other overrun is malformed.
      if (!tag_is(bytes, pos, "data"))
        throw Error(ErrorCode::kFormat, "chunk overruns file");
    }
    const size_t avail = std::min<size_t>(size, bytes.size() - body);
    if (tag_is(bytes, pos, "fmt ")) {
      if (avail < 16) throw Error(ErrorCode::kFormat, "short fmt chunk");
      uint16_t format = read_u16(bytes, body);
      channels = read_u16(bytes, body + 2);
      rate = read_u32(bytes, body + 4);
      const uint16_t bits = read_u16(bytes, body + 14);
      if (format == kWaveFormatExtensible && avail >= 26)
        format = read_u16(bytes, body + 24);  // first two bytes of the GUID
      if (format != kWaveFormatPcm)
        throw Error(ErrorCode::kUnsupportedFormat,
                    "encoding " + std::to_string(format) + " is not PCM");
      if (bits != 16)
        throw Error(ErrorCode::kUnsupportedFormat,
                    std::to_string(bits) + "-bit samples");
      if (channels == 0) throw Error(ErrorCode::kFormat, "zero channels");
      have_fmt = true;
    } else if (tag_is(bytes, pos, "data")) {
      data = bytes.subspan(body, avail);
      have_data = true;
    }
    pos = body + avail + (avail & 1);
  }
  if (!have_fmt) throw Error(ErrorCode::kFormat, "missing fmt chunk");
  if (!have_data) throw Error(ErrorCode::kFormat, "missing data chunk");
  if (rate != static_cast<uint32_t>(kSampleRateHz))
    throw Error(ErrorCode::kRateMismatch,
                std::to_string(rate) + " Hz (expected 16000 Hz)");

  const size_t frame_bytes = 2u * channels;
  const size_t frames = data.size() / frame_bytes;
  std::vector<int16_t> mono(frames);
  for (size_t f = 0; f < frames; ++f) {
    int64_t sum = 0;
    for (size_t c = 0; c < channels; ++c)
      sum += static_cast<int16_t>(read_u16(data, f * frame_bytes + 2 * c));
    mono[f] = channels == 1 ? static_cast<int16_t>(sum)
                            : saturate_i16(static_cast<double>(sum) / channels);
  }
  return canonicalize(std::move(mono));
}

AudioClip load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
  return decode_wav(bytes);
}

std::vector<uint8_t> encode_wav(const AudioClip& clip) {
  const auto data_bytes = static_cast<uint32_t>(clip.samples.size() * 2);
  std::vector<uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, kWaveFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<uint32_t>(clip.sample_rate_hz));
  put_u32(out, static_cast<uint32_t>(clip.sample_rate_hz) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (int16_t s : clip.samples) put_u16(out, static_cast<uint16_t>(s));
  return out;
}

void save_wav(const AudioClip& clip, const std::filesystem::path& path) {
  const auto bytes = encode_wav(clip);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

double rms(std::span<const int16_t> samples) {
  if (samples.empty()) return 0.0;
  double acc = 0.0;
  for (int16_t s : samples) acc += static_cast<double>(s) * s;
  return std::sqrt(acc / static_cast<double>(samples.size()));
}

double snr_gain(double signal_rms, double noise_rms, double snr_db) {
  return signal_rms / (noise_rms * std::pow(10.0, snr_db / 20.0));
}

AudioClip mix_at_snr(const AudioClip& signal, const AudioClip& noise,
                     double snr_db) {
  if (signal.samples.size() != noise.samples.size() ||
      signal.sample_rate_hz != noise.sample_rate_hz)
    throw Error(ErrorCode::kShape, "signal and noise differ in length or rate");
  const double noise_rms = rms(noise.samples);
  if (noise_rms <= 0.0) throw Error(ErrorCode::kDegenerate, "noise has zero RMS");
  const double signal_rms = rms(signal.samples);
  if (signal_rms <= 0.0)
    throw Error(ErrorCode::kDegenerate, "signal has zero RMS");

  const double g = snr_gain(signal_rms, noise_rms, snr_db);
  AudioClip out{std::vector<int16_t>(signal.samples.size()),
                signal.sample_rate_hz};
  for (size_t i = 0; i < out.samples.size(); ++i)
    out.samples[i] = saturate_i16(signal.samples[i] + g * noise.samples[i]);
  return out;
}

double sample_snr(std::mt19937_64& rng, const SnrSpec& spec) {
  if (!(spec.std_db >= 0.0))
    throw Error(ErrorCode::kParameter, "SNR std must be non-negative");
  std::normal_distribution<double> unit(0.0, 1.0);
  const double z = unit(rng);
  return spec.mean_db + spec.std_db * z;
}

std::vector<ManifestEntry> parse_manifest(const std::string& text,
                                          const std::filesystem::path& base) {
  std::vector<ManifestEntry> entries;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 == line.size())
      throw Error(ErrorCode::kFormat,
                  "manifest line " + std::to_string(line_no) +
                      ": expected <path>\\t<label>");
    entries.push_back({base / line.substr(0, tab), line.substr(tab + 1)});
  }
  return entries;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str(), path.parent_path());
}

}  // namespace kws
