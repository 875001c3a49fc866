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

#include "kws/kwsm.h"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "kws/error.h"

namespace kws {
namespace {

using nlohmann::json;

constexpr size_t kAlign = 16;
constexpr size_t kPreambleSize = 4 + 2 + 4;

size_t align_up(size_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

template <typename T>
void put_le(std::vector<uint8_t>& out, T value) {
  using U = std::make_unsigned_t<
      std::conditional_t<std::is_floating_point_v<T>,
                         std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>, T>>;
  U bits;
  std::memcpy(&bits, &value, sizeof bits);
  for (size_t i = 0; i < sizeof bits; ++i)
    out.push_back(static_cast<uint8_t>(bits >> (8 * i)));
}

template <typename T>
T get_le(std::span<const uint8_t> in, size_t at) {
  using U = std::make_unsigned_t<
      std::conditional_t<std::is_floating_point_v<T>,
                         std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>, T>>;
  U bits = 0;
  for (size_t i = 0; i < sizeof bits; ++i) bits |= static_cast<U>(in[at + i]) << (8 * i);
  T value;
  std::memcpy(&value, &bits, sizeof value);
  return value;
}

template <typename T>
const char* dtype_of() {
  if constexpr (std::is_same_v<T, float>) return "f32";
  else if constexpr (std::is_same_v<T, int8_t>) return "i8";
  else return "i32";
}

size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32" || dtype == "i32") return 4;
  if (dtype == "i8") return 1;
  throw Error(ErrorCode::kFormat, "unknown blob dtype '" + dtype + "'");
}

uint32_t crc32_of(std::span<const uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  size_t done = 0;
  while (done < bytes.size()) {
    const size_t n = std::min<size_t>(bytes.size() - done, 1u << 30);
    crc = crc32(crc, bytes.data() + done, static_cast<uInt>(n));
    done += n;
  }
  return static_cast<uint32_t>(crc);
}

class BlobWriter {
 public:
  template <typename T>
  int add(const std::vector<T>& values) {
    KwsmBlob blob;
    blob.dtype = dtype_of<T>();
    blob.count = values.size();
    for (T v : values) put_le(blob.bytes, v);
    blobs_.push_back(std::move(blob));
    return static_cast<int>(blobs_.size() - 1);
  }
  std::vector<KwsmBlob> take() { return std::move(blobs_); }

 private:
  std::vector<KwsmBlob> blobs_;
};

class BlobReader {
 public:
  explicit BlobReader(const std::vector<KwsmBlob>& blobs) : blobs_(blobs) {}

  template <typename T>
  std::vector<T> get(const json& index) const {
    const auto i = index.get<size_t>();
    if (i >= blobs_.size()) throw Error(ErrorCode::kFormat, "blob index out of range");
    const KwsmBlob& b = blobs_[i];
    if (b.dtype != dtype_of<T>())
      throw Error(ErrorCode::kFormat, "blob " + std::to_string(i) + " has dtype " + b.dtype);
    std::vector<T> out(b.count);
    for (size_t k = 0; k < b.count; ++k) out[k] = get_le<T>(b.bytes, k * sizeof(T));
    return out;
  }

 private:
  const std::vector<KwsmBlob>& blobs_;
};

json quant_json(const QuantParams& q) {
  return {{"scale", q.scale}, {"zero_point", q.zero_point}};
}

QuantParams quant_from(const json& j) {
  return {j.at("scale").get<double>(), j.at("zero_point").get<int32_t>()};
}

json layer_json(const LayerSpec& l, BlobWriter& blobs) {
  const LayerGeometry& g = l.geometry;
  json j = {{"kind", std::string(layer_kind_name(l.kind))},
            {"in_channels", g.in_channels},
            {"out_channels", g.out_channels},
            {"kernel", {g.kernel_h, g.kernel_w}},
            {"stride", {g.stride_h, g.stride_w}},
            {"relu", g.relu}};
  if (l.float_params) {
    j["weights"] = blobs.add(l.float_params->weights);
    j["bias"] = blobs.add(l.float_params->bias);
  }
  if (l.batch_norm) {
    j["batch_norm"] = {{"gamma", blobs.add(l.batch_norm->gamma)},
                       {"beta", blobs.add(l.batch_norm->beta)},
                       {"mean", blobs.add(l.batch_norm->mean)},
                       {"var", blobs.add(l.batch_norm->var)},
                       {"eps", l.batch_norm->eps}};
  }
  if (l.qparams) {
    const QLayerParams& p = *l.qparams;
    j["weights"] = blobs.add(p.weights);
    j["bias"] = blobs.add(p.bias);
    j["weight_scale"] = p.weight_scale;
    j["requant"] = {{"mantissa", p.requant.mantissa}, {"shift", p.requant.shift}};
    j["output"] = quant_json(p.output);
    j["act_range"] = {p.act_min, p.act_max};
  }
  if (l.output_quant) j["output"] = quant_json(*l.output_quant);
  return j;
}

LayerSpec layer_from(const json& j, Precision precision, const BlobReader& blobs) {
  LayerSpec l;
  l.kind = parse_layer_kind(j.at("kind").get<std::string>());
  LayerGeometry& g = l.geometry;
  g.in_channels = j.at("in_channels").get<int>();
  g.out_channels = j.at("out_channels").get<int>();
  g.kernel_h = j.at("kernel").at(0).get<int>();
  g.kernel_w = j.at("kernel").at(1).get<int>();
  g.stride_h = j.at("stride").at(0).get<int>();
  g.stride_w = j.at("stride").at(1).get<int>();
  g.relu = j.at("relu").get<bool>();

  const bool weighted = j.contains("weights");
  if (precision == Precision::kFloat32) {
    if (weighted)
      l.float_params = FloatParams{blobs.get<float>(j.at("weights")),
                                   blobs.get<float>(j.at("bias"))};
    if (j.contains("batch_norm")) {
      const json& bn = j.at("batch_norm");
      l.batch_norm = BatchNorm{blobs.get<float>(bn.at("gamma")), blobs.get<float>(bn.at("beta")),
                               blobs.get<float>(bn.at("mean")), blobs.get<float>(bn.at("var")),
                               bn.at("eps").get<float>()};
    }
  } else if (weighted) {
    QLayerParams p;
    p.weights = blobs.get<int8_t>(j.at("weights"));
    p.bias = blobs.get<int32_t>(j.at("bias"));
    p.weight_scale = j.at("weight_scale").get<double>();
    p.requant = {j.at("requant").at("mantissa").get<int32_t>(),
                 j.at("requant").at("shift").get<int32_t>()};
    p.output = quant_from(j.at("output"));
    p.act_min = j.at("act_range").at(0).get<int32_t>();
    p.act_max = j.at("act_range").at(1).get<int32_t>();
    l.qparams = std::move(p);
  } else if (j.contains("output")) {
    l.output_quant = quant_from(j.at("output"));
  }
  return l;
}

}  // namespace

std::vector<uint8_t> encode_container(const KwsmContainer& container) {
  json header = container.header;
  json table = json::array();
  size_t offset = 0;
  for (const KwsmBlob& b : container.blobs) {
    if (b.bytes.size() != b.count * dtype_size(b.dtype))
      throw Error(ErrorCode::kArgument, "blob byte size does not match its count");
    table.push_back({{"dtype", b.dtype}, {"count", b.count}, {"offset", offset}});
    offset = align_up(offset + b.bytes.size());
  }
  header["blobs"] = std::move(table);
  const std::string text = header.dump();

  std::vector<uint8_t> out{'K', 'W', 'S', 'M'};
  put_le<uint16_t>(out, kModelFormatVersion);
  put_le<uint32_t>(out, static_cast<uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const KwsmBlob& b : container.blobs) {
    out.resize(align_up(out.size()), 0);
    out.insert(out.end(), b.bytes.begin(), b.bytes.end());
  }
  put_le<uint32_t>(out, crc32_of(out));
  return out;
}

KwsmContainer decode_container(std::span<const uint8_t> bytes) {
  if (bytes.size() < kPreambleSize + 4)
    throw Error(ErrorCode::kCorruption, "file too short to be a KWSM model");
  if (std::memcmp(bytes.data(), "KWSM", 4) != 0)
    throw Error(ErrorCode::kFormat, "bad magic; not a KWSM model");
  const auto version = get_le<uint16_t>(bytes, 4);
  if (version != kModelFormatVersion)
    throw Error(ErrorCode::kFormat, "unsupported KWSM version " + std::to_string(version));
  const size_t body = bytes.size() - 4;
  if (crc32_of(bytes.first(body)) != get_le<uint32_t>(bytes, body))
    throw Error(ErrorCode::kCorruption, "CRC32 mismatch");

  const auto header_len = get_le<uint32_t>(bytes, 6);
  if (header_len > body - kPreambleSize)
    throw Error(ErrorCode::kCorruption, "header length exceeds file");
  KwsmContainer c;
  try {
    c.header = json::parse(bytes.begin() + kPreambleSize,
                           bytes.begin() + static_cast<std::ptrdiff_t>(kPreambleSize + header_len));
    const size_t base = align_up(kPreambleSize + header_len);
    for (const json& entry : c.header.at("blobs")) {
      KwsmBlob b;
      b.dtype = entry.at("dtype").get<std::string>();
      b.count = entry.at("count").get<size_t>();
      const size_t start = base + entry.at("offset").get<size_t>();
      const size_t len = b.count * dtype_size(b.dtype);
      if (start % kAlign != 0) throw Error(ErrorCode::kFormat, "misaligned blob");
      if (start > body || len > body - start)
        throw Error(ErrorCode::kCorruption, "blob extends past end of file");
      b.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                     bytes.begin() + static_cast<std::ptrdiff_t>(start + len));
      c.blobs.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("malformed KWSM header: ") + e.what());
  }
  return c;
}

std::vector<uint8_t> encode_model(const ModelGraph& graph) {
  validate_graph(graph);
  BlobWriter blobs;
  json layers = json::array();
  for (const LayerSpec& l : graph.layers) layers.push_back(layer_json(l, blobs));

  const MfccConfig& m = graph.mfcc_config;
  KwsmContainer c;
  c.header = {
      {"name", graph.name},
      {"precision", std::string(precision_name(graph.precision))},
      {"float32", graph.precision == Precision::kFloat32},
      {"input_layout", graph.input_layout == InputLayout::kSequence ? "sequence" : "image"},
      {"mfcc",
       {{"n_mels", m.n_mels},
        {"n_windows", m.n_windows},
        {"fft_size", m.fft_size},
        {"fmin_hz", m.fmin_hz},
        {"fmax_hz", m.fmax_hz}}},
      {"norm_stats", {{"mean", graph.norm_stats.mean}, {"std", graph.norm_stats.std}}},
      {"labels", graph.labels},
      {"layers", std::move(layers)},
  };
  if (graph.precision == Precision::kInt8) c.header["input_quant"] = quant_json(graph.input_quant);
  c.blobs = blobs.take();
  return encode_container(c);
}

ModelGraph decode_model(std::span<const uint8_t> bytes) {
  const KwsmContainer c = decode_container(bytes);
  const BlobReader blobs(c.blobs);
  ModelGraph g;
  try {
    const json& h = c.header;
    g.name = h.at("name").get<std::string>();
    const auto precision = h.at("precision").get<std::string>();
    if (precision == "float32") g.precision = Precision::kFloat32;
    else if (precision == "int8") g.precision = Precision::kInt8;
    else throw Error(ErrorCode::kFormat, "unknown precision '" + precision + "'");
    if (h.at("float32").get<bool>() != (g.precision == Precision::kFloat32))
      throw Error(ErrorCode::kFormat, "float32 flag disagrees with precision");
    const auto layout = h.at("input_layout").get<std::string>();
    if (layout != "sequence" && layout != "image")
      throw Error(ErrorCode::kFormat, "unknown input layout '" + layout + "'");
    g.input_layout = layout == "sequence" ? InputLayout::kSequence : InputLayout::kImage;
    const json& m = h.at("mfcc");
    g.mfcc_config.n_mels = m.at("n_mels").get<int>();
    g.mfcc_config.n_windows = m.at("n_windows").get<int>();
    g.mfcc_config.fft_size = m.at("fft_size").get<int>();
    g.mfcc_config.fmin_hz = m.at("fmin_hz").get<double>();
    g.mfcc_config.fmax_hz = m.at("fmax_hz").get<double>();
    g.norm_stats.mean = h.at("norm_stats").at("mean").get<std::vector<double>>();
    g.norm_stats.std = h.at("norm_stats").at("std").get<std::vector<double>>();
    g.labels = h.at("labels").get<std::vector<std::string>>();
    if (g.precision == Precision::kInt8) g.input_quant = quant_from(h.at("input_quant"));
    for (const json& l : h.at("layers")) g.layers.push_back(layer_from(l, g.precision, blobs));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kFormat, std::string("malformed KWSM header: ") + e.what());
  }
  validate_graph(g);
  return g;
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return std::vector<uint8_t>((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path.string());
}

void save_model(const ModelGraph& graph, const std::filesystem::path& path) {
  write_file(path, encode_model(graph));
}

ModelGraph load_model(const std::filesystem::path& path) {
  return decode_model(read_file(path));
}

}  // namespace kws
