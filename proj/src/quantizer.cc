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

#include "kws/quantizer.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "kws/error.h"

namespace kws {
namespace {

// Largest multiplier quantize_multiplier accepts with headroom for rounding.
constexpr double kMaxMultiplier = 1.0 - 1.0 / (1 << 20);

bool records_edge(LayerKind kind) {
  return kind != LayerKind::kResidualBegin && kind != LayerKind::kSoftmax;
}

struct RawRange {
  double min = std::numeric_limits<double>::infinity();
  double max = -std::numeric_limits<double>::infinity();

  void observe(const FTensor& t) {
    for (float v : t.data) {
      min = std::min(min, static_cast<double>(v));
      max = std::max(max, static_cast<double>(v));
    }
  }
};

QuantParams affine_with_min_scale(const ActivationRange& range, double min_scale) {
  const double lo = std::min(range.min, 0.0);
  const double hi = std::max(range.max, 0.0);
  QuantParams q;
  q.scale = std::max((hi - lo) / 255.0, min_scale);
  if (!(q.scale > 0.0)) q.scale = kRangeEpsilon;
  q.zero_point = static_cast<int32_t>(
      std::clamp<int64_t>(round_half_away(-128.0 - lo / q.scale), -128, 127));
  return q;
}

}  // namespace

ActivationRange widen(const ActivationRange& observed) {
  const double margin =
      std::max(kCalibrationMargin * (observed.max - observed.min), kRangeEpsilon);
  return {observed.min - margin, observed.max + margin};
}

CalibrationRanges calibrate(const FloatGraph& graph, std::span<const FeatureMap> cal) {
  if (graph.precision != Precision::kFloat32)
    throw Error(ErrorCode::kCalibration, "calibration needs a float32 graph");
  if (cal.empty()) throw Error(ErrorCode::kCalibration, "empty calibration set");
  validate_graph(graph);

  std::vector<RawRange> raw(graph.layers.size() + 1);
  for (size_t s = 0; s < cal.size(); ++s) {
    const FeatureMap& fm = cal[s];
    if (fm.rows() != graph.mfcc_config.n_mels || fm.cols() != graph.mfcc_config.n_windows)
      throw Error(ErrorCode::kCalibration,
                  "calibration map " + std::to_string(s) + " is " + fm.config.label() +
                      ", model expects " + graph.mfcc_config.label());
    const auto edges =
        float_trace(graph, feature_tensor(graph, fm, FeatureState::kNormalized));
    for (size_t e = 0; e < edges.size(); ++e) raw[e].observe(edges[e]);
  }

  CalibrationRanges out;
  out.input = widen({raw[0].min, raw[0].max});
  out.layer_outputs.resize(graph.layers.size());
  for (size_t i = 0; i < graph.layers.size(); ++i)
    if (records_edge(graph.layers[i].kind))
      out.layer_outputs[i] = widen({raw[i + 1].min, raw[i + 1].max});
  return out;
}

QuantParams affine_params(const ActivationRange& range) {
  return affine_with_min_scale(range, 0.0);
}

QuantizedWeights quantize_weights(std::span<const float> weights) {
  double peak = 0.0;
  for (float w : weights) peak = std::max(peak, std::abs(static_cast<double>(w)));
  QuantizedWeights q;
  q.scale = std::max(peak / 127.0, kWeightScaleFloor);
  q.values.resize(weights.size());
  for (size_t i = 0; i < weights.size(); ++i)
    q.values[i] = static_cast<int8_t>(
        std::clamp<int64_t>(round_half_away(weights[i] / q.scale), -127, 127));
  return q;
}

void fold_batch_norm(LayerSpec& layer) {
  if (!layer.batch_norm) return;
  if (!layer.float_params)
    throw Error(ErrorCode::kArgument, "batch norm on a layer without float weights");
  const BatchNorm& bn = *layer.batch_norm;
  FloatParams& p = *layer.float_params;
  const size_t out = p.bias.size();
  const size_t per_channel = p.weights.size() / out;
  for (size_t c = 0; c < out; ++c) {
    const double k = bn.gamma[c] / std::sqrt(static_cast<double>(bn.var[c]) + bn.eps);
    for (size_t i = 0; i < per_channel; ++i)
      p.weights[c * per_channel + i] = static_cast<float>(p.weights[c * per_channel + i] * k);
    p.bias[c] = static_cast<float>((p.bias[c] - bn.mean[c]) * k + bn.beta[c]);
  }
  layer.batch_norm.reset();
}

std::vector<FeatureMap> synthetic_feature_maps(const MfccConfig& config, int count,
                                               uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<FeatureMap> maps;
  maps.reserve(static_cast<size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) {
    FeatureMap fm(config);
    for (double& v : fm.data) v = unit(rng);
    maps.push_back(std::move(fm));
  }
  return maps;
}

ModelGraph quantize_graph(const FloatGraph& graph, const CalibrationRanges& ranges) {
  if (graph.precision != Precision::kFloat32)
    throw Error(ErrorCode::kArgument, "quantize_graph needs a float32 graph");
  validate_graph(graph);
  if (ranges.layer_outputs.size() != graph.layers.size())
    throw Error(ErrorCode::kCalibration, "ranges do not cover the graph");

  ModelGraph q = graph;
  q.precision = Precision::kInt8;
  QuantParams current = affine_params(ranges.input);
  q.input_quant = current;

  for (size_t i = 0; i < q.layers.size(); ++i) {
    LayerSpec& l = q.layers[i];
    const auto& range = ranges.layer_outputs[i];
    if (records_edge(l.kind) && l.kind != LayerKind::kGap && !range)
      throw Error(ErrorCode::kCalibration, "missing range for layer " + std::to_string(i));

    if (has_weights(l.kind)) {
      fold_batch_norm(l);
      const FloatParams& fp = *l.float_params;
      const QuantizedWeights qw = quantize_weights(fp.weights);
      const double bias_scale = current.scale * qw.scale;
      const QuantParams out = affine_with_min_scale(*range, bias_scale / kMaxMultiplier);

      QLayerParams p;
      p.weights = qw.values;
      p.weight_scale = qw.scale;
      p.bias.resize(fp.bias.size());
      for (size_t k = 0; k < fp.bias.size(); ++k)
        p.bias[k] = static_cast<int32_t>(std::clamp<int64_t>(
            round_half_away(std::clamp(fp.bias[k] / bias_scale, -3e9, 3e9)),
            std::numeric_limits<int32_t>::min(), std::numeric_limits<int32_t>::max()));
      p.requant = quantize_multiplier(bias_scale / out.scale);
      p.output = out;
      p.act_min = l.geometry.relu ? out.zero_point : -128;
      p.act_max = 127;
      l.qparams = std::move(p);
      l.float_params.reset();
      current = out;
    } else if (l.kind == LayerKind::kResidualEnd) {
      l.output_quant = affine_params(*range);
      current = *l.output_quant;
    }
    // gap keeps its input quantization; softmax runs in float.
  }
  validate_graph(q);
  return q;
}

}  // namespace kws
