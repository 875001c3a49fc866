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

#include "kws/model.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "kws/error.h"

namespace kws {
namespace {

[[noreturn]] void invalid(const std::string& what) {
  throw Error(ErrorCode::kValidation, what);
}

std::string layer_tag(size_t i, const LayerSpec& l) {
  return "layer " + std::to_string(i) + " (" + std::string(layer_kind_name(l.kind)) + ")";
}

class GraphBuilder {
 public:
  GraphBuilder(std::string name, const MfccConfig& config, InputLayout layout,
               uint64_t seed)
      : rng_(seed) {
    graph_.name = std::move(name);
    graph_.mfcc_config = config;
    graph_.norm_stats = NormStats::identity(config.n_mels);
    graph_.input_layout = layout;
    graph_.precision = Precision::kFloat32;
    graph_.labels = keyword_labels();
  }

  void add(LayerKind kind, LayerGeometry g) {
    LayerSpec layer;
    layer.kind = kind;
    layer.geometry = g;
    if (has_weights(kind)) {
      const size_t n_w = layer.weight_count();
      const size_t fan_in = n_w / static_cast<size_t>(g.out_channels);
      const double std_w = std::sqrt((g.relu ? 2.0 : 1.0) / static_cast<double>(fan_in));
      std::normal_distribution<double> wdist(0.0, std_w);
      std::normal_distribution<double> bdist(0.0, 0.05);
      FloatParams p;
      p.weights.resize(n_w);
      p.bias.resize(layer.bias_count());
      for (float& w : p.weights) w = static_cast<float>(wdist(rng_));
      for (float& b : p.bias) b = static_cast<float>(bdist(rng_));
      layer.float_params = std::move(p);
    }
    graph_.layers.push_back(std::move(layer));
  }

  void add(LayerKind kind) { add(kind, LayerGeometry{}); }

  ModelGraph finish() {
    validate_graph(graph_);
    return std::move(graph_);
  }

 private:
  ModelGraph graph_;
  std::mt19937_64 rng_;
};

LayerGeometry pointwise(int in, int out, bool relu) {
  LayerGeometry g;
  g.in_channels = in;
  g.out_channels = out;
  g.relu = relu;
  return g;
}

LayerGeometry depthwise1d(int channels, int kernel) {
  LayerGeometry g;
  g.in_channels = channels;
  g.out_channels = channels;
  g.kernel_w = kernel;
  g.relu = true;
  return g;
}

void check_float(const LayerSpec& l, size_t i) {
  if (!l.float_params) invalid(layer_tag(i, l) + ": missing float parameters");
  if (l.float_params->weights.size() != l.weight_count() ||
      l.float_params->bias.size() != l.bias_count())
    invalid(layer_tag(i, l) + ": parameter sizes do not match geometry");
  if (l.batch_norm) {
    const auto n = static_cast<size_t>(l.geometry.out_channels);
    const auto& bn = *l.batch_norm;
    if (bn.gamma.size() != n || bn.beta.size() != n || bn.mean.size() != n ||
        bn.var.size() != n)
      invalid(layer_tag(i, l) + ": batch norm size mismatch");
  }
}

void check_quant(const QuantParams& q, const std::string& where) {
  if (!(q.scale > 0.0) || !std::isfinite(q.scale) || q.zero_point < -128 ||
      q.zero_point > 127)
    invalid(where + ": invalid quantization parameters");
}

void check_int8(const LayerSpec& l, size_t i) {
  const std::string tag = layer_tag(i, l);
  if (!l.qparams) invalid(tag + ": missing int8 parameters");
  const QLayerParams& p = *l.qparams;
  if (p.weights.size() != l.weight_count() || p.bias.size() != l.bias_count())
    invalid(tag + ": parameter sizes do not match geometry");
  if (p.requant.mantissa < (int32_t{1} << 30) || p.requant.shift < 0)
    invalid(tag + ": requant multiplier out of range");
  if (!(p.weight_scale > 0.0)) invalid(tag + ": non-positive weight scale");
  check_quant(p.output, tag);
  if (p.act_min < -128 || p.act_max > 127 || p.act_min > p.act_max)
    invalid(tag + ": activation range outside int8");
}

}  // namespace

std::string_view layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kPointwise: return "pointwise";
    case LayerKind::kDepthwise1d: return "depthwise1d";
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kDepthwise2d: return "depthwise2d";
    case LayerKind::kGap: return "gap";
    case LayerKind::kFc: return "fc";
    case LayerKind::kResidualBegin: return "residual_begin";
    case LayerKind::kResidualEnd: return "residual_end";
    case LayerKind::kSoftmax: return "softmax";
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (LayerKind k : {LayerKind::kPointwise, LayerKind::kDepthwise1d, LayerKind::kConv2d,
                      LayerKind::kDepthwise2d, LayerKind::kGap, LayerKind::kFc,
                      LayerKind::kResidualBegin, LayerKind::kResidualEnd,
                      LayerKind::kSoftmax})
    if (layer_kind_name(k) == name) return k;
  throw Error(ErrorCode::kFormat, "unknown layer kind '" + std::string(name) + "'");
}

bool has_weights(LayerKind kind) {
  switch (kind) {
    case LayerKind::kPointwise:
    case LayerKind::kDepthwise1d:
    case LayerKind::kConv2d:
    case LayerKind::kDepthwise2d:
    case LayerKind::kFc:
      return true;
    default:
      return false;
  }
}

std::string_view precision_name(Precision p) {
  return p == Precision::kFloat32 ? "float32" : "int8";
}

size_t LayerSpec::weight_count() const {
  const auto& g = geometry;
  const auto in = static_cast<size_t>(std::max(g.in_channels, 0));
  const auto out = static_cast<size_t>(std::max(g.out_channels, 0));
  const auto taps = static_cast<size_t>(std::max(g.kernel_h, 0)) *
                    static_cast<size_t>(std::max(g.kernel_w, 0));
  switch (kind) {
    case LayerKind::kPointwise:
    case LayerKind::kFc:
      return in * out;
    case LayerKind::kDepthwise1d:
      return out * static_cast<size_t>(std::max(g.kernel_w, 0));
    case LayerKind::kConv2d:
      return out * in * taps;
    case LayerKind::kDepthwise2d:
      return out * taps;
    default:
      return 0;
  }
}

size_t LayerSpec::bias_count() const {
  return has_weights(kind) ? static_cast<size_t>(std::max(geometry.out_channels, 0)) : 0;
}

const std::vector<std::string>& keyword_labels() {
  static const std::vector<std::string> labels{"yes",  "no",  "up", "down", "left",
                                               "right", "on", "off", "stop", "go"};
  return labels;
}

TkwsHyper default_tkws_hyper(int n_blocks) {
  TkwsHyper h;
  h.n_blocks = n_blocks;
  h.block_channels = n_blocks == 2 ? 12 : 32;
  return h;
}

ModelGraph build_tkws(const TkwsHyper& hyper, const MfccConfig& config, uint64_t seed) {
  validate(config);
  if (hyper.stem_channels < 1 || hyper.block_channels < 1 || hyper.expansion < 1 ||
      hyper.dw_kernel < 1 || (hyper.n_blocks != 2 && hyper.n_blocks != 3))
    throw Error(ErrorCode::kParameter, "invalid TKWS hyperparameters");
  if (hyper.dw_kernel > config.n_windows)
    throw Error(ErrorCode::kParameter, "dw_kernel longer than the sequence");

  GraphBuilder b("tkws" + std::to_string(hyper.n_blocks), config, InputLayout::kSequence,
                 seed);
  b.add(LayerKind::kPointwise, pointwise(config.n_mels, hyper.stem_channels, true));
  int channels = hyper.stem_channels;
  for (int i = 0; i < hyper.n_blocks; ++i) {
    const int mid = channels * hyper.expansion;
    const bool residual = channels == hyper.block_channels;
    if (residual) b.add(LayerKind::kResidualBegin);
    b.add(LayerKind::kPointwise, pointwise(channels, mid, true));
    b.add(LayerKind::kDepthwise1d, depthwise1d(mid, hyper.dw_kernel));
    b.add(LayerKind::kDepthwise1d, depthwise1d(mid, hyper.dw_kernel));
    b.add(LayerKind::kPointwise, pointwise(mid, hyper.block_channels, false));
    if (residual) b.add(LayerKind::kResidualEnd);
    channels = hyper.block_channels;
  }
  b.add(LayerKind::kGap);
  b.add(LayerKind::kFc, pointwise(channels, kNumClasses, false));
  b.add(LayerKind::kSoftmax);
  return b.finish();
}

ModelGraph build_dscnn(const MfccConfig& config, const DscnnHyper& hyper, uint64_t seed) {
  validate(config);
  if (hyper.channels < 1 || hyper.n_blocks < 1)
    throw Error(ErrorCode::kParameter, "invalid DS-CNN hyperparameters");
  GraphBuilder b("dscnn", config, InputLayout::kImage, seed);

  LayerGeometry first;
  first.in_channels = 1;
  first.out_channels = hyper.channels;
  first.kernel_h = hyper.first_kernel.h;
  first.kernel_w = hyper.first_kernel.w;
  first.stride_h = hyper.first_stride.h;
  first.stride_w = hyper.first_stride.w;
  first.relu = true;
  b.add(LayerKind::kConv2d, first);

  for (int i = 0; i < hyper.n_blocks; ++i) {
    LayerGeometry dw;
    dw.in_channels = hyper.channels;
    dw.out_channels = hyper.channels;
    dw.kernel_h = hyper.dw_kernel.h;
    dw.kernel_w = hyper.dw_kernel.w;
    dw.relu = true;
    b.add(LayerKind::kDepthwise2d, dw);
    b.add(LayerKind::kPointwise, pointwise(hyper.channels, hyper.channels, true));
  }
  b.add(LayerKind::kGap);
  b.add(LayerKind::kFc, pointwise(hyper.channels, kNumClasses, false));
  b.add(LayerKind::kSoftmax);
  return b.finish();
}

Shape input_shape(const ModelGraph& graph) {
  const int mels = graph.mfcc_config.n_mels;
  const int t = graph.mfcc_config.n_windows;
  return graph.input_layout == InputLayout::kSequence ? Shape{mels, t} : Shape{1, mels, t};
}

void validate_graph(const ModelGraph& graph) { (void)layer_output_shapes(graph); }

std::vector<Shape> layer_output_shapes(const ModelGraph& graph) {
  try {
    validate(graph.mfcc_config);
  } catch (const Error& e) {
    invalid(std::string("mfcc config: ") + e.what());
  }
  if (graph.labels != keyword_labels()) invalid("labels must be the 10 keywords in order");
  const auto mels = static_cast<size_t>(graph.mfcc_config.n_mels);
  if (graph.norm_stats.mean.size() != mels || graph.norm_stats.std.size() != mels)
    invalid("norm stats do not match n_mels");
  for (double s : graph.norm_stats.std)
    if (!(s > 0.0)) invalid("norm stats contain a non-positive std");
  if (graph.precision == Precision::kInt8) check_quant(graph.input_quant, "input");
  if (graph.layers.empty()) invalid("graph has no layers");

  std::vector<Shape> shapes;
  Shape cur = input_shape(graph);
  std::optional<Shape> open_residual;
  int gap_count = 0, fc_count = 0, softmax_count = 0;
  const size_t n = graph.layers.size();

  for (size_t i = 0; i < n; ++i) {
    const LayerSpec& l = graph.layers[i];
    const LayerGeometry& g = l.geometry;
    const std::string tag = layer_tag(i, l);
    if (softmax_count > 0) invalid(tag + ": layer after softmax");
    if (fc_count > 0 && l.kind != LayerKind::kSoftmax)
      invalid(tag + ": only softmax may follow fc");

    if (has_weights(l.kind)) {
      if (g.in_channels < 1 || g.out_channels < 1 || g.kernel_h < 1 || g.kernel_w < 1 ||
          g.stride_h < 1 || g.stride_w < 1)
        invalid(tag + ": non-positive geometry");
      if (graph.precision == Precision::kFloat32) check_float(l, i);
      else check_int8(l, i);
    }

    switch (l.kind) {
      case LayerKind::kPointwise:
        if (cur.size() < 2 || cur[0] != g.in_channels)
          invalid(tag + ": expects " + std::to_string(g.in_channels) + " input channels");
        if (g.kernel_h != 1 || g.kernel_w != 1 || g.stride_h != 1 || g.stride_w != 1)
          invalid(tag + ": pointwise must be 1x1, stride 1");
        cur[0] = g.out_channels;
        break;
      case LayerKind::kDepthwise1d:
        if (cur.size() != 2 || cur[0] != g.in_channels || g.in_channels != g.out_channels)
          invalid(tag + ": channel mismatch");
        if (g.kernel_h != 1 || g.stride_h != 1) invalid(tag + ": must be 1D");
        if (g.kernel_w > cur[1]) invalid(tag + ": kernel longer than sequence");
        cur[1] = same_padding(cur[1], g.kernel_w, g.stride_w).out;
        break;
      case LayerKind::kConv2d:
      case LayerKind::kDepthwise2d:
        if (cur.size() != 3 || cur[0] != g.in_channels)
          invalid(tag + ": expects (" + std::to_string(g.in_channels) + ", h, w) input");
        if (l.kind == LayerKind::kDepthwise2d && g.in_channels != g.out_channels)
          invalid(tag + ": depthwise needs equal channel counts");
        cur = {g.out_channels, same_padding(cur[1], g.kernel_h, g.stride_h).out,
               same_padding(cur[2], g.kernel_w, g.stride_w).out};
        break;
      case LayerKind::kGap:
        if (++gap_count > 1) invalid(tag + ": more than one gap");
        if (open_residual) invalid(tag + ": gap inside a residual block");
        if (cur.size() < 2) invalid(tag + ": needs a (c, ...) input");
        cur = {cur[0], 1};
        break;
      case LayerKind::kFc:
        if (gap_count == 0) invalid(tag + ": fc before gap");
        if (++fc_count > 1) invalid(tag + ": more than one fc");
        if (static_cast<size_t>(g.in_channels) != element_count(cur))
          invalid(tag + ": input length mismatch");
        if (g.out_channels != kNumClasses) invalid(tag + ": must produce 10 classes");
        cur = {g.out_channels};
        break;
      case LayerKind::kResidualBegin:
        if (open_residual) invalid(tag + ": nested residual block");
        open_residual = cur;
        break;
      case LayerKind::kResidualEnd:
        if (!open_residual) invalid(tag + ": residual_end without residual_begin");
        if (*open_residual != cur) invalid(tag + ": residual shapes differ");
        open_residual.reset();
        if (graph.precision == Precision::kInt8) {
          if (!l.output_quant) invalid(tag + ": missing output quantization");
          check_quant(*l.output_quant, tag);
        }
        break;
      case LayerKind::kSoftmax:
        if (fc_count == 0) invalid(tag + ": softmax must follow fc");
        ++softmax_count;
        break;
    }
    shapes.push_back(cur);
  }
  if (gap_count != 1 || fc_count != 1) invalid("graph needs exactly one gap and one fc");
  if (graph.layers.back().kind != LayerKind::kSoftmax) invalid("graph must end in softmax");
  if (open_residual) invalid("unterminated residual block");
  return shapes;
}

FTensor feature_tensor(const ModelGraph& graph, const FeatureMap& features,
                       FeatureState state) {
  if (features.rows() != graph.mfcc_config.n_mels ||
      features.cols() != graph.mfcc_config.n_windows ||
      features.data.size() != static_cast<size_t>(features.rows()) * features.cols())
    throw Error(ErrorCode::kShape, "features " + features.config.label() +
                                       " do not match model " +
                                       graph.mfcc_config.label());
  const FeatureMap src =
      state == FeatureState::kRaw ? normalize(features, graph.norm_stats) : features;
  FTensor t{input_shape(graph), std::vector<float>(src.data.size())};
  std::transform(src.data.begin(), src.data.end(), t.data.begin(),
                 [](double v) { return static_cast<float>(v); });
  return t;
}

namespace {

void apply_batch_norm(FTensor& x, const BatchNorm& bn, bool relu) {
  const size_t n = x.inner_size();
  for (int c = 0; c < x.channels(); ++c) {
    const float k = bn.gamma[c] / std::sqrt(bn.var[c] + bn.eps);
    for (size_t i = 0; i < n; ++i) {
      float& v = x.data[c * n + i];
      v = k * (v - bn.mean[c]) + bn.beta[c];
      if (relu) v = std::max(v, 0.0f);
    }
  }
}

FTensor run_float_layer(const LayerSpec& l, const FTensor& x) {
  const LayerGeometry& g = l.geometry;
  const bool relu_in_kernel = g.relu && !l.batch_norm;
  FTensor y;
  switch (l.kind) {
    case LayerKind::kPointwise:
      y = fp::conv_pointwise(x, l.float_params->weights, l.float_params->bias,
                             g.out_channels, relu_in_kernel);
      break;
    case LayerKind::kDepthwise1d:
      y = fp::conv1d_depthwise(x, l.float_params->weights, l.float_params->bias,
                               g.kernel_w, g.stride_w, relu_in_kernel);
      break;
    case LayerKind::kConv2d:
    case LayerKind::kDepthwise2d:
      y = fp::conv2d(x, l.float_params->weights, l.float_params->bias,
                     {g.kernel_h, g.kernel_w}, {g.stride_h, g.stride_w},
                     l.kind == LayerKind::kDepthwise2d, relu_in_kernel);
      break;
    case LayerKind::kFc:
      y = fp::fully_connected(x, l.float_params->weights, l.float_params->bias,
                              g.out_channels);
      break;
    case LayerKind::kGap:
      return fp::global_avg_pool(x);
    default:
      return x;
  }
  if (l.batch_norm) apply_batch_norm(y, *l.batch_norm, g.relu);
  return y;
}

std::vector<double> infer_int8(const ModelGraph& graph, const FTensor& input) {
  QTensor x = quantize(input, graph.input_quant);
  QTensor saved;
  for (const LayerSpec& l : graph.layers) {
    const LayerGeometry& g = l.geometry;
    switch (l.kind) {
      case LayerKind::kPointwise:
        x = conv_pointwise(x, *l.qparams, g.out_channels);
        break;
      case LayerKind::kDepthwise1d:
        x = conv1d_depthwise(x, *l.qparams, g.kernel_w, g.stride_w);
        break;
      case LayerKind::kConv2d:
      case LayerKind::kDepthwise2d:
        x = conv2d(x, *l.qparams, {g.kernel_h, g.kernel_w}, {g.stride_h, g.stride_w},
                   l.kind == LayerKind::kDepthwise2d);
        break;
      case LayerKind::kGap:
        x = global_avg_pool(x);
        break;
      case LayerKind::kFc:
        x = fully_connected(x, *l.qparams, g.out_channels);
        break;
      case LayerKind::kResidualBegin:
        saved = x;
        break;
      case LayerKind::kResidualEnd:
        x = residual_add(saved, x, *l.output_quant);
        break;
      case LayerKind::kSoftmax: {
        std::vector<double> logits(x.data.size());
        for (size_t i = 0; i < logits.size(); ++i)
          logits[i] = dequantize_value(x.data[i], x.quant);
        return softmax(logits);
      }
    }
  }
  invalid("graph ended without softmax");
}

}  // namespace

std::vector<FTensor> float_trace(const ModelGraph& graph, const FTensor& input) {
  if (graph.precision != Precision::kFloat32)
    throw Error(ErrorCode::kArgument, "float_trace needs a float32 graph");
  std::vector<FTensor> edges;
  edges.reserve(graph.layers.size() + 1);
  edges.push_back(input);
  FTensor saved;
  for (const LayerSpec& l : graph.layers) {
    const FTensor& x = edges.back();
    switch (l.kind) {
      case LayerKind::kResidualBegin:
        saved = x;
        edges.push_back(x);
        break;
      case LayerKind::kResidualEnd:
        edges.push_back(fp::residual_add(saved, x));
        break;
      case LayerKind::kSoftmax: {
        std::vector<double> logits(x.data.begin(), x.data.end());
        const auto probs = softmax(logits);
        edges.push_back(FTensor{x.shape, std::vector<float>(probs.begin(), probs.end())});
        break;
      }
      default:
        edges.push_back(run_float_layer(l, x));
    }
  }
  return edges;
}

std::vector<double> infer_tensor(const ModelGraph& graph, const FTensor& input) {
  validate_graph(graph);
  if (input.shape != input_shape(graph) || input.data.size() != element_count(input.shape))
    throw Error(ErrorCode::kShape, "input tensor does not match the model input");
  if (graph.precision == Precision::kInt8) return infer_int8(graph, input);

  // Softmax in double on the float logits rather than the float trace's
  // rounded probabilities.
  const auto edges = float_trace(graph, input);
  const FTensor& logits = edges[edges.size() - 2];
  return softmax(std::vector<double>(logits.data.begin(), logits.data.end()));
}

std::vector<double> infer(const ModelGraph& graph, const FeatureMap& features,
                          FeatureState state) {
  return infer_tensor(graph, feature_tensor(graph, features, state));
}

Prediction predict(std::span<const double> probs, const std::vector<std::string>& labels) {
  if (probs.empty()) throw Error(ErrorCode::kArgument, "empty probability vector");
  size_t best = 0;
  for (size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  Prediction p;
  p.index = static_cast<int>(best);
  p.label = best < labels.size() ? labels[best] : std::to_string(best);
  p.confidence = probs[best];
  return p;
}

}  // namespace kws
