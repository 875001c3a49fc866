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

#ifndef KWS_MODEL_H_
#define KWS_MODEL_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kws/frontend.h"
#include "kws/tensor.h"

namespace kws {

enum class LayerKind {
  kPointwise,
  kDepthwise1d,
  kConv2d,
  kDepthwise2d,
  kGap,
  kFc,
  kResidualBegin,
  kResidualEnd,
  kSoftmax,
};

std::string_view layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);
bool has_weights(LayerKind kind);

// For fc, in_channels is the flattened input length. 1D kernels use the
// width fields.
struct LayerGeometry {
  int in_channels = 0;
  int out_channels = 0;
  int kernel_h = 1;
  int kernel_w = 1;
  int stride_h = 1;
  int stride_w = 1;
  bool relu = false;

  bool operator==(const LayerGeometry&) const = default;
};

struct FloatParams {
  std::vector<float> weights;
  std::vector<float> bias;
};

// Per-output-channel batch norm carried by float graphs until it is folded.
struct BatchNorm {
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> mean;
  std::vector<float> var;
  float eps = 1e-3f;
};

struct LayerSpec {
  LayerKind kind = LayerKind::kPointwise;
  LayerGeometry geometry;
  std::optional<FloatParams> float_params;  // float32 graphs
  std::optional<BatchNorm> batch_norm;      // float32 graphs, optional
  std::optional<QLayerParams> qparams;      // int8 graphs
  std::optional<QuantParams> output_quant;  // int8 residual_end

  // Element counts implied by the geometry.
  size_t weight_count() const;
  size_t bias_count() const;
};

enum class Precision { kFloat32, kInt8 };
enum class InputLayout { kSequence, kImage };

std::string_view precision_name(Precision p);

// Float graphs (Precision::kFloat32) carry FloatParams and are the input to
// post-training quantization; int8 graphs carry QLayerParams and run on the
// integer kernels.
struct ModelGraph {
  std::string name;
  MfccConfig mfcc_config;
  NormStats norm_stats;
  InputLayout input_layout = InputLayout::kSequence;
  Precision precision = Precision::kFloat32;
  QuantParams input_quant;  // int8 only
  std::vector<LayerSpec> layers;
  std::vector<std::string> labels;
};

using FloatGraph = ModelGraph;

// yes, no, up, down, left, right, on, off, stop, go.
const std::vector<std::string>& keyword_labels();
inline constexpr int kNumClasses = 10;

struct TkwsHyper {
  int stem_channels = 32;
  int block_channels = 32;
  int expansion = 2;
  int dw_kernel = 3;
  int n_blocks = 3;
};

// Defaults sized to the reference parameter budgets: TKWS-3 about 14.4k and
// TKWS-2 about 4.6k at 15 mels.
TkwsHyper default_tkws_hyper(int n_blocks);

struct DscnnHyper {
  int channels = 96;
  int n_blocks = 4;
  Kernel2d first_kernel{10, 4};
  Stride2d first_stride{2, 2};
  Kernel2d dw_kernel{3, 3};
};

inline constexpr uint64_t kDefaultInitSeed = 20250101;

// Both builders return float32 graphs with seeded He-normal weights, identity
// norm stats and the keyword labels.
ModelGraph build_tkws(const TkwsHyper& hyper, const MfccConfig& config,
                      uint64_t seed = kDefaultInitSeed);
ModelGraph build_dscnn(const MfccConfig& config, const DscnnHyper& hyper = {},
                       uint64_t seed = kDefaultInitSeed);

// Throws Error(kValidation) naming the first violated invariant.
void validate_graph(const ModelGraph& graph);

Shape input_shape(const ModelGraph& graph);
// Output shape of every layer (softmax keeps the fc shape). Validates first.
std::vector<Shape> layer_output_shapes(const ModelGraph& graph);

enum class FeatureState { kNormalized, kRaw };

// Feature map laid out per the graph's input layout.
FTensor feature_tensor(const ModelGraph& graph, const FeatureMap& features,
                       FeatureState state);

// Class probabilities. Float graphs run the float kernels, int8 graphs the
// integer kernels with dequantized logits.
std::vector<double> infer(const ModelGraph& graph, const FeatureMap& features,
                          FeatureState state = FeatureState::kNormalized);
std::vector<double> infer_tensor(const ModelGraph& graph, const FTensor& input);

// Float execution that records every activation edge: entry 0 is the input,
// entry i + 1 the output of layer i.
std::vector<FTensor> float_trace(const ModelGraph& graph, const FTensor& input);

struct Prediction {
  int index = 0;
  std::string label;
  double confidence = 0.0;
};

// Argmax with lowest-index tie-breaking.
Prediction predict(std::span<const double> probs,
                   const std::vector<std::string>& labels = keyword_labels());

}  // namespace kws

#endif  // KWS_MODEL_H_
