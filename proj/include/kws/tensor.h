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

#ifndef KWS_TENSOR_H_
#define KWS_TENSOR_H_

#include <cstdint>
#include <span>
#include <vector>

namespace kws {

// Affine int8 encoding: real = scale * (q - zero_point).
struct QuantParams {
  double scale = 1.0;
  int32_t zero_point = 0;

  bool operator==(const QuantParams&) const = default;
};

// Channel-first shapes: (c, t) for sequences, (c, h, w) for images, (n) for
// vectors.
using Shape = std::vector<int>;

size_t element_count(const Shape& shape);

struct QTensor {
  Shape shape;
  std::vector<int8_t> data;
  QuantParams quant;

  int channels() const { return shape.empty() ? 0 : shape[0]; }
  // Elements per channel.
  size_t inner_size() const;
};

struct FTensor {
  Shape shape;
  std::vector<float> data;

  int channels() const { return shape.empty() ? 0 : shape[0]; }
  size_t inner_size() const;
};

int8_t quantize_value(double real, const QuantParams& q);
double dequantize_value(int8_t q, const QuantParams& p);
QTensor quantize(const FTensor& x, const QuantParams& q);
FTensor dequantize(const QTensor& x);

// Rounds to nearest, ties away from zero.
int64_t round_half_away(double v);

// Fixed-point multiplier: real = mantissa * 2^-31 * 2^-shift.
struct Requant {
  int32_t mantissa = 0;
  int32_t shift = 0;

  double real() const;
  bool operator==(const Requant&) const = default;
};

// Encodes a multiplier in (0, 1). The mantissa lands in [2^30, 2^31).
// Throws kParameter for values outside that range.
Requant quantize_multiplier(double real);

// round_half_away(acc * r.real()) computed exactly in integer arithmetic,
// saturated to the int32 range.
int32_t apply_requant(int64_t acc, const Requant& r);

// Parameters of one weighted layer in int8 form. Weights are symmetric
// (zero point 0); the bias lives at scale input_scale * weight_scale.
struct QLayerParams {
  std::vector<int8_t> weights;
  double weight_scale = 1.0;
  std::vector<int32_t> bias;
  Requant requant;
  QuantParams output;
  // Clamp range in the output domain; ReLU sets act_min = output.zero_point.
  int32_t act_min = -128;
  int32_t act_max = 127;
};

struct Kernel2d {
  int h = 1;
  int w = 1;
};

struct Stride2d {
  int h = 1;
  int w = 1;
};

// TF-style "same" geometry: out = ceil(in / stride).
struct SamePadding {
  int out = 0;
  int pad_before = 0;
};
SamePadding same_padding(int in, int kernel, int stride);

// 1x1 convolution over channels; x is (c_in, ...), output (c_out, ...).
QTensor conv_pointwise(const QTensor& x, const QLayerParams& p, int c_out);

// Per-channel temporal convolution on (c, t) with one length-`kernel` filter
// per channel.
QTensor conv1d_depthwise(const QTensor& x, const QLayerParams& p, int kernel,
                         int stride);

// Standard (weights c_out x c_in x kh x kw) or depthwise (c x kh x kw) 2D
// convolution on (c, h, w). Output channels are inferred from the bias size.
QTensor conv2d(const QTensor& x, const QLayerParams& p, Kernel2d kernel,
               Stride2d stride, bool depthwise);

// Per-channel mean; output (c, 1) with the input's quantization.
QTensor global_avg_pool(const QTensor& x);

// Affine map on the flattened input; output shape (n_out).
QTensor fully_connected(const QTensor& x, const QLayerParams& p, int n_out);

// Dequantize-add-requantize with saturation. Symmetric in (a, b) bit for bit.
QTensor residual_add(const QTensor& a, const QTensor& b, const QuantParams& out);

// Stable softmax.
std::vector<double> softmax(std::span<const double> logits);

// Float twins of the kernels above, used to execute float32 graphs.
namespace fp {

FTensor conv_pointwise(const FTensor& x, std::span<const float> weights,
                       std::span<const float> bias, int c_out, bool relu);
FTensor conv1d_depthwise(const FTensor& x, std::span<const float> weights,
                         std::span<const float> bias, int kernel, int stride,
                         bool relu);
FTensor conv2d(const FTensor& x, std::span<const float> weights,
               std::span<const float> bias, Kernel2d kernel, Stride2d stride,
               bool depthwise, bool relu);
FTensor global_avg_pool(const FTensor& x);
FTensor fully_connected(const FTensor& x, std::span<const float> weights,
                        std::span<const float> bias, int n_out);
FTensor residual_add(const FTensor& a, const FTensor& b);

}  // namespace fp

}  // namespace kws

#endif  // KWS_TENSOR_H_
