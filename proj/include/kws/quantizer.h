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

#ifndef KWS_QUANTIZER_H_
#define KWS_QUANTIZER_H_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "kws/frontend.h"
#include "kws/model.h"
#include "kws/tensor.h"

namespace kws {

inline constexpr double kCalibrationMargin = 1e-3;  // relative widening
inline constexpr double kRangeEpsilon = 1e-6;        // absolute floor on widening
inline constexpr double kWeightScaleFloor = 1e-8;
inline constexpr int kDefaultCalibrationSize = 128;

struct ActivationRange {
  double min = 0.0;
  double max = 0.0;

  bool operator==(const ActivationRange&) const = default;
};

// Observed extrema widened by max(0.1% of the span, kRangeEpsilon) each side.
ActivationRange widen(const ActivationRange& observed);

// One range per activation edge: input, then the output of every layer that
// produces a new tensor (nullopt for residual_begin and softmax).
struct CalibrationRanges {
  ActivationRange input;
  std::vector<std::optional<ActivationRange>> layer_outputs;

  bool operator==(const CalibrationRanges&) const = default;
};

// Runs float inference over every (normalized) map and records min/max at
// each edge. Throws kCalibration on an empty or config-incompatible set.
CalibrationRanges calibrate(const FloatGraph& graph, std::span<const FeatureMap> cal);

// Affine int8 parameters covering [range.min, range.max] and the real zero.
QuantParams affine_params(const ActivationRange& range);

struct QuantizedWeights {
  std::vector<int8_t> values;
  double scale = 1.0;
};

// Symmetric per-tensor: scale = max|w| / 127, floored at kWeightScaleFloor.
QuantizedWeights quantize_weights(std::span<const float> weights);

// Folds per-channel batch norm into the layer's float weights and bias and
// clears it.
void fold_batch_norm(LayerSpec& layer);

// Standard-normal feature maps, a stand-in calibration set when no audio is
// at hand (the maps are already in normalized units).
std::vector<FeatureMap> synthetic_feature_maps(const MfccConfig& config, int count,
                                               uint64_t seed);

ModelGraph quantize_graph(const FloatGraph& graph, const CalibrationRanges& ranges);

}  // namespace kws

#endif  // KWS_QUANTIZER_H_
