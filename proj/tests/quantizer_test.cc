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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "kws/error.h"
#include "kws/model.h"
#include "kws/quantizer.h"
#include "test_util.h"

using namespace kws;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected kws::Error");
  return ErrorCode::kIo;
}

struct Agreement {
  double argmax_rate = 0.0;
  double mean_abs_prob_error = 0.0;
};

Agreement compare(const ModelGraph& f, const ModelGraph& q, int n, uint64_t seed) {
  const auto maps = synthetic_feature_maps(f.mfcc_config, n, seed);
  int agree = 0;
  double err = 0.0;
  for (const auto& fm : maps) {
    const auto pf = infer(f, fm), pq = infer(q, fm);
    agree += predict(pf).index == predict(pq).index;
    for (size_t k = 0; k < pf.size(); ++k) err += std::abs(pf[k] - pq[k]);
  }
  return {static_cast<double>(agree) / n, err / (n * 10.0)};
}

}  // namespace

TEST_CASE("weight quantization scale arithmetic") {
  const std::vector<float> w = {1.27f, -0.5f, 0.0f, 0.635f};
  const auto q = quantize_weights(w);
  CHECK(q.scale == doctest::Approx(0.01));
  CHECK(q.values[0] == 127);
  CHECK(q.values[1] == -50);
  CHECK(q.values[2] == 0);
  CHECK(q.values[3] == 64);  // 63.5 rounds away from zero

  const std::vector<float> zeros(8, 0.0f);
  const auto z = quantize_weights(zeros);
  CHECK(z.scale == kWeightScaleFloor);
  for (int8_t v : z.values) CHECK(v == 0);
}

TEST_CASE("weight round trip error is at most half a step") {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> d(0.0f, 0.3f);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> w(1 + trial * 3);
    for (auto& v : w) v = d(rng);
    const auto q = quantize_weights(w);
    for (size_t i = 0; i < w.size(); ++i)
      CHECK(std::abs(q.values[i] * q.scale - w[i]) <= q.scale / 2 * (1 + 1e-9));
  }
}

TEST_CASE("affine activation parameters") {
  const auto q = affine_params({-1.0, 3.0});
  CHECK(q.scale == doctest::Approx(4.0 / 255.0));
  CHECK(quantize_value(0.0, q) == q.zero_point);
  CHECK(quantize_value(-1.0, q) == -128);
  CHECK(quantize_value(3.0, q) == 127);
  // Ranges that exclude zero are extended to include it.
  const auto pos = affine_params({2.0, 4.0});
  CHECK(pos.zero_point == -128);
  CHECK(pos.scale == doctest::Approx(4.0 / 255.0));
}

TEST_CASE("calibration of an all-zero map on a bias-free graph collapses to epsilon") {
  auto g = build_tkws(default_tkws_hyper(2), make_mfcc_config(15, 32));
  for (auto& l : g.layers)
    if (l.float_params) std::fill(l.float_params->bias.begin(), l.float_params->bias.end(), 0.0f);
  const std::vector<FeatureMap> cal = {FeatureMap(g.mfcc_config)};
  const auto r = calibrate(g, cal);
  CHECK(r.input == ActivationRange{-kRangeEpsilon, kRangeEpsilon});
  for (size_t i = 0; i < r.layer_outputs.size(); ++i) {
    const auto kind = g.layers[i].kind;
    if (kind == LayerKind::kResidualBegin || kind == LayerKind::kSoftmax) {
      CHECK_FALSE(r.layer_outputs[i].has_value());
      continue;
    }
    REQUIRE(r.layer_outputs[i].has_value());
    CHECK(*r.layer_outputs[i] == ActivationRange{-kRangeEpsilon, kRangeEpsilon});
  }
  // And the degenerate ranges still quantize to a well-formed graph.
  CHECK_NOTHROW(validate_graph(quantize_graph(g, r)));
}

TEST_CASE("calibration ranges never shrink as samples are added") {
  const auto g = build_tkws(default_tkws_hyper(3), make_mfcc_config(15, 63));
  const auto maps = synthetic_feature_maps(g.mfcc_config, 32, 2);
  CalibrationRanges prev;
  for (size_t n = 1; n <= maps.size(); n += 5) {
    const auto r = calibrate(g, std::span(maps).first(n));
    if (n > 1) {
      CHECK(r.input.min <= prev.input.min);
      CHECK(r.input.max >= prev.input.max);
      for (size_t i = 0; i < r.layer_outputs.size(); ++i) {
        if (!r.layer_outputs[i]) continue;
        CHECK(r.layer_outputs[i]->min <= prev.layer_outputs[i]->min);
        CHECK(r.layer_outputs[i]->max >= prev.layer_outputs[i]->max);
      }
    }
    prev = r;
  }
}

TEST_CASE("calibration and quantization are deterministic") {
  const auto g = build_dscnn(make_mfcc_config(30, 32));
  const auto maps = synthetic_feature_maps(g.mfcc_config, 64, 3);
  const auto a = calibrate(g, maps);
  const auto b = calibrate(g, maps);
  CHECK(a == b);
  const auto qa = quantize_graph(g, a), qb = quantize_graph(g, b);
  for (size_t i = 0; i < qa.layers.size(); ++i) {
    if (!qa.layers[i].qparams) continue;
    CHECK(qa.layers[i].qparams->weights == qb.layers[i].qparams->weights);
    CHECK(qa.layers[i].qparams->bias == qb.layers[i].qparams->bias);
    CHECK(qa.layers[i].qparams->requant == qb.layers[i].qparams->requant);
  }
}

TEST_CASE("calibration input errors") {
  const auto g = build_tkws(default_tkws_hyper(2), make_mfcc_config(15, 32));
  std::vector<FeatureMap> none;
  CHECK(code_of([&] { calibrate(g, none); }) == ErrorCode::kCalibration);
  const std::vector<FeatureMap> wrong = {FeatureMap(make_mfcc_config(30, 32))};
  CHECK(code_of([&] { calibrate(g, wrong); }) == ErrorCode::kCalibration);
}

TEST_CASE("requant multipliers reproduce the real scale ratios") {
  for (const auto& c : standard_mfcc_configs()) {
    for (const auto& g : {build_tkws(default_tkws_hyper(3), c), build_dscnn(c)}) {
      const auto q = quantize_graph(g, calibrate(g, synthetic_feature_maps(c, 32, 4)));
      CHECK(q.precision == Precision::kInt8);
      QuantParams current = q.input_quant;
      for (const auto& l : q.layers) {
        if (l.qparams) {
          const double ratio = current.scale * l.qparams->weight_scale / l.qparams->output.scale;
          CHECK(ratio < 1.0);
          CHECK(std::abs(l.qparams->requant.real() - ratio) <= ratio * std::ldexp(1.0, -24));
          current = l.qparams->output;
        } else if (l.kind == LayerKind::kResidualEnd) {
          current = *l.output_quant;
        }
      }
    }
  }
}

TEST_CASE("batch norm folding preserves the float function") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0.5f, 1.5f);
  auto g = build_tkws(default_tkws_hyper(2), make_mfcc_config(15, 32));
  for (auto& l : g.layers) {
    if (!l.float_params || l.kind == LayerKind::kFc) continue;
    const size_t c = l.float_params->bias.size();
    BatchNorm bn;
    for (size_t i = 0; i < c; ++i) {
      bn.gamma.push_back(u(rng));
      bn.beta.push_back(u(rng) - 1.0f);
      bn.mean.push_back(u(rng) - 1.0f);
      bn.var.push_back(u(rng));
    }
    l.batch_norm = bn;
  }
  auto folded = g;
  for (auto& l : folded.layers) fold_batch_norm(l);
  for (const auto& l : folded.layers) CHECK_FALSE(l.batch_norm.has_value());
  for (const auto& fm : synthetic_feature_maps(g.mfcc_config, 10, 6)) {
    const auto a = infer(g, fm), b = infer(folded, fm);
    for (size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-4));
  }
  // Quantization folds on its own.
  const auto q = quantize_graph(g, calibrate(g, synthetic_feature_maps(g.mfcc_config, 16, 7)));
  for (const auto& l : q.layers) CHECK_FALSE(l.batch_norm.has_value());
}

TEST_CASE("quantized graphs track their float twins") {
  for (const auto& c : standard_mfcc_configs()) {
    for (const auto& g : {build_tkws(default_tkws_hyper(2), c),
                          build_tkws(default_tkws_hyper(3), c), build_dscnn(c)}) {
      const auto q = quantize_graph(
          g, calibrate(g, synthetic_feature_maps(c, kDefaultCalibrationSize, 8)));
      const auto a = compare(g, q, 100, 9);
      INFO(g.name << " " << c.label() << " agreement " << a.argmax_rate << " error "
                  << a.mean_abs_prob_error);
      CHECK(a.argmax_rate >= 0.95);
      CHECK(a.mean_abs_prob_error <= 0.05);
    }
  }
}
