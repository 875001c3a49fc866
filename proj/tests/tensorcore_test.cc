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
#include <limits>
#include <numeric>
#include <random>

#include "kernel_cases.h"
#include "kws/error.h"
#include "kws/tensor.h"
#include "oracle/kernel_oracle.h"
#include "test_util.h"

using namespace kws;
using kws::testing::affine;
using kws::testing::random_qtensor;

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

// Weight 127 at scale 1/127 with matching input/output quantization is an exact
// identity through requantization.
QLayerParams identity_params(const QuantParams& q, size_t n_weights, size_t n_bias) {
  QLayerParams p;
  p.weights.assign(n_weights, 0);
  p.weight_scale = 1.0 / 127.0;
  p.bias.assign(n_bias, 0);
  p.output = q;
  p.requant = quantize_multiplier(q.scale * p.weight_scale / q.scale);
  return p;
}

int max_diff(const std::vector<int8_t>& a, const std::vector<int8_t>& b) {
  int worst = 0;
  for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

constexpr int kPropertyCases = 1000;

}  // namespace

TEST_CASE("scalar quantization") {
  CHECK(round_half_away(2.5) == 3);
  CHECK(round_half_away(-2.5) == -3);
  CHECK(round_half_away(2.4999) == 2);
  CHECK(round_half_away(-0.5) == -1);
  const QuantParams q{0.1, 10};
  CHECK(quantize_value(0.0, q) == 10);
  CHECK(quantize_value(1.0, q) == 20);
  CHECK(quantize_value(1000.0, q) == 127);
  CHECK(quantize_value(-1000.0, q) == -128);
  CHECK(dequantize_value(20, q) == doctest::Approx(1.0));
  FTensor x{{3}, {-0.25f, 0.0f, 0.31f}};
  const auto back = dequantize(quantize(x, q));
  for (size_t i = 0; i < 3; ++i) CHECK(std::abs(back.data[i] - x.data[i]) <= 0.05 + 1e-7);
}

TEST_CASE("quantize_multiplier invariants") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> logd(std::log(1e-9), std::log(0.999999));
  for (int i = 0; i < 10000; ++i) {
    const double real = std::exp(logd(rng));
    const auto r = quantize_multiplier(real);
    CHECK(r.mantissa >= (int64_t{1} << 30));
    CHECK(static_cast<int64_t>(r.mantissa) < (int64_t{1} << 31));
    CHECK(r.shift >= 0);
    CHECK(std::abs(r.real() - real) <= real * std::ldexp(1.0, -30));
  }
  CHECK(quantize_multiplier(0.5).mantissa == (1 << 30));
  CHECK(quantize_multiplier(0.5).shift == 0);
  CHECK(quantize_multiplier(std::ldexp(1.0, -24)).real() == std::ldexp(1.0, -24));
  for (double bad : {0.0, 1.0, -0.5, 2.0, std::numeric_limits<double>::quiet_NaN()})
    CHECK(code_of([&] { quantize_multiplier(bad); }) == ErrorCode::kParameter);
}

TEST_CASE("apply_requant rounds half away from zero") {
  const Requant half{1 << 30, 0};
  CHECK(apply_requant(3, half) == 2);
  CHECK(apply_requant(-3, half) == -2);
  CHECK(apply_requant(5, half) == 3);
  CHECK(apply_requant(4, half) == 2);
  CHECK(apply_requant(0, half) == 0);
  const Requant quarter{1 << 30, 1};
  CHECK(apply_requant(2, quarter) == 1);
  CHECK(apply_requant(-2, quarter) == -1);
  CHECK(apply_requant(1, quarter) == 0);
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int64_t> acc(-(int64_t{1} << 31), int64_t{1} << 31);
  std::uniform_real_distribution<double> m(0.001, 0.999);
  for (int i = 0; i < 10000; ++i) {
    const auto r = quantize_multiplier(m(rng));
    const int64_t a = acc(rng);
    const long double exact = static_cast<long double>(a) * r.mantissa /
                              std::ldexp(1.0L, 31 + r.shift);
    CHECK(std::abs(static_cast<long double>(apply_requant(a, r)) -
                   std::round(exact)) <= 1.0L);
  }
  // Results beyond the int32 range saturate.
  const Requant near_one = quantize_multiplier(0.99);
  CHECK(apply_requant(int64_t{1} << 40, near_one) == std::numeric_limits<int32_t>::max());
  CHECK(apply_requant(-(int64_t{1} << 40), near_one) == std::numeric_limits<int32_t>::min());
}

TEST_CASE("pointwise convolution") {
  std::mt19937_64 rng(3);
  SUBCASE("identity weights reproduce the input") {
    const auto x = random_qtensor(rng, {4, 9});
    auto p = identity_params(x.quant, 16, 4);
    for (int c = 0; c < 4; ++c) p.weights[c * 4 + c] = 127;
    CHECK(max_diff(conv_pointwise(x, p, 4).data, x.data) <= 1);
  }
  SUBCASE("zero weights and bias give the output zero point") {
    const auto x = random_qtensor(rng, {4, 5});
    auto p = testing::random_layer(rng, 32, 8, 4, x.quant.scale, false);
    std::fill(p.weights.begin(), p.weights.end(), 0);
    std::fill(p.bias.begin(), p.bias.end(), 0);
    for (int8_t v : conv_pointwise(x, p, 8).data) CHECK(v == p.output.zero_point);
  }
  SUBCASE("random case against the float oracle") {
    const auto x = random_qtensor(rng, {4, 5});
    const auto p = testing::random_layer(rng, 32, 8, 4, x.quant.scale, false);
    const auto got = conv_pointwise(x, p, 8);
    CHECK(got.shape == Shape{8, 5});
    CHECK(oracle::max_lsb_diff(got.data, oracle::pointwise(x.data, affine(x.quant), 4, 5,
                                                           testing::real_layer(p, x.quant.scale),
                                                           8, affine(p.output))) <= 1);
  }
  SUBCASE("property sweep") {
    for (int i = 0; i < kPropertyCases; ++i) CHECK(testing::pointwise_case(rng) <= 1);
  }
  SUBCASE("shape errors") {
    const auto x = random_qtensor(rng, {4, 5});
    const auto p = testing::random_layer(rng, 30, 8, 4, x.quant.scale, false);
    CHECK(code_of([&] { conv_pointwise(x, p, 8); }) == ErrorCode::kShape);
  }
}

TEST_CASE("depthwise 1D convolution") {
  std::mt19937_64 rng(4);
  SUBCASE("unit kernel is the identity") {
    const auto x = random_qtensor(rng, {6, 20});
    auto p = identity_params(x.quant, 6, 6);
    std::fill(p.weights.begin(), p.weights.end(), 127);
    const auto y = conv1d_depthwise(x, p, 1, 1);
    CHECK(y.shape == x.shape);
    CHECK(max_diff(y.data, x.data) <= 1);
  }
  SUBCASE("random (8, 63) input with kernel 9") {
    const auto x = random_qtensor(rng, {8, 63});
    const auto p = testing::random_layer(rng, 72, 8, 9, x.quant.scale, true);
    const auto got = conv1d_depthwise(x, p, 9, 1);
    CHECK(got.shape == Shape{8, 63});
    CHECK(oracle::max_lsb_diff(
              got.data, oracle::depthwise1d(x.data, affine(x.quant), 8, 63,
                                            testing::real_layer(p, x.quant.scale), 9, 1,
                                            affine(p.output))) <= 1);
  }
  SUBCASE("stride 2 output length") {
    const auto x = random_qtensor(rng, {2, 63});
    const auto p = testing::random_layer(rng, 6, 2, 3, x.quant.scale, false);
    CHECK(conv1d_depthwise(x, p, 3, 2).shape == Shape{2, 32});
  }
  SUBCASE("property sweep") {
    for (int i = 0; i < kPropertyCases; ++i) CHECK(testing::depthwise1d_case(rng) <= 1);
  }
  SUBCASE("errors") {
    const auto x = random_qtensor(rng, {2, 4});
    const auto p = testing::random_layer(rng, 10, 2, 5, x.quant.scale, false);
    CHECK(code_of([&] { conv1d_depthwise(x, p, 5, 1); }) == ErrorCode::kShape);
    const auto p3 = testing::random_layer(rng, 6, 2, 3, x.quant.scale, false);
    CHECK(code_of([&] { conv1d_depthwise(x, p3, 3, 0); }) == ErrorCode::kParameter);
  }
}

TEST_CASE("2D convolution") {
  std::mt19937_64 rng(5);
  SUBCASE("3x3 depthwise delta kernel is the identity") {
    const auto x = random_qtensor(rng, {3, 7, 9});
    auto p = identity_params(x.quant, 27, 3);
    for (int c = 0; c < 3; ++c) p.weights[c * 9 + 4] = 127;
    const auto y = conv2d(x, p, {3, 3}, {1, 1}, true);
    CHECK(y.shape == x.shape);
    CHECK(max_diff(y.data, x.data) <= 1);
  }
  SUBCASE("random (1, 15, 32) input, 3x3, 16 filters") {
    const auto x = random_qtensor(rng, {1, 15, 32});
    const auto p = testing::random_layer(rng, 16 * 9, 16, 9, x.quant.scale, true);
    const auto got = conv2d(x, p, {3, 3}, {1, 1}, false);
    CHECK(got.shape == Shape{16, 15, 32});
    CHECK(oracle::max_lsb_diff(
              got.data, oracle::conv2d(x.data, affine(x.quant), 1, 15, 32,
                                       testing::real_layer(p, x.quant.scale), 16, 3, 3, 1, 1,
                                       false, affine(p.output))) <= 1);
  }
  SUBCASE("strided output geometry") {
    const auto x = random_qtensor(rng, {1, 15, 63});
    const auto p = testing::random_layer(rng, 4 * 40, 4, 40, x.quant.scale, true);
    CHECK(conv2d(x, p, {10, 4}, {2, 2}, false).shape == Shape{4, 8, 32});
  }
  SUBCASE("property sweep, standard") {
    for (int i = 0; i < kPropertyCases; ++i) CHECK(testing::conv2d_case(rng, false) <= 1);
  }
  SUBCASE("property sweep, depthwise") {
    for (int i = 0; i < kPropertyCases; ++i) CHECK(testing::conv2d_case(rng, true) <= 1);
  }
  SUBCASE("depthwise requires matching channels") {
    const auto x = random_qtensor(rng, {3, 5, 5});
    const auto p = testing::random_layer(rng, 4 * 9, 4, 9, x.quant.scale, false);
    CHECK(code_of([&] { conv2d(x, p, {3, 3}, {1, 1}, true); }) == ErrorCode::kShape);
  }
}

TEST_CASE("global average pooling") {
  std::mt19937_64 rng(6);
  SUBCASE("random (4, 63) input") {
    const auto x = random_qtensor(rng, {4, 63});
    const auto got = global_avg_pool(x);
    CHECK(got.shape == Shape{4, 1});
    CHECK(got.quant == x.quant);
    CHECK(oracle::max_lsb_diff(got.data, oracle::gap(x.data, affine(x.quant), 4, 63)) <= 1);
  }
  SUBCASE("constant channels are preserved") {
    QTensor x{{2, 10}, std::vector<int8_t>(20), {0.05, 3}};
    for (int i = 0; i < 10; ++i) {
      x.data[i] = -77;
      x.data[10 + i] = 120;
    }
    const auto y = global_avg_pool(x);
    CHECK(y.data[0] == -77);
    CHECK(y.data[1] == 120);
  }
  SUBCASE("permuting time steps leaves the output unchanged") {
    const auto x = random_qtensor(rng, {5, 40});
    std::vector<int> order(40);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    QTensor y = x;
    for (int c = 0; c < 5; ++c)
      for (int t = 0; t < 40; ++t) y.data[c * 40 + t] = x.data[c * 40 + order[t]];
    CHECK(global_avg_pool(y).data == global_avg_pool(x).data);
  }
  SUBCASE("empty spatial extent") {
    QTensor x{{3, 0}, {}, {0.1, 0}};
    CHECK(code_of([&] { global_avg_pool(x); }) == ErrorCode::kShape);
  }
  SUBCASE("image input pools over both axes") {
    const auto x = random_qtensor(rng, {3, 4, 5});
    CHECK(global_avg_pool(x).shape == Shape{3, 1});
  }
  SUBCASE("property sweep") {
    for (int i = 0; i < kPropertyCases; ++i) CHECK(testing::gap_case(rng) <= 1);
  }
}

TEST_CASE("fully connected") {
  std::mt19937_64 rng(7);
  SUBCASE("identity-like square layer") {
    const auto x = random_qtensor(rng, {10, 1});
    auto p = identity_params(x.quant, 100, 10);
    for (int i = 0; i < 10; ++i) p.weights[i * 10 + i] = 127;
    CHECK(max_diff(fully_connected(x, p, 10).data, x.data) <= 1);
  }
  SUBCASE("zero weights output the quantized bias") {
    const auto x = random_qtensor(rng, {6, 1});
    auto p = testing::random_layer(rng, 60, 10, 6, x.quant.scale, false);
    std::fill(p.weights.begin(), p.weights.end(), 0);
    const auto y = fully_connected(x, p, 10);
    for (int o = 0; o < 10; ++o) {
      const double real = p.bias[o] * x.quant.scale * p.weight_scale;
      CHECK(std::abs(y.data[o] - oracle::quantize_real(real, affine(p.output))) <= 1);
    }
  }
  SUBCASE("random 24 -> 10") {
    const auto x = random_qtensor(rng, {24, 1});
    const auto p = testing::random_layer(rng, 240, 10, 24, x.quant.scale, false);
    const auto got = fully_connected(x, p, 10);
    CHECK(got.shape == Shape{10});
    CHECK(oracle::max_lsb_diff(got.data,
                               oracle::fc(x.data, affine(x.quant),
                                          testing::real_layer(p, x.quant.scale), 10,
                                          affine(p.output))) <= 1);
  }
  SUBCASE("property sweep") {
    for (int i = 0; i < kPropertyCases; ++i) CHECK(testing::fc_case(rng) <= 1);
  }
}

TEST_CASE("residual add") {
  std::mt19937_64 rng(8);
  SUBCASE("random pair against the float oracle") {
    const auto a = random_qtensor(rng, {8, 20});
    const auto b = random_qtensor(rng, {8, 20});
    const QuantParams out{0.08, -5};
    CHECK(oracle::max_lsb_diff(residual_add(a, b, out).data,
                               oracle::add(a.data, affine(a.quant), b.data, affine(b.quant),
                                           affine(out))) <= 1);
  }
  SUBCASE("adding zero requantizes the other operand") {
    const auto a = random_qtensor(rng, {6, 30});
    QTensor zero{a.shape, std::vector<int8_t>(a.data.size(), -7), {0.03, -7}};
    const QuantParams out{0.05, 4};
    const auto y = residual_add(a, zero, out);
    for (size_t i = 0; i < a.data.size(); ++i)
      CHECK(std::abs(y.data[i] - oracle::quantize_real(dequantize_value(a.data[i], a.quant),
                                                       affine(out))) <= 1);
  }
  SUBCASE("commutative") {
    for (int i = 0; i < 200; ++i) {
      const auto a = random_qtensor(rng, {4, 16});
      const auto b = random_qtensor(rng, {4, 16});
      const QuantParams out = testing::random_quant(rng);
      CHECK(residual_add(a, b, out).data == residual_add(b, a, out).data);
    }
  }
  SUBCASE("property sweep") {
    for (int i = 0; i < kPropertyCases; ++i) CHECK(testing::residual_case(rng) <= 1);
  }
  SUBCASE("mismatched shapes") {
    const auto a = random_qtensor(rng, {4, 16});
    const auto b = random_qtensor(rng, {4, 15});
    CHECK(code_of([&] { residual_add(a, b, a.quant); }) == ErrorCode::kShape);
  }
}

TEST_CASE("kernels saturate instead of wrapping") {
  std::mt19937_64 rng(9);
  QTensor hi{{16, 8}, std::vector<int8_t>(128, 127), {1.0, -128}};
  QTensor lo{{16, 8}, std::vector<int8_t>(128, -128), {1.0, 127}};
  QLayerParams p;
  p.weights.assign(16 * 16, 127);
  p.weight_scale = 1.0;
  p.bias.assign(16, 0);
  p.output = {1.0, 0};
  p.requant = quantize_multiplier(0.999);
  for (int8_t v : conv_pointwise(hi, p, 16).data) CHECK(v == 127);
  for (int8_t v : conv_pointwise(lo, p, 16).data) CHECK(v == -128);
  const auto sum = residual_add(hi, hi, {0.01, 0});
  for (int8_t v : sum.data) CHECK(v == 127);
  const auto neg = residual_add(lo, lo, {0.01, 0});
  for (int8_t v : neg.data) CHECK(v == -128);
}

TEST_CASE("softmax") {
  const std::vector<double> logits = {2.0, 1.0, 0.1};
  const auto p = softmax(logits);
  CHECK(p[0] == doctest::Approx(0.6590).epsilon(1e-3));
  CHECK(p[1] == doctest::Approx(0.2424).epsilon(1e-3));
  CHECK(p[2] == doctest::Approx(0.0986).epsilon(1e-3));
  std::mt19937_64 rng(10);
  std::normal_distribution<double> d(0.0, 20.0);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> x(10), shifted(10);
    const double c = d(rng) * 50.0;
    for (int k = 0; k < 10; ++k) {
      x[k] = d(rng);
      shifted[k] = x[k] + c;
    }
    const auto a = softmax(x), b = softmax(shifted);
    double total = 0.0;
    for (int k = 0; k < 10; ++k) {
      CHECK(a[k] >= 0.0);
      CHECK(std::abs(a[k] - b[k]) <= 1e-9);
      total += a[k];
    }
    CHECK(std::abs(total - 1.0) <= 1e-6);
  }
  const std::vector<double> extreme = {1000.0, -1000.0, 0.0};
  const auto e = softmax(extreme);
  CHECK(e[0] == doctest::Approx(1.0));
  CHECK(std::isfinite(e[1]));
}

TEST_CASE("float kernels mirror their integer counterparts") {
  FTensor x{{2, 3}, {1.0f, -2.0f, 3.0f, 0.5f, 0.0f, -1.0f}};
  const std::vector<float> w = {1.0f, 2.0f, -1.0f, 0.0f};
  const std::vector<float> b = {0.5f, -0.5f};
  const auto y = fp::conv_pointwise(x, w, b, 2, true);
  CHECK(y.shape == Shape{2, 3});
  CHECK(y.data[0] == doctest::Approx(2.5));   // 1 + 1 + 0.5
  CHECK(y.data[1] == doctest::Approx(0.0));   // -2 + 0 + 0.5 -> relu
  CHECK(y.data[3] == doctest::Approx(0.0));   // -1 - 0.5 -> relu
  const auto pooled = fp::global_avg_pool(x);
  CHECK(pooled.data[0] == doctest::Approx(2.0 / 3.0));
  const auto sum = fp::residual_add(x, x);
  CHECK(sum.data[2] == doctest::Approx(6.0));
  const std::vector<float> dw = {0.0f, 1.0f, 0.0f, 0.0f, 1.0f, 0.0f};
  const std::vector<float> zero = {0.0f, 0.0f};
  const auto same = fp::conv1d_depthwise(x, dw, zero, 3, 1, false);
  CHECK(same.data == x.data);
}
