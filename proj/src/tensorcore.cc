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

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>

#include "kws/error.h"
#include "kws/tensor.h"

namespace kws {
namespace {

std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

int8_t finish(int64_t acc, const QLayerParams& p) {
  int64_t q = static_cast<int64_t>(apply_requant(acc, p.requant)) + p.output.zero_point;
  q = std::clamp<int64_t>(q, std::max(p.act_min, -128), std::min(p.act_max, 127));
  return static_cast<int8_t>(q);
}

void check_params(const QLayerParams& p, size_t weights, size_t bias) {
  require(p.weights.size() == weights, ErrorCode::kShape,
          "expected " + std::to_string(weights) + " weights, got " +
              std::to_string(p.weights.size()));
  require(p.bias.size() == bias, ErrorCode::kShape,
          "expected " + std::to_string(bias) + " biases, got " +
              std::to_string(p.bias.size()));
}

void check_tensor(const QTensor& x) {
  require(!x.shape.empty() && x.data.size() == element_count(x.shape),
          ErrorCode::kShape, "tensor data does not match shape " + shape_str(x.shape));
}

void check_float_params(std::span<const float> w, size_t weights,
                        std::span<const float> b, size_t bias) {
  require(w.size() == weights && b.size() == bias, ErrorCode::kShape,
          "float layer parameter size mismatch");
}

float relu_if(float v, bool relu) { return relu ? std::max(v, 0.0f) : v; }

}  // namespace

size_t element_count(const Shape& shape) {
  if (shape.empty()) return 0;
  size_t n = 1;
  for (int d : shape) {
    if (d < 0) return 0;
    n *= static_cast<size_t>(d);
  }
  return n;
}

size_t QTensor::inner_size() const {
  return shape.size() < 2 ? 1 : element_count(Shape(shape.begin() + 1, shape.end()));
}

size_t FTensor::inner_size() const {
  return shape.size() < 2 ? 1 : element_count(Shape(shape.begin() + 1, shape.end()));
}

int64_t round_half_away(double v) {
  return static_cast<int64_t>(v < 0 ? -std::floor(-v + 0.5) : std::floor(v + 0.5));
}

int8_t quantize_value(double real, const QuantParams& q) {
  const double scaled = real / q.scale;
  const double clamped = std::clamp(scaled, -1e6, 1e6);
  return static_cast<int8_t>(
      std::clamp<int64_t>(round_half_away(clamped) + q.zero_point, -128, 127));
}

double dequantize_value(int8_t q, const QuantParams& p) {
  return p.scale * (static_cast<int32_t>(q) - p.zero_point);
}

QTensor quantize(const FTensor& x, const QuantParams& q) {
  QTensor out{x.shape, std::vector<int8_t>(x.data.size()), q};
  for (size_t i = 0; i < x.data.size(); ++i) out.data[i] = quantize_value(x.data[i], q);
  return out;
}

FTensor dequantize(const QTensor& x) {
  FTensor out{x.shape, std::vector<float>(x.data.size())};
  for (size_t i = 0; i < x.data.size(); ++i)
    out.data[i] = static_cast<float>(dequantize_value(x.data[i], x.quant));
  return out;
}

double Requant::real() const {
  return std::ldexp(static_cast<double>(mantissa), -31 - shift);
}

Requant quantize_multiplier(double real) {
  require(real > 0.0 && real < 1.0 && std::isfinite(real), ErrorCode::kParameter,
          "requant multiplier must lie in (0, 1), got " + std::to_string(real));
  int exp = 0;
  const double frac = std::frexp(real, &exp);  // real = frac * 2^exp, frac in [0.5, 1)
  int64_t mantissa = round_half_away(std::ldexp(frac, 31));
  if (mantissa == (int64_t{1} << 31)) {
    mantissa >>= 1;
    ++exp;
  }
  if (exp > 0) return Requant{std::numeric_limits<int32_t>::max(), 0};
  return Requant{static_cast<int32_t>(mantissa), -exp};
}

int32_t apply_requant(int64_t acc, const Requant& r) {
  const __int128 prod = static_cast<__int128>(acc) * r.mantissa;
  const int total = 31 + r.shift;
  if (total >= 120) return 0;
  const bool neg = prod < 0;
  const unsigned __int128 mag = static_cast<unsigned __int128>(neg ? -prod : prod);
  const unsigned __int128 half = static_cast<unsigned __int128>(1) << (total - 1);
  const unsigned __int128 rounded = (mag + half) >> total;
  const unsigned __int128 limit = neg ? (unsigned __int128)1 << 31
                                      : ((unsigned __int128)1 << 31) - 1;
  const int64_t v = static_cast<int64_t>(std::min(rounded, limit));
  return static_cast<int32_t>(neg ? -v : v);
}

SamePadding same_padding(int in, int kernel, int stride) {
  SamePadding s;
  s.out = (in + stride - 1) / stride;
  const int total = std::max((s.out - 1) * stride + kernel - in, 0);
  s.pad_before = total / 2;
  return s;
}

QTensor conv_pointwise(const QTensor& x, const QLayerParams& p, int c_out) {
  check_tensor(x);
  require(x.shape.size() >= 2, ErrorCode::kShape,
          "pointwise input must be (c, ...), got " + shape_str(x.shape));
  const int c_in = x.channels();
  require(c_out > 0, ErrorCode::kShape, "c_out must be positive");
  check_params(p, static_cast<size_t>(c_out) * c_in, static_cast<size_t>(c_out));
  const size_t n = x.inner_size();

  QTensor out;
  out.shape = x.shape;
  out.shape[0] = c_out;
  out.quant = p.output;
  out.data.resize(static_cast<size_t>(c_out) * n);
  const int32_t zx = x.quant.zero_point;
  for (int co = 0; co < c_out; ++co) {
    const int8_t* w = p.weights.data() + static_cast<size_t>(co) * c_in;
    for (size_t t = 0; t < n; ++t) {
      int64_t acc = p.bias[co];
      for (int ci = 0; ci < c_in; ++ci)
        acc += static_cast<int64_t>(w[ci]) * (x.data[ci * n + t] - zx);
      out.data[co * n + t] = finish(acc, p);
    }
  }
  return out;
}

QTensor conv1d_depthwise(const QTensor& x, const QLayerParams& p, int kernel,
                         int stride) {
  check_tensor(x);
  require(x.shape.size() == 2, ErrorCode::kShape,
          "depthwise1d input must be (c, t), got " + shape_str(x.shape));
  require(stride >= 1, ErrorCode::kParameter, "stride must be >= 1");
  require(kernel >= 1, ErrorCode::kParameter, "kernel must be >= 1");
  const int c = x.shape[0];
  const int t_in = x.shape[1];
  require(kernel <= t_in, ErrorCode::kShape,
          "kernel " + std::to_string(kernel) + " longer than sequence " +
              std::to_string(t_in));
  check_params(p, static_cast<size_t>(c) * kernel, static_cast<size_t>(c));
  const SamePadding pad = same_padding(t_in, kernel, stride);

  QTensor out{{c, pad.out}, std::vector<int8_t>(static_cast<size_t>(c) * pad.out),
              p.output};
  const int32_t zx = x.quant.zero_point;
  for (int ch = 0; ch < c; ++ch) {
    const int8_t* w = p.weights.data() + static_cast<size_t>(ch) * kernel;
    const int8_t* in = x.data.data() + static_cast<size_t>(ch) * t_in;
    for (int t = 0; t < pad.out; ++t) {
      int64_t acc = p.bias[ch];
      const int start = t * stride - pad.pad_before;
      for (int k = 0; k < kernel; ++k) {
        const int ti = start + k;
        if (ti < 0 || ti >= t_in) continue;
        acc += static_cast<int64_t>(w[k]) * (in[ti] - zx);
      }
      out.data[static_cast<size_t>(ch) * pad.out + t] = finish(acc, p);
    }
  }
  return out;
}

QTensor conv2d(const QTensor& x, const QLayerParams& p, Kernel2d kernel,
               Stride2d stride, bool depthwise) {
  check_tensor(x);
  require(x.shape.size() == 3, ErrorCode::kShape,
          "conv2d input must be (c, h, w), got " + shape_str(x.shape));
  require(stride.h >= 1 && stride.w >= 1, ErrorCode::kParameter, "stride must be >= 1");
  require(kernel.h >= 1 && kernel.w >= 1, ErrorCode::kParameter, "kernel must be >= 1");
  const int c_in = x.shape[0], h = x.shape[1], w = x.shape[2];
  const int c_out = static_cast<int>(p.bias.size());
  require(c_out > 0, ErrorCode::kShape, "conv2d has no output channels");
  require(!depthwise || c_out == c_in, ErrorCode::kShape,
          "depthwise conv2d needs c_out == c_in");
  const size_t taps = static_cast<size_t>(kernel.h) * kernel.w;
  check_params(p, depthwise ? c_in * taps : static_cast<size_t>(c_out) * c_in * taps,
               static_cast<size_t>(c_out));
  const SamePadding ph = same_padding(h, kernel.h, stride.h);
  const SamePadding pw = same_padding(w, kernel.w, stride.w);

  QTensor out{{c_out, ph.out, pw.out},
              std::vector<int8_t>(static_cast<size_t>(c_out) * ph.out * pw.out),
              p.output};
  const int32_t zx = x.quant.zero_point;
  const size_t plane = static_cast<size_t>(h) * w;
  for (int co = 0; co < c_out; ++co) {
    const int ci_begin = depthwise ? co : 0;
    const int ci_end = depthwise ? co + 1 : c_in;
    for (int oy = 0; oy < ph.out; ++oy) {
      for (int ox = 0; ox < pw.out; ++ox) {
        int64_t acc = p.bias[co];
        for (int ci = ci_begin; ci < ci_end; ++ci) {
          const int8_t* wk =
              p.weights.data() +
              (depthwise ? static_cast<size_t>(co) * taps
                         : (static_cast<size_t>(co) * c_in + ci) * taps);
          for (int ky = 0; ky < kernel.h; ++ky) {
            const int iy = oy * stride.h - ph.pad_before + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kernel.w; ++kx) {
              const int ix = ox * stride.w - pw.pad_before + kx;
              if (ix < 0 || ix >= w) continue;
              acc += static_cast<int64_t>(wk[ky * kernel.w + kx]) *
                     (x.data[ci * plane + static_cast<size_t>(iy) * w + ix] - zx);
            }
          }
        }
        out.data[(static_cast<size_t>(co) * ph.out + oy) * pw.out + ox] = finish(acc, p);
      }
    }
  }
  return out;
}

QTensor global_avg_pool(const QTensor& x) {
  check_tensor(x);
  require(x.shape.size() >= 2, ErrorCode::kShape,
          "pooling input must be (c, ...), got " + shape_str(x.shape));
  const size_t n = x.inner_size();
  require(n > 0, ErrorCode::kShape, "empty spatial extent");
  const int c = x.channels();
  QTensor out{{c, 1}, std::vector<int8_t>(static_cast<size_t>(c)), x.quant};
  const auto count = static_cast<int64_t>(n);
  for (int ch = 0; ch < c; ++ch) {
    int64_t sum = 0;
    for (size_t i = 0; i < n; ++i) sum += x.data[ch * n + i];
    const int64_t mag = (2 * (sum < 0 ? -sum : sum) + count) / (2 * count);
    out.data[ch] = static_cast<int8_t>(std::clamp<int64_t>(sum < 0 ? -mag : mag, -128, 127));
  }
  return out;
}

QTensor fully_connected(const QTensor& x, const QLayerParams& p, int n_out) {
  check_tensor(x);
  require(n_out > 0, ErrorCode::kShape, "n_out must be positive");
  const size_t n_in = x.data.size();
  check_params(p, static_cast<size_t>(n_out) * n_in, static_cast<size_t>(n_out));
  QTensor out{{n_out}, std::vector<int8_t>(static_cast<size_t>(n_out)), p.output};
  const int32_t zx = x.quant.zero_point;
  for (int o = 0; o < n_out; ++o) {
    const int8_t* w = p.weights.data() + static_cast<size_t>(o) * n_in;
    int64_t acc = p.bias[o];
    for (size_t i = 0; i < n_in; ++i)
      acc += static_cast<int64_t>(w[i]) * (x.data[i] - zx);
    out.data[o] = finish(acc, p);
  }
  return out;
}

namespace {

// mantissa * 2^exponent with a signed exponent, for rescaling that may exceed 1.
struct Rescale {
  int64_t mantissa;
  int exponent;
};

Rescale make_rescale(double real) {
  if (real == 0.0) return {0, 0};
  int exp = 0;
  const double frac = std::frexp(real, &exp);
  return {round_half_away(std::ldexp(frac, 31)), exp - 31};
}

}  // namespace

QTensor residual_add(const QTensor& a, const QTensor& b, const QuantParams& out) {
  check_tensor(a);
  check_tensor(b);
  require(a.shape == b.shape, ErrorCode::kShape,
          "residual operands differ: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
  require(out.scale > 0.0, ErrorCode::kParameter, "output scale must be positive");
  const Rescale ra = make_rescale(a.quant.scale / out.scale);
  const Rescale rb = make_rescale(b.quant.scale / out.scale);
  const int e = std::min(ra.exponent, rb.exponent);
  // Terms more than 80 binary orders below the other carry no weight at int8
  // output precision.
  constexpr int kMaxAlign = 80;
  const int sa = ra.exponent - e;
  const int sb = rb.exponent - e;

  QTensor res{a.shape, std::vector<int8_t>(a.data.size()), out};
  for (size_t i = 0; i < a.data.size(); ++i) {
    __int128 sum = 0;
    if (sa <= kMaxAlign)
      sum += (static_cast<__int128>(a.data[i] - a.quant.zero_point) * ra.mantissa) << sa;
    if (sb <= kMaxAlign)
      sum += (static_cast<__int128>(b.data[i] - b.quant.zero_point) * rb.mantissa) << sb;
    const int exp = sa <= kMaxAlign && sb <= kMaxAlign ? e : e + std::min(sa, sb);
    int64_t v;
    if (exp >= 0) {
      constexpr __int128 kCap = 1 << 20;
      const bool huge = exp > 40 || sum > kCap || sum < -kCap;
      const __int128 big = huge ? (sum > 0 ? kCap : (sum < 0 ? -kCap : 0)) : sum << exp;
      v = static_cast<int64_t>(std::clamp<__int128>(big, -kCap, kCap));
    } else {
      const int sh = -exp;
      const bool neg = sum < 0;
      const unsigned __int128 mag = static_cast<unsigned __int128>(neg ? -sum : sum);
      unsigned __int128 r = sh >= 127 ? 0 : (mag + ((unsigned __int128)1 << (sh - 1))) >> sh;
      r = std::min<unsigned __int128>(r, 1 << 20);
      v = neg ? -static_cast<int64_t>(r) : static_cast<int64_t>(r);
    }
    res.data[i] = static_cast<int8_t>(std::clamp<int64_t>(v + out.zero_point, -128, 127));
  }
  return res;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

namespace fp {

FTensor conv_pointwise(const FTensor& x, std::span<const float> weights,
                       std::span<const float> bias, int c_out, bool relu) {
  require(x.shape.size() >= 2 && x.data.size() == element_count(x.shape),
          ErrorCode::kShape, "pointwise input must be (c, ...)");
  const int c_in = x.channels();
  check_float_params(weights, static_cast<size_t>(c_out) * c_in, bias,
                     static_cast<size_t>(c_out));
  const size_t n = x.inner_size();
  FTensor out{x.shape, std::vector<float>(static_cast<size_t>(c_out) * n)};
  out.shape[0] = c_out;
  for (int co = 0; co < c_out; ++co)
    for (size_t t = 0; t < n; ++t) {
      double acc = bias[co];
      for (int ci = 0; ci < c_in; ++ci)
        acc += static_cast<double>(weights[static_cast<size_t>(co) * c_in + ci]) *
               x.data[ci * n + t];
      out.data[co * n + t] = relu_if(static_cast<float>(acc), relu);
    }
  return out;
}

FTensor conv1d_depthwise(const FTensor& x, std::span<const float> weights,
                         std::span<const float> bias, int kernel, int stride,
                         bool relu) {
  require(x.shape.size() == 2 && x.data.size() == element_count(x.shape),
          ErrorCode::kShape, "depthwise1d input must be (c, t)");
  require(stride >= 1 && kernel >= 1, ErrorCode::kParameter, "bad kernel/stride");
  const int c = x.shape[0], t_in = x.shape[1];
  require(kernel <= t_in, ErrorCode::kShape, "kernel longer than sequence");
  check_float_params(weights, static_cast<size_t>(c) * kernel, bias,
                     static_cast<size_t>(c));
  const SamePadding pad = same_padding(t_in, kernel, stride);
  FTensor out{{c, pad.out}, std::vector<float>(static_cast<size_t>(c) * pad.out)};
  for (int ch = 0; ch < c; ++ch)
    for (int t = 0; t < pad.out; ++t) {
      double acc = bias[ch];
      for (int k = 0; k < kernel; ++k) {
        const int ti = t * stride - pad.pad_before + k;
        if (ti < 0 || ti >= t_in) continue;
        acc += static_cast<double>(weights[static_cast<size_t>(ch) * kernel + k]) *
               x.data[static_cast<size_t>(ch) * t_in + ti];
      }
      out.data[static_cast<size_t>(ch) * pad.out + t] =
          relu_if(static_cast<float>(acc), relu);
    }
  return out;
}

FTensor conv2d(const FTensor& x, std::span<const float> weights,
               std::span<const float> bias, Kernel2d kernel, Stride2d stride,
               bool depthwise, bool relu) {
  require(x.shape.size() == 3 && x.data.size() == element_count(x.shape),
          ErrorCode::kShape, "conv2d input must be (c, h, w)");
  const int c_in = x.shape[0], h = x.shape[1], w = x.shape[2];
  const int c_out = static_cast<int>(bias.size());
  require(!depthwise || c_out == c_in, ErrorCode::kShape,
          "depthwise conv2d needs c_out == c_in");
  const size_t taps = static_cast<size_t>(kernel.h) * kernel.w;
  check_float_params(weights,
                     depthwise ? c_in * taps : static_cast<size_t>(c_out) * c_in * taps,
                     bias, static_cast<size_t>(c_out));
  const SamePadding ph = same_padding(h, kernel.h, stride.h);
  const SamePadding pw = same_padding(w, kernel.w, stride.w);
  FTensor out{{c_out, ph.out, pw.out},
              std::vector<float>(static_cast<size_t>(c_out) * ph.out * pw.out)};
  const size_t plane = static_cast<size_t>(h) * w;
  for (int co = 0; co < c_out; ++co) {
    const int ci_begin = depthwise ? co : 0;
    const int ci_end = depthwise ? co + 1 : c_in;
    for (int oy = 0; oy < ph.out; ++oy)
      for (int ox = 0; ox < pw.out; ++ox) {
        double acc = bias[co];
        for (int ci = ci_begin; ci < ci_end; ++ci) {
          const float* wk = weights.data() +
                            (depthwise ? static_cast<size_t>(co) * taps
                                       : (static_cast<size_t>(co) * c_in + ci) * taps);
          for (int ky = 0; ky < kernel.h; ++ky) {
            const int iy = oy * stride.h - ph.pad_before + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kernel.w; ++kx) {
              const int ix = ox * stride.w - pw.pad_before + kx;
              if (ix < 0 || ix >= w) continue;
              acc += static_cast<double>(wk[ky * kernel.w + kx]) *
                     x.data[ci * plane + static_cast<size_t>(iy) * w + ix];
            }
          }
        }
        out.data[(static_cast<size_t>(co) * ph.out + oy) * pw.out + ox] =
            relu_if(static_cast<float>(acc), relu);
      }
  }
  return out;
}

FTensor global_avg_pool(const FTensor& x) {
  require(x.shape.size() >= 2 && x.inner_size() > 0, ErrorCode::kShape,
          "pooling input must be (c, ...) with non-empty extent");
  const int c = x.channels();
  const size_t n = x.inner_size();
  FTensor out{{c, 1}, std::vector<float>(static_cast<size_t>(c))};
  for (int ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) sum += x.data[ch * n + i];
    out.data[ch] = static_cast<float>(sum / static_cast<double>(n));
  }
  return out;
}

FTensor fully_connected(const FTensor& x, std::span<const float> weights,
                        std::span<const float> bias, int n_out) {
  const size_t n_in = x.data.size();
  check_float_params(weights, static_cast<size_t>(n_out) * n_in, bias,
                     static_cast<size_t>(n_out));
  FTensor out{{n_out}, std::vector<float>(static_cast<size_t>(n_out))};
  for (int o = 0; o < n_out; ++o) {
    double acc = bias[o];
    for (size_t i = 0; i < n_in; ++i)
      acc += static_cast<double>(weights[o * n_in + i]) * x.data[i];
    out.data[o] = static_cast<float>(acc);
  }
  return out;
}

FTensor residual_add(const FTensor& a, const FTensor& b) {
  require(a.shape == b.shape && a.data.size() == b.data.size(), ErrorCode::kShape,
          "residual operands differ in shape");
  FTensor out = a;
  for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  return out;
}

}  // namespace fp
}  // namespace kws
