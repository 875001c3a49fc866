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

// Acceptance suite: one PASS/FAIL line per headline criterion, with the
// measured figures alongside. Exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "kernel_cases.h"
#include "kws/error.h"
#include "kws/frontend.h"
#include "kws/kwsm.h"
#include "kws/metrics.h"
#include "kws/model.h"
#include "kws/quantizer.h"
#include "oracle/mfcc_oracle.h"
#include "test_util.h"

using namespace kws;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

bool within(double value, double target, double tol) {
  return std::abs(value - target) <= tol * target;
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::vector<ModelGraph> built_models(const MfccConfig& c) {
  return {build_tkws(default_tkws_hyper(2), c), build_tkws(default_tkws_hyper(3), c),
          build_dscnn(c)};
}

Outcome parameter_counts() {
  bool ok = true;
  std::ostringstream d;
  for (int mels : {15, 30}) {
    const auto c32 = make_mfcc_config(mels, 32), c63 = make_mfcc_config(mels, 63);
    const int64_t t2 = count_params(build_tkws(default_tkws_hyper(2), c32));
    const int64_t t3 = count_params(build_tkws(default_tkws_hyper(3), c32));
    const int64_t ds32 = count_params(build_dscnn(c32));
    const int64_t ds63 = count_params(build_dscnn(c63));
    ok &= t2 == count_params(build_tkws(default_tkws_hyper(2), c63));
    ok &= t3 == count_params(build_tkws(default_tkws_hyper(3), c63));
    ok &= within(t2, mels == 15 ? 4600 : 5000, 0.15);
    ok &= within(t3, mels == 15 ? 14400 : 14900, 0.15);
    ok &= within(ds32, 46500, 0.15) && within(ds63, 46500, 0.15);
    d << mels << "mel: tkws2=" << t2 << " tkws3=" << t3 << " dscnn=" << ds32 << "; ";
  }
  for (int blocks : {2, 3}) {
    const auto h = default_tkws_hyper(blocks);
    const int64_t delta = count_params(build_tkws(h, make_mfcc_config(30, 32))) -
                          count_params(build_tkws(h, make_mfcc_config(15, 32)));
    ok &= delta >= 300 && delta <= 600;
    d << "tkws" << blocks << " 30-15 delta=" << delta << (blocks == 2 ? "; " : "");
  }
  return {ok, d.str()};
}

Outcome mfcc_oracle() {
  std::mt19937_64 rng(20251015);
  std::uniform_int_distribution<int> amp(500, 32767);
  double worst = 0.0;
  int runs = 0;
  for (int i = 0; i < 10; ++i) {
    const auto clip = testing::random_clip(rng, amp(rng));
    for (const auto& c : standard_mfcc_configs()) {
      const auto got = extract_mfcc(clip, c);
      const auto want = oracle::naive_mfcc(clip.samples, c.n_mels, c.n_windows, c.fft_size);
      worst = std::max(worst, oracle::relative_frobenius(got.data, want));
      ++runs;
    }
  }
  return {worst <= 1e-4, fmt("%d clip/config pairs, max relative Frobenius error %.3e "
                             "(limit 1e-4)", runs, worst)};
}

Outcome frame_plan_check() {
  const auto a = frame_plan(make_mfcc_config(15, 32));
  const auto b = frame_plan(make_mfcc_config(15, 63));
  bool ok = a.hop == 483 && b.hop == 249;
  int worst_end = 0;
  for (const auto& c : standard_mfcc_configs()) {
    const auto p = frame_plan(c);
    worst_end = std::max(worst_end, p.end_sample());
    ok &= p.end_sample() <= kClipSamples && p.n_frames == c.n_windows;
  }
  return {ok, fmt("hop(32,1024)=%d hop(63,512)=%d, last frame ends at %d <= 16000", a.hop,
                  b.hop, worst_end)};
}

// Argmax agreement between a float graph and its int8 twin, plus the number of
// distinct classes the float graph predicts over the maps.
std::pair<double, int> agreement(const ModelGraph& f, const ModelGraph& q,
                                 const std::vector<FeatureMap>& maps) {
  int agree = 0;
  std::vector<bool> seen(kNumClasses, false);
  for (const auto& fm : maps) {
    const int want = predict(infer(f, fm)).index;
    seen[want] = true;
    agree += want == predict(infer(q, fm)).index;
  }
  return {static_cast<double>(agree) / maps.size(),
          static_cast<int>(std::count(seen.begin(), seen.end(), true))};
}

Outcome kernel_fidelity() {
  constexpr int kCases = 1000;
  std::mt19937_64 rng(77);
  struct Kernel {
    const char* name;
    std::function<int()> run;
  };
  const std::vector<Kernel> kernels = {
      {"pointwise", [&] { return testing::pointwise_case(rng); }},
      {"depthwise1d", [&] { return testing::depthwise1d_case(rng); }},
      {"conv2d", [&] { return testing::conv2d_case(rng, false); }},
      {"depthwise2d", [&] { return testing::conv2d_case(rng, true); }},
      {"gap", [&] { return testing::gap_case(rng); }},
      {"fc", [&] { return testing::fc_case(rng); }},
      {"residual_add", [&] { return testing::residual_case(rng); }},
  };
  bool ok = true;
  std::ostringstream d;
  for (const auto& k : kernels) {
    int worst = 0;
    for (int i = 0; i < kCases; ++i) worst = std::max(worst, k.run());
    ok &= worst <= 1;
    d << k.name << " " << worst << "LSB, ";
  }
  d << "(" << kCases << " cases each); argmax agreement over 1000 N(0,1) maps:";
  double lowest = 1.0, stress_low = 1.0;
  for (const auto& c : standard_mfcc_configs()) {
    for (const auto& g : built_models(c)) {
      const auto q =
          quantize_graph(g, calibrate(g, synthetic_feature_maps(c, kDefaultCalibrationSize, 1)));
      const auto [rate, classes] = agreement(g, q, synthetic_feature_maps(c, 1000, 2));
      lowest = std::min(lowest, rate);
      d << " " << g.name << "@" << c.label() << "=" << fmt("%.3f", rate) << "/" << classes
        << "cls";
      // Informational: structured maps whose pooled features vary per map.
      if (g.name.rfind("tkws", 0) == 0) {
        const auto qs = quantize_graph(
            g, calibrate(g, testing::structured_feature_maps(c, kDefaultCalibrationSize, 3)));
        stress_low = std::min(
            stress_low, agreement(g, qs, testing::structured_feature_maps(c, 1000, 4)).first);
      }
    }
  }
  ok &= lowest >= 0.95;
  d << " (min " << fmt("%.3f", lowest) << ", limit 0.95; informational structured-map "
       "minimum over TKWS " << fmt("%.3f", stress_low) << ")";
  return {ok, d.str()};
}

Outcome edp_methodology() {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.01, 500.0), k(0.1, 10.0);
  auto pre = [](double l, double e) { return StageMeasurement{l, e, Stage::kPreprocessing}; };
  auto inf = [](double l, double e) { return StageMeasurement{l, e, Stage::kInference}; };
  int violations = 0;
  constexpr int kTuples = 10000;
  for (int i = 0; i < kTuples; ++i) {
    const double l1 = u(rng), e1 = u(rng), l2 = u(rng), e2 = u(rng), s = k(rng), dl = k(rng);
    const auto base = compose_edp(pre(l1, e1), inf(l2, e2));
    const auto rel = [&](double a, double b) { return std::abs(a - b) <= 1e-9 * std::abs(b); };
    bool good = rel(base.edp_mj_ms, (l1 + l2) * (e1 + e2));
    good &= rel(compose_edp(pre(s * l1, e1), inf(s * l2, e2)).edp_mj_ms, s * base.edp_mj_ms);
    good &= rel(compose_edp(pre(l1, s * e1), inf(l2, s * e2)).edp_mj_ms, s * base.edp_mj_ms);
    good &= compose_edp(pre(l1 + dl, e1), inf(l2, e2)).edp_mj_ms > base.edp_mj_ms;
    good &= compose_edp(pre(l1, e1 + dl), inf(l2, e2)).edp_mj_ms > base.edp_mj_ms;
    good &= compose_edp(pre(l1, e1), inf(l2 + dl, e2)).edp_mj_ms > base.edp_mj_ms;
    good &= compose_edp(pre(l1, e1), inf(l2, e2 + dl)).edp_mj_ms > base.edp_mj_ms;
    violations += !good;
  }
  const auto rows = testing::synthetic_measurements(
      rng, {"stm32f4", "stm32h7", "stm32n6"},
      {"dscnn", "liconet_s", "tenet6", "tenet6_n", "tkws2", "tkws3"},
      {"15x32", "15x63", "30x32", "30x63"});
  const auto report = heatmap_report(rows);
  const auto text = format_heatmap(report);
  const auto again = format_heatmap(parse_heatmap(text));
  const bool stable = again == text && report.size() == 72;
  return {violations == 0 && stable,
          fmt("%d/%d property tuples violated; 3x6x4 heatmap rows=%zu, re-emitted "
              "byte-identical=%s",
              violations, kTuples, report.size(), stable ? "yes" : "no")};
}

Outcome weighted_f1_check() {
  const double example = weighted_f1(ConfusionMatrix(3, {5, 1, 0, 1, 3, 1, 0, 1, 4}));
  std::mt19937_64 rng(6);
  std::vector<int> perm(kNumClasses);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto cm = testing::random_confusion(rng);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    worst = std::max(worst, std::abs(weighted_f1(cm.relabeled(perm)) - weighted_f1(cm)));
  }
  return {example == 0.75 && worst <= 1e-12,
          fmt("3-class example = %.17g; max |dF1| under relabeling over 100 matrices = %.1e",
              example, worst)};
}

Outcome kwsm_round_trip() {
  testing::TempDir dir;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> d;
  int models = 0, mismatches = 0, rejected = 0, damaged = 0;
  for (const auto& c : standard_mfcc_configs()) {
    for (const auto& f : built_models(c)) {
      const auto q = quantize_graph(f, calibrate(f, synthetic_feature_maps(c, 32, 3)));
      for (const auto& g : {f, q}) {
        const auto path = dir / "m.kwsm";
        save_model(g, path);
        const auto back = load_model(path);
        ++models;
        for (int i = 0; i < 5; ++i) {
          FeatureMap fm(c);
          for (auto& v : fm.data) v = d(rng);
          mismatches += infer(back, fm) != infer(g, fm);
        }
        // Truncation and a single flipped bit must both fail the checksum.
        auto bytes = read_file(path);
        std::vector<std::vector<uint8_t>> bad = {
            std::vector<uint8_t>(bytes.begin(), bytes.end() - 7), bytes};
        bad[1][std::uniform_int_distribution<size_t>(10, bytes.size() - 5)(rng)] ^= 0x04;
        for (const auto& b : bad) {
          ++damaged;
          try {
            decode_model(b);
          } catch (const Error& e) {
            rejected += e.code() == ErrorCode::kCorruption;
          }
        }
      }
    }
  }
  return {mismatches == 0 && rejected == damaged,
          fmt("%d models (float+int8), %d inference mismatches; %d/%d damaged files "
              "rejected by CRC",
              models, mismatches, rejected, damaged)};
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    Outcome (*run)();
  };
  const Criterion criteria[] = {
      {"parameter-count reproduction", parameter_counts},
      {"MFCC oracle equivalence", mfcc_oracle},
      {"frame-plan correctness", frame_plan_check},
      {"quantized-kernel fidelity", kernel_fidelity},
      {"EDP methodology", edp_methodology},
      {"weighted F1", weighted_f1_check},
      {"KWSM round trip", kwsm_round_trip},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s  %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str(),
                secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(std::size(criteria)) - failed,
              std::size(criteria));
  return failed == 0 ? 0 : 1;
}
