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

#ifndef KWS_METRICS_H_
#define KWS_METRICS_H_

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kws/model.h"

namespace kws {

// Rows are true classes, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes = kNumClasses);
  ConfusionMatrix(int classes, std::vector<int64_t> counts);

  void add(int truth, int predicted, int64_t count = 1);
  int64_t at(int truth, int predicted) const;
  int classes() const { return classes_; }
  int64_t total() const;

  // Same permutation applied to rows and columns: new class perm[i] is old i.
  ConfusionMatrix relabeled(std::span<const int> perm) const;

 private:
  int classes_;
  std::vector<int64_t> counts_;
};

// Support-weighted mean of per-class F1.
double weighted_f1(const ConfusionMatrix& cm);

int64_t count_params(const ModelGraph& graph);
int64_t count_macs(const ModelGraph& graph);

struct CostReport {
  int64_t params = 0;
  int64_t macs = 0;
  int64_t flash_bytes = 0;            // serialized KWSM size
  int64_t peak_activation_bytes = 0;  // max over layers of input + output
};

CostReport cost_report(const ModelGraph& graph);

enum class Stage { kPreprocessing, kInference };

std::string_view stage_name(Stage s);
Stage parse_stage(std::string_view name);

struct StageMeasurement {
  double latency_ms = 0.0;
  double energy_mj = 0.0;
  Stage stage = Stage::kPreprocessing;
};

struct EdpReport {
  double total_latency_ms = 0.0;
  double total_energy_mj = 0.0;
  double edp_mj_ms = 0.0;
};

EdpReport compose_edp(const StageMeasurement& pre, const StageMeasurement& inf);

struct MeasurementRow {
  std::string platform;
  std::string model;
  std::string mfcc;
  Stage stage = Stage::kPreprocessing;
  double latency_ms = 0.0;
  double energy_mj = 0.0;
};

struct HeatmapRow {
  std::string platform;
  std::string model;
  std::string mfcc;
  double latency_ms = 0.0;
  double energy_mj = 0.0;
  double edp_mj_ms = 0.0;
};

// One row per (platform, model, mfcc), sorted by (platform, mfcc, model).
// Throws kIncompleteMeasurement naming the triple if a stage is missing.
std::vector<HeatmapRow> heatmap_report(std::span<const MeasurementRow> rows);

inline constexpr const char* kMeasurementHeader =
    "platform,model,mfcc,stage,latency_ms,energy_mj";
inline constexpr const char* kHeatmapHeader = "platform,model,mfcc,L_ms,E_mj,EDP_mj_ms";

std::vector<MeasurementRow> parse_measurements(const std::string& text);
std::string format_measurements(std::span<const MeasurementRow> rows);
// Values printed with 4 significant digits.
std::string format_heatmap(std::span<const HeatmapRow> rows);
std::vector<HeatmapRow> parse_heatmap(const std::string& text);

// "%.4g"
std::string format_sig4(double v);

}  // namespace kws

#endif  // KWS_METRICS_H_
