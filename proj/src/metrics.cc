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

#include "kws/metrics.h"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>
#include <sstream>
#include <tuple>

#include "kws/error.h"
#include "kws/kwsm.h"

namespace kws {
namespace {

std::string trim(std::string s) {
  const auto ws = [](unsigned char c) { return std::isspace(c) != 0; };
  s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), ws));
  s.erase(std::find_if_not(s.rbegin(), s.rend(), ws).base(), s.end());
  return s;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

double parse_number(const std::string& s, int line_no) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size())
    throw Error(ErrorCode::kFormat,
                "line " + std::to_string(line_no) + ": '" + s + "' is not a number");
  return v;
}

// Calls fn(fields, line_no) for every data row after checking the header.
template <typename Fn>
void for_each_row(const std::string& text, const std::string& header, size_t width, Fn fn) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  bool seen_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    if (!seen_header) {
      if (trim(line) != header)
        throw Error(ErrorCode::kFormat, "expected header '" + header + "'");
      seen_header = true;
      continue;
    }
    const auto fields = split_csv(line);
    if (fields.size() != width)
      throw Error(ErrorCode::kFormat, "line " + std::to_string(line_no) + ": expected " +
                                          std::to_string(width) + " fields");
    fn(fields, line_no);
  }
  if (!seen_header) throw Error(ErrorCode::kFormat, "missing header '" + header + "'");
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(int classes)
    : classes_(classes), counts_(static_cast<size_t>(classes) * classes, 0) {
  if (classes < 1) throw Error(ErrorCode::kArgument, "need at least one class");
}

ConfusionMatrix::ConfusionMatrix(int classes, std::vector<int64_t> counts)
    : classes_(classes), counts_(std::move(counts)) {
  if (classes < 1 || counts_.size() != static_cast<size_t>(classes) * classes)
    throw Error(ErrorCode::kArgument, "confusion matrix must be classes x classes");
  for (int64_t c : counts_)
    if (c < 0) throw Error(ErrorCode::kArgument, "negative confusion count");
}

void ConfusionMatrix::add(int truth, int predicted, int64_t count) {
  if (truth < 0 || truth >= classes_ || predicted < 0 || predicted >= classes_)
    throw Error(ErrorCode::kArgument, "class index out of range");
  if (count < 0) throw Error(ErrorCode::kArgument, "negative count");
  counts_[static_cast<size_t>(truth) * classes_ + predicted] += count;
}

int64_t ConfusionMatrix::at(int truth, int predicted) const {
  return counts_.at(static_cast<size_t>(truth) * classes_ + predicted);
}

int64_t ConfusionMatrix::total() const {
  int64_t t = 0;
  for (int64_t c : counts_) t += c;
  return t;
}

ConfusionMatrix ConfusionMatrix::relabeled(std::span<const int> perm) const {
  if (perm.size() != static_cast<size_t>(classes_))
    throw Error(ErrorCode::kArgument, "permutation size mismatch");
  ConfusionMatrix out(classes_);
  for (int r = 0; r < classes_; ++r)
    for (int c = 0; c < classes_; ++c) out.add(perm[r], perm[c], at(r, c));
  return out;
}

double weighted_f1(const ConfusionMatrix& cm) {
  const int64_t total = cm.total();
  if (total <= 0) throw Error(ErrorCode::kEvaluation, "empty confusion matrix");
  double acc = 0.0;
  for (int k = 0; k < cm.classes(); ++k) {
    int64_t support = 0, predicted = 0;
    for (int j = 0; j < cm.classes(); ++j) {
      support += cm.at(k, j);
      predicted += cm.at(j, k);
    }
    const int64_t tp = cm.at(k, k);
    // support * F1 with F1 = 2PR/(P+R) = 2tp/(predicted + support).
    if (tp > 0)
      acc += static_cast<double>(support * 2 * tp) / static_cast<double>(predicted + support);
  }
  return std::clamp(acc / static_cast<double>(total), 0.0, 1.0);
}

int64_t count_params(const ModelGraph& graph) {
  int64_t n = 0;
  for (const LayerSpec& l : graph.layers)
    n += static_cast<int64_t>(l.weight_count() + l.bias_count());
  return n;
}

int64_t count_macs(const ModelGraph& graph) {
  const auto shapes = layer_output_shapes(graph);
  int64_t macs = 0;
  for (size_t i = 0; i < graph.layers.size(); ++i) {
    const LayerSpec& l = graph.layers[i];
    const auto positions = static_cast<int64_t>(element_count(shapes[i])) /
                           std::max<int64_t>(shapes[i].empty() ? 1 : shapes[i][0], 1);
    switch (l.kind) {
      case LayerKind::kPointwise:
      case LayerKind::kDepthwise1d:
      case LayerKind::kConv2d:
      case LayerKind::kDepthwise2d:
        // weight_count already folds c_out, c_in (or 1) and kernel taps.
        macs += static_cast<int64_t>(l.weight_count()) * positions;
        break;
      case LayerKind::kFc:
        macs += static_cast<int64_t>(l.weight_count());
        break;
      default:
        break;
    }
  }
  return macs;
}

CostReport cost_report(const ModelGraph& graph) {
  const auto shapes = layer_output_shapes(graph);
  const int64_t elem = graph.precision == Precision::kInt8 ? 1 : 4;
  CostReport r;
  r.params = count_params(graph);
  r.macs = count_macs(graph);
  r.flash_bytes = static_cast<int64_t>(encode_model(graph).size());
  Shape in = input_shape(graph);
  for (const Shape& out : shapes) {
    const auto bytes = static_cast<int64_t>(element_count(in) + element_count(out)) * elem;
    r.peak_activation_bytes = std::max(r.peak_activation_bytes, bytes);
    in = out;
  }
  return r;
}

std::string_view stage_name(Stage s) {
  return s == Stage::kPreprocessing ? "preprocessing" : "inference";
}

Stage parse_stage(std::string_view name) {
  if (name == "preprocessing") return Stage::kPreprocessing;
  if (name == "inference") return Stage::kInference;
  throw Error(ErrorCode::kFormat, "unknown stage '" + std::string(name) + "'");
}

EdpReport compose_edp(const StageMeasurement& pre, const StageMeasurement& inf) {
  if (pre.stage != Stage::kPreprocessing || inf.stage != Stage::kInference)
    throw Error(ErrorCode::kArgument, "expected (preprocessing, inference) measurements");
  for (const auto* m : {&pre, &inf})
    if (!(m->latency_ms > 0.0) || !(m->energy_mj > 0.0))
      throw Error(ErrorCode::kArgument, "latency and energy must be positive");
  EdpReport r;
  r.total_latency_ms = pre.latency_ms + inf.latency_ms;
  r.total_energy_mj = pre.energy_mj + inf.energy_mj;
  r.edp_mj_ms = r.total_latency_ms * r.total_energy_mj;
  return r;
}

std::vector<HeatmapRow> heatmap_report(std::span<const MeasurementRow> rows) {
  using Key = std::tuple<std::string, std::string, std::string>;  // platform, mfcc, model
  struct Pair {
    std::optional<StageMeasurement> pre, inf;
  };
  std::map<Key, Pair> grouped;
  for (const MeasurementRow& r : rows) {
    Pair& p = grouped[{r.platform, r.mfcc, r.model}];
    auto& slot = r.stage == Stage::kPreprocessing ? p.pre : p.inf;
    if (slot)
      throw Error(ErrorCode::kArgument, "duplicate " + std::string(stage_name(r.stage)) +
                                            " row for (" + r.platform + ", " + r.model +
                                            ", " + r.mfcc + ")");
    slot = StageMeasurement{r.latency_ms, r.energy_mj, r.stage};
  }
  std::vector<HeatmapRow> out;
  for (const auto& [key, p] : grouped) {
    const auto& [platform, mfcc, model] = key;
    if (!p.pre || !p.inf)
      throw Error(ErrorCode::kIncompleteMeasurement,
                  "(" + platform + ", " + model + ", " + mfcc + ") has no " +
                      (p.pre ? "inference" : "preprocessing") + " measurement");
    const EdpReport e = compose_edp(*p.pre, *p.inf);
    out.push_back({platform, model, mfcc, e.total_latency_ms, e.total_energy_mj, e.edp_mj_ms});
  }
  return out;
}

std::string format_sig4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::vector<MeasurementRow> parse_measurements(const std::string& text) {
  std::vector<MeasurementRow> rows;
  for_each_row(text, kMeasurementHeader, 6, [&](const auto& f, int line_no) {
    MeasurementRow r{f[0], f[1], f[2], parse_stage(f[3]), parse_number(f[4], line_no),
                     parse_number(f[5], line_no)};
    if (!(r.latency_ms > 0.0) || !(r.energy_mj > 0.0))
      throw Error(ErrorCode::kFormat,
                  "line " + std::to_string(line_no) + ": latency and energy must be positive");
    rows.push_back(std::move(r));
  });
  return rows;
}

std::string format_measurements(std::span<const MeasurementRow> rows) {
  std::ostringstream out;
  out << kMeasurementHeader << '\n';
  char buf[64];
  for (const MeasurementRow& r : rows) {
    out << r.platform << ',' << r.model << ',' << r.mfcc << ',' << stage_name(r.stage);
    std::snprintf(buf, sizeof buf, ",%.17g", r.latency_ms);
    out << buf;
    std::snprintf(buf, sizeof buf, ",%.17g", r.energy_mj);
    out << buf << '\n';
  }
  return out.str();
}

std::string format_heatmap(std::span<const HeatmapRow> rows) {
  std::ostringstream out;
  out << kHeatmapHeader << '\n';
  for (const HeatmapRow& r : rows)
    out << r.platform << ',' << r.model << ',' << r.mfcc << ',' << format_sig4(r.latency_ms)
        << ',' << format_sig4(r.energy_mj) << ',' << format_sig4(r.edp_mj_ms) << '\n';
  return out.str();
}

std::vector<HeatmapRow> parse_heatmap(const std::string& text) {
  std::vector<HeatmapRow> rows;
  for_each_row(text, kHeatmapHeader, 6, [&](const auto& f, int line_no) {
    rows.push_back({f[0], f[1], f[2], parse_number(f[3], line_no),
                    parse_number(f[4], line_no), parse_number(f[5], line_no)});
  });
  return rows;
}

}  // namespace kws
