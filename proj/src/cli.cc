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

#include "kws/cli.h"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <iomanip>
#include <memory>
#include <optional>
#include <random>
#include <sstream>

#include "kws/audio.h"
#include "kws/error.h"
#include "kws/frontend.h"
#include "kws/kwsm.h"
#include "kws/metrics.h"
#include "kws/model.h"
#include "kws/quantizer.h"

namespace kws {
namespace {

using nlohmann::json;

std::shared_ptr<spdlog::logger> logger() {
  static std::shared_ptr<spdlog::logger> log = [] {
    auto l = spdlog::stderr_color_mt("kws");
    const char* env = std::getenv("KWS_LOG");
    l->set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
    return l;
  }();
  return log;
}

std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

int label_index(const std::string& label) {
  const auto& labels = keyword_labels();
  const auto it = std::find(labels.begin(), labels.end(), label);
  if (it == labels.end()) throw Error(ErrorCode::kFormat, "unknown label '" + label + "'");
  return static_cast<int>(it - labels.begin());
}

std::string read_text(const std::string& path) {
  const auto bytes = read_file(path);
  return std::string(bytes.begin(), bytes.end());
}

// Features for every manifest entry (raw, un-normalized).
std::vector<FeatureMap> manifest_features(const std::string& manifest,
                                          const MfccConfig& config) {
  std::vector<FeatureMap> maps;
  for (const ManifestEntry& e : read_manifest(manifest))
    maps.push_back(extract_mfcc(load_wav(e.path), config));
  if (maps.empty()) throw Error(ErrorCode::kCalibration, "manifest has no entries");
  return maps;
}

// Quantizes `graph` using real audio when a manifest is given (norm stats are
// refreshed from it) and synthetic normalized maps otherwise.
ModelGraph quantize_with(ModelGraph graph, const std::string& calib_manifest,
                         int calib_count, uint64_t seed) {
  std::vector<FeatureMap> cal;
  if (!calib_manifest.empty()) {
    const auto raw = manifest_features(calib_manifest, graph.mfcc_config);
    graph.norm_stats = compute_norm_stats(raw);
    for (const auto& fm : raw) cal.push_back(normalize(fm, graph.norm_stats));
  } else {
    cal = synthetic_feature_maps(graph.mfcc_config, calib_count, seed);
  }
  logger()->info("calibrating {} on {} feature maps", graph.name, cal.size());
  return quantize_graph(graph, calibrate(graph, cal));
}

json topology_json(const ModelGraph& g) {
  const auto shapes = layer_output_shapes(g);
  json layers = json::array();
  for (size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    json j = {{"kind", std::string(layer_kind_name(l.kind))},
              {"output_shape", shapes[i]},
              {"params", l.weight_count() + l.bias_count()}};
    if (has_weights(l.kind)) {
      j["in_channels"] = l.geometry.in_channels;
      j["out_channels"] = l.geometry.out_channels;
      j["kernel"] = {l.geometry.kernel_h, l.geometry.kernel_w};
      j["stride"] = {l.geometry.stride_h, l.geometry.stride_w};
      j["relu"] = l.geometry.relu;
    }
    layers.push_back(std::move(j));
  }
  return {{"name", g.name},
          {"precision", std::string(precision_name(g.precision))},
          {"mfcc", g.mfcc_config.label()},
          {"input_shape", input_shape(g)},
          {"params", count_params(g)},
          {"labels", g.labels},
          {"layers", std::move(layers)}};
}

json cost_json(const CostReport& c) {
  return {{"params", c.params},
          {"macs", c.macs},
          {"flash_bytes", c.flash_bytes},
          {"peak_activation_bytes", c.peak_activation_bytes}};
}

struct Options {
  bool as_json = false;
  std::string wav, noise, out, model, manifest, measurements, arch = "tkws3";
  std::string calib_manifest;
  int mels = 15, windows = 63, calib = kDefaultCalibrationSize;
  double snr = 10.0, snr_mean = 10.0, snr_std = 5.0;
  bool snr_random = false, quantize = false;
  uint64_t seed = 0;
};

int cmd_featurize(const Options& o, std::ostream& out) {
  const MfccConfig config = make_mfcc_config(o.mels, o.windows);
  const FeatureMap fm = extract_mfcc(load_wav(o.wav), config);
  save_features(fm, o.out);
  if (o.as_json)
    out << json{{"out", o.out}, {"n_mels", fm.rows()}, {"n_windows", fm.cols()}}.dump() << '\n';
  else
    out << "wrote " << o.out << " (" << fm.config.label() << ")\n";
  return kExitOk;
}

int cmd_infer(const Options& o, std::ostream& out) {
  const ModelGraph model = load_model(o.model);
  const FeatureMap fm = extract_mfcc(load_wav(o.wav), model.mfcc_config);
  const auto probs = infer(model, fm, FeatureState::kRaw);
  const Prediction p = predict(probs, model.labels);
  if (o.as_json) {
    json j = {{"label", p.label}, {"index", p.index}, {"confidence", p.confidence},
              {"probabilities", probs}};
    out << j.dump() << '\n';
  } else {
    out << p.label << ' ' << fixed4(p.confidence) << '\n';
  }
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const ModelGraph model = load_model(o.model);
  const auto entries = read_manifest(o.manifest);
  if (entries.empty()) throw Error(ErrorCode::kEvaluation, "manifest has no entries");
  ConfusionMatrix cm(kNumClasses);
  for (const ManifestEntry& e : entries) {
    const int truth = label_index(e.label);
    const FeatureMap fm = extract_mfcc(load_wav(e.path), model.mfcc_config);
    const Prediction p = predict(infer(model, fm, FeatureState::kRaw), model.labels);
    logger()->debug("{}: {} -> {}", e.path.string(), e.label, p.label);
    cm.add(truth, p.index);
  }
  const double f1 = weighted_f1(cm);
  const auto& labels = keyword_labels();
  if (o.as_json) {
    json rows = json::array();
    for (int r = 0; r < cm.classes(); ++r) {
      json row = json::array();
      for (int c = 0; c < cm.classes(); ++c) row.push_back(cm.at(r, c));
      rows.push_back(std::move(row));
    }
    out << json{{"labels", labels}, {"confusion", rows}, {"samples", cm.total()},
                {"weighted_f1", f1}}
               .dump()
        << '\n';
    return kExitOk;
  }
  out << std::setw(8) << "true\\pred";
  for (const auto& l : labels) out << std::setw(6) << l;
  out << '\n';
  for (int r = 0; r < cm.classes(); ++r) {
    out << std::setw(9) << labels[r];
    for (int c = 0; c < cm.classes(); ++c) out << std::setw(6) << cm.at(r, c);
    out << '\n';
  }
  out << "samples: " << cm.total() << '\n';
  out << "weighted_f1: " << fixed4(f1) << '\n';
  return kExitOk;
}

int cmd_augment(const Options& o, std::ostream& out) {
  const AudioClip signal = load_wav(o.wav);
  const AudioClip noise = load_wav(o.noise);
  double snr = o.snr;
  if (o.snr_random) {
    std::mt19937_64 rng(o.seed);
    snr = sample_snr(rng, SnrSpec{o.snr_mean, o.snr_std});
  }
  save_wav(mix_at_snr(signal, noise, snr), o.out);
  if (o.as_json)
    out << json{{"out", o.out}, {"snr_db", snr}}.dump() << '\n';
  else
    out << "wrote " << o.out << " at " << fixed4(snr) << " dB SNR\n";
  return kExitOk;
}

int cmd_cost(const Options& o, std::ostream& out) {
  const CostReport c = cost_report(load_model(o.model));
  if (o.as_json) {
    out << cost_json(c).dump() << '\n';
  } else {
    out << "params: " << c.params << '\n'
        << "macs: " << c.macs << '\n'
        << "flash_bytes: " << c.flash_bytes << '\n'
        << "peak_activation_bytes: " << c.peak_activation_bytes << '\n';
  }
  return kExitOk;
}

int cmd_edp(const Options& o, std::ostream& out) {
  const auto rows = parse_measurements(read_text(o.measurements));
  const std::string report = format_heatmap(heatmap_report(rows));
  write_file(o.out, std::span(reinterpret_cast<const uint8_t*>(report.data()), report.size()));
  if (!o.as_json) out << report;
  else out << json{{"out", o.out}, {"rows", parse_heatmap(report).size()}}.dump() << '\n';
  return kExitOk;
}

int cmd_inspect(const Options& o, std::ostream& out) {
  const ModelGraph g = load_model(o.model);
  if (o.as_json) {
    out << topology_json(g).dump(2) << '\n';
    return kExitOk;
  }
  const auto shapes = layer_output_shapes(g);
  out << g.name << " (" << precision_name(g.precision) << ", mfcc " << g.mfcc_config.label()
      << ", " << count_params(g) << " params)\n";
  for (size_t i = 0; i < g.layers.size(); ++i) {
    const LayerSpec& l = g.layers[i];
    out << std::setw(3) << i << "  " << std::left << std::setw(15) << layer_kind_name(l.kind)
        << std::right;
    if (has_weights(l.kind))
      out << ' ' << l.geometry.in_channels << "->" << l.geometry.out_channels << " k"
          << l.geometry.kernel_h << 'x' << l.geometry.kernel_w << " s" << l.geometry.stride_h
          << 'x' << l.geometry.stride_w << (l.geometry.relu ? " relu" : "");
    out << "  out (";
    for (size_t d = 0; d < shapes[i].size(); ++d) out << (d ? ", " : "") << shapes[i][d];
    out << ")\n";
  }
  return kExitOk;
}

int cmd_build(const Options& o, std::ostream& out) {
  const MfccConfig config = make_mfcc_config(o.mels, o.windows);
  const uint64_t seed = o.seed ? o.seed : kDefaultInitSeed;
  ModelGraph g = o.arch == "dscnn"
                     ? build_dscnn(config, {}, seed)
                     : build_tkws(default_tkws_hyper(o.arch == "tkws2" ? 2 : 3), config, seed);
  if (o.quantize) g = quantize_with(std::move(g), o.calib_manifest, o.calib, seed);
  save_model(g, o.out);
  if (o.as_json)
    out << json{{"out", o.out}, {"params", count_params(g)},
                {"precision", std::string(precision_name(g.precision))}}
               .dump()
        << '\n';
  else
    out << "wrote " << o.out << " (" << g.name << ", " << precision_name(g.precision) << ", "
        << count_params(g) << " params)\n";
  return kExitOk;
}

int cmd_quantize(const Options& o, std::ostream& out) {
  const ModelGraph g = quantize_with(load_model(o.model), o.calib_manifest, o.calib, o.seed);
  save_model(g, o.out);
  if (o.as_json) out << json{{"out", o.out}}.dump() << '\n';
  else out << "wrote " << o.out << " (int8)\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Keyword-spotting front end, int8 inference engine and cost/EDP tools", "kws"};
  app.set_config("--config", "", "TOML/INI file supplying flag defaults");
  app.require_subcommand(1);
  Options o;
  const std::vector<int> mel_choices{15, 30};
  const std::vector<int> window_choices{32, 63};

  auto json_flag = [&](CLI::App* sub) {
    sub->add_flag("--json", o.as_json, "Machine-readable JSON output");
  };
  auto mfcc_flags = [&](CLI::App* sub) {
    sub->add_option("--mels", o.mels, "Mel filter banks")->check(CLI::IsMember(mel_choices));
    sub->add_option("--windows", o.windows, "Time windows")->check(CLI::IsMember(window_choices));
  };

  auto* featurize = app.add_subcommand("featurize", "Extract MFCC features to a KWSF file");
  featurize->add_option("--wav", o.wav, "Input WAV")->required()->check(CLI::ExistingFile);
  mfcc_flags(featurize);
  featurize->add_option("--out", o.out, "Output .kwsf")->required();
  json_flag(featurize);

  auto* infer_cmd = app.add_subcommand("infer", "Classify one WAV file");
  infer_cmd->add_option("--model", o.model, "KWSM model")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--wav", o.wav, "Input WAV")->required()->check(CLI::ExistingFile);
  json_flag(infer_cmd);

  auto* eval = app.add_subcommand("eval", "Confusion matrix and weighted F1 over a manifest");
  eval->add_option("--model", o.model, "KWSM model")->required()->check(CLI::ExistingFile);
  eval->add_option("--manifest", o.manifest, "path<TAB>label manifest")
      ->required()
      ->check(CLI::ExistingFile);
  json_flag(eval);

  auto* augment = app.add_subcommand("augment", "Mix noise into a clip at a target SNR");
  augment->add_option("--wav", o.wav, "Signal WAV")->required()->check(CLI::ExistingFile);
  augment->add_option("--noise", o.noise, "Noise WAV")->required()->check(CLI::ExistingFile);
  auto* snr_opt = augment->add_option("--snr", o.snr, "SNR in dB");
  auto* snr_rand = augment->add_flag("--snr-random", o.snr_random,
                                     "Draw the SNR from N(--snr-mean, --snr-std)");
  snr_opt->excludes(snr_rand);
  augment->add_option("--snr-mean", o.snr_mean, "Mean of the random SNR (dB)");
  augment->add_option("--snr-std", o.snr_std, "Std of the random SNR (dB)")
      ->check(CLI::NonNegativeNumber);
  augment->add_option("--seed", o.seed, "Seed for --snr-random");
  augment->add_option("--out", o.out, "Output WAV")->required();
  json_flag(augment);

  auto* cost = app.add_subcommand("cost", "Parameter, MAC and memory counts");
  cost->add_option("--model", o.model, "KWSM model")->required()->check(CLI::ExistingFile);
  json_flag(cost);

  auto* edp = app.add_subcommand("edp", "Compose stage measurements into an EDP report");
  edp->add_option("--measurements", o.measurements, "Measurement CSV")
      ->required()
      ->check(CLI::ExistingFile);
  edp->add_option("--out", o.out, "Report CSV")->required();
  json_flag(edp);

  auto* inspect = app.add_subcommand("inspect", "Print model topology");
  inspect->add_option("--model", o.model, "KWSM model")->required()->check(CLI::ExistingFile);
  json_flag(inspect);

  auto* build = app.add_subcommand("build", "Build a seeded model (float32 or int8)");
  build->add_option("--arch", o.arch, "Architecture")
      ->check(CLI::IsMember({"tkws2", "tkws3", "dscnn"}));
  mfcc_flags(build);
  build->add_option("--seed", o.seed, "Weight-init and calibration seed");
  build->add_flag("--quantize", o.quantize, "Emit an int8 model");
  build->add_option("--calib", o.calib, "Synthetic calibration maps")
      ->check(CLI::PositiveNumber);
  build->add_option("--calib-manifest", o.calib_manifest, "Calibrate on manifest audio")
      ->check(CLI::ExistingFile);
  build->add_option("--out", o.out, "Output .kwsm")->required();
  json_flag(build);

  auto* quantize = app.add_subcommand("quantize", "Post-training int8 quantization");
  quantize->add_option("--model", o.model, "Float KWSM model")
      ->required()
      ->check(CLI::ExistingFile);
  quantize->add_option("--calib", o.calib, "Synthetic calibration maps")
      ->check(CLI::PositiveNumber);
  quantize->add_option("--calib-manifest", o.calib_manifest, "Calibrate on manifest audio")
      ->check(CLI::ExistingFile);
  quantize->add_option("--seed", o.seed, "Synthetic calibration seed");
  quantize->add_option("--out", o.out, "Output .kwsm")->required();
  json_flag(quantize);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (augment->parsed() && snr_opt->count() == 0 && !o.snr_random)
      throw CLI::RequiredError("--snr or --snr-random");
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitUsage;
  }

  try {
    if (featurize->parsed()) return cmd_featurize(o, out);
    if (infer_cmd->parsed()) return cmd_infer(o, out);
    if (eval->parsed()) return cmd_eval(o, out);
    if (augment->parsed()) return cmd_augment(o, out);
    if (cost->parsed()) return cmd_cost(o, out);
    if (edp->parsed()) return cmd_edp(o, out);
    if (inspect->parsed()) return cmd_inspect(o, out);
    if (build->parsed()) return cmd_build(o, out);
    if (quantize->parsed()) return cmd_quantize(o, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  err << app.help();
  return kExitUsage;
}

}  // namespace kws
