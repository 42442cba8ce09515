// Copyright 2026 The xdet Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "xdet/cli.h"

#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "xdet/coco_metrics.h"
#include "xdet/grid.h"
#include "xdet/ingest.h"
#include "xdet/pipeline.h"
#include "xdet/semantic.h"
#include "xdet/vocab_align.h"

namespace xdet {

namespace {

using nlohmann::json;

void InitLogging() {
  static const bool done = [] {
    auto logger = spdlog::stderr_color_mt("xdet");
    spdlog::set_default_logger(logger);
    const char* level = std::getenv("XDET_LOG");
    spdlog::set_level(level ? spdlog::level::from_str(level) : spdlog::level::warn);
    return true;
  }();
  (void)done;
}

struct Options {
  std::string gt;
  std::string dets;
  std::string mode = "closed";
  std::string map;
  std::string src_gt;
  std::string src_emb;
  std::string tgt_emb;
  std::string region_emb;
  std::optional<double> tau;
  std::optional<int> top_k;
  std::optional<double> iou_diagnostics;
  std::string config;
  std::string out;
  std::string format;
  std::string source_id;
  std::string target_id;
  std::vector<double> taus{0.5, 0.6, 0.7};
  int threads = 0;
};

EvalConfig BuildEvalConfig(const Options& o) {
  EvalConfig c;
  if (!o.config.empty()) c = EvalConfigFromJson(ReadJsonFile(o.config));
  if (o.tau) c.tau = *o.tau;
  if (o.top_k) c.top_k = *o.top_k;
  if (o.iou_diagnostics) c.diagnostics_iou = *o.iou_diagnostics;
  c.Validate();
  return c;
}

void RequireFlag(const std::string& value, const char* flag, const char* why) {
  if (value.empty()) {
    throw Error(ErrorKind::kUsage, fmt::format("{} is required {}", flag, why));
  }
}

std::string PairName(const Options& o) {
  const std::string src = !o.source_id.empty()
                              ? o.source_id
                              : (!o.src_gt.empty()
                                     ? std::filesystem::path(o.src_gt).stem().string()
                                     : std::filesystem::path(o.dets).stem().string());
  const std::string tgt = !o.target_id.empty()
                              ? o.target_id
                              : std::filesystem::path(o.gt).stem().string();
  return src + "→" + tgt;
}

// Owns everything a PairInputs points into.
struct LoadedPair {
  DatasetAnnotations gt;
  DetectionSet dets;
  std::optional<Vocabulary> source_vocab;
  std::optional<EmbeddingTable> src_emb;
  std::optional<EmbeddingTable> tgt_emb;
  std::optional<RegionEmbeddings> region_emb;
  PairInputs inputs;
};

std::unique_ptr<LoadedPair> LoadPair(const Options& o, bool need_emb) {
  auto p = std::make_unique<LoadedPair>();
  p->gt = LoadGroundTruth(o.gt, o.target_id);
  p->dets = LoadDetections(o.dets, p->gt, o.source_id);
  if (!o.src_gt.empty()) {
    p->source_vocab = LoadGroundTruth(o.src_gt, o.source_id).vocabulary;
  }
  if (need_emb) {
    p->src_emb = LoadEmbeddings(o.src_emb);
    p->tgt_emb = LoadEmbeddings(o.tgt_emb);
  }
  if (!o.region_emb.empty()) p->region_emb = LoadRegionEmbeddings(o.region_emb);
  p->inputs.target_gt = &p->gt;
  p->inputs.dets = &p->dets;
  p->inputs.source_vocab = p->source_vocab ? &*p->source_vocab : nullptr;
  if (!o.map.empty()) p->inputs.mapping = LoadLabelMapping(o.map);
  p->inputs.src_emb = p->src_emb ? &*p->src_emb : nullptr;
  p->inputs.tgt_emb = p->tgt_emb ? &*p->tgt_emb : nullptr;
  p->inputs.region_emb = p->region_emb ? &*p->region_emb : nullptr;
  return p;
}

std::string Cell(const std::optional<double>& v) {
  return v ? fmt::format("{:.3f}", *v) : std::string("--");
}

// Fixed-order metric table for one or two reports.
std::string EvalTable(const EvalConfig& config,
                      const std::vector<std::pair<std::string, const CellReport*>>& cols) {
  std::string out = "| metric |";
  std::string rule = "|---|";
  for (const auto& [name, r] : cols) {
    out += " " + name + " |";
    rule += "---|";
  }
  out += "\n" + rule + "\n";
  auto row = [&](const std::string& name, auto get) {
    out += "| " + name + " |";
    for (const auto& [n, r] : cols) out += " " + Cell(get(*r)) + " |";
    out += "\n";
  };
  row("mAP@[.50:.95]", [](const CellReport& r) { return r.map_5095; });
  for (size_t t = 0; t < config.iou_thresholds.size(); ++t) {
    row(fmt::format("AP@{:.2f}", config.iou_thresholds[t]), [t](const CellReport& r) {
      return t < r.ap_per_threshold.size() ? r.ap_per_threshold[t] : std::nullopt;
    });
  }
  row("AP_small", [](const CellReport& r) { return r.ap_small; });
  row("AP_medium", [](const CellReport& r) { return r.ap_medium; });
  row("AP_large", [](const CellReport& r) { return r.ap_large; });
  return out;
}

int RunEval(const Options& o, std::ostream& out) {
  const GridMode mode = ParseGridMode(o.mode);
  const bool need_emb = mode != GridMode::kClosed;
  if (need_emb) {
    RequireFlag(o.src_emb, "--src-emb", "for --mode open|both");
    RequireFlag(o.tgt_emb, "--tgt-emb", "for --mode open|both");
  }
  const std::string format = o.format.empty() ? "json" : o.format;
  if (format != "json" && format != "markdown") {
    throw Error(ErrorKind::kUsage, "eval --format must be json or markdown");
  }
  const EvalConfig config = BuildEvalConfig(o);
  auto pair = LoadPair(o, need_emb);

  std::optional<CellReport> closed;
  std::optional<OpenResult> open;
  if (mode != GridMode::kOpen) closed = EvaluateClosed(pair->inputs, config, o.threads);
  if (mode != GridMode::kClosed) open = EvaluateOpen(pair->inputs, config, o.threads);

  if (format == "markdown") {
    std::vector<std::pair<std::string, const CellReport*>> cols;
    if (closed) cols.emplace_back("closed", &*closed);
    if (open) cols.emplace_back("open", &open->report);
    out << EvalTable(config, cols);
    return 0;
  }
  json doc{{"mode", GridModeName(mode)}, {"eval_config", ToJson(config)}};
  if (closed) doc["closed"] = ToJson(*closed);
  if (open) {
    doc["open"] = ToJson(open->report);
    doc["open_retained"] = open->retained;
  }
  if (closed && open) {
    doc["delta"] = closed->map_5095 && open->report.map_5095
                       ? json(*open->report.map_5095 - *closed->map_5095)
                       : json(nullptr);
  }
  out << doc.dump(2) << "\n";
  return 0;
}

int RunDiagnose(const Options& o, std::ostream& out) {
  RequireFlag(o.src_emb, "--src-emb", "for diagnose");
  RequireFlag(o.tgt_emb, "--tgt-emb", "for diagnose");
  const EvalConfig config = BuildEvalConfig(o);
  auto pair = LoadPair(o, true);
  const DiagnosticsResult diag = DiagnosePair(pair->inputs, config);

  DiagnosticsRow row;
  row.pair_name = PairName(o);
  row.summary = diag.summary;
  row.top_k = config.top_k;
  const auto closed = EvaluateClosed(pair->inputs, config, o.threads).map_5095;
  const auto open = EvaluateOpen(pair->inputs, config, o.threads).report.map_5095;
  if (closed && open) row.delta_map = *open - *closed;

  std::string jsonl;
  for (const auto& d : diag.records) jsonl += ToJson(d).dump() + "\n";
  const std::string table = DiagnosticsMarkdown({row});
  if (o.out.empty()) {
    out << jsonl << "\n" << table;
    return 0;
  }
  std::filesystem::create_directories(o.out);
  json summary = ToJson(diag.summary);
  summary["pair"] = row.pair_name;
  summary["delta_map"] = row.delta_map ? json(*row.delta_map) : json(nullptr);
  summary["eval_config"] = ToJson(config);
  for (const auto& [name, content] :
       std::vector<std::pair<std::string, std::string>>{
           {"diagnostics.jsonl", jsonl},
           {"summary.md", table},
           {"summary.json", summary.dump(2) + "\n"}}) {
    std::ofstream f(std::filesystem::path(o.out) / name, std::ios::binary);
    if (!f) throw Error(ErrorKind::kIo, "cannot write into '" + o.out + "'");
    f << content;
  }
  out << table;
  return 0;
}

int RunSweep(const Options& o, std::ostream& out) {
  RequireFlag(o.src_emb, "--src-emb", "for sweep-tau");
  RequireFlag(o.tgt_emb, "--tgt-emb", "for sweep-tau");
  const std::string format = o.format.empty() ? "csv" : o.format;
  if (format != "csv" && format != "markdown" && format != "json") {
    throw Error(ErrorKind::kUsage, "sweep-tau --format must be csv, markdown or json");
  }
  const EvalConfig config = BuildEvalConfig(o);
  auto pair = LoadPair(o, true);
  const TauSweep sweep = SweepTau(pair->inputs, o.taus, config, PairName(o), o.threads);
  std::string text;
  if (format == "csv") text = SweepTauCsv({sweep});
  else if (format == "markdown") text = SweepTauMarkdown({sweep});
  else {
    json doc = ToJson(sweep);
    doc["eval_config"] = ToJson(config);
    text = doc.dump(2) + "\n";
  }
  if (o.out.empty()) {
    out << text;
  } else {
    std::ofstream f(o.out, std::ios::binary);
    if (!f) throw Error(ErrorKind::kIo, "cannot write '" + o.out + "'");
    f << text;
  }
  return 0;
}

int RunGridCommand(const Options& o, std::ostream& out) {
  const auto formats = ParseFormats(o.format.empty() ? "json,csv,markdown" : o.format);
  std::ifstream in(o.config, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open '" + o.config + "'");
  std::stringstream bytes;
  bytes << in.rdbuf();
  GridConfig config = LoadGridConfig(o.config);
  if (o.tau) config.eval.tau = *o.tau;
  if (o.top_k) config.eval.top_k = *o.top_k;
  if (o.iou_diagnostics) config.eval.diagnostics_iou = *o.iou_diagnostics;
  const TransferGrid grid = RunGrid(config, o.threads);
  const auto written = RenderReports(grid, formats, o.out, ContentHash(bytes.str()));
  if (grid.mode != GridMode::kOpen) out << GridMarkdown(grid, false) << "\n";
  if (grid.mode != GridMode::kClosed) out << GridMarkdown(grid, true) << "\n";
  int failed = 0;
  for (const auto& [key, cell] : grid.cells) failed += cell.ok ? 0 : 1;
  out << fmt::format("{} cells, {} failed; reports in {}\n", grid.cells.size(),
                     failed, o.out);
  return 0;
}

json EmbeddingReport(const EmbeddingTable& t) {
  double min_norm = 0, max_norm = 0;
  bool first = true;
  for (const auto& [k, n] : t.raw_norms) {
    min_norm = first ? n : std::min(min_norm, n);
    max_norm = first ? n : std::max(max_norm, n);
    first = false;
  }
  return {{"model_id", t.model_id},
          {"dim", t.dim},
          {"entries", t.entries.size()},
          {"raw_norm_min", min_norm},
          {"raw_norm_max", max_norm}};
}

int RunValidate(const Options& o, std::ostream& out) {
  json report = json::object();
  std::optional<DatasetAnnotations> gt;
  std::optional<Vocabulary> source_vocab;
  std::optional<EmbeddingTable> tgt_emb;
  if (!o.gt.empty()) {
    gt = LoadGroundTruth(o.gt, o.target_id);
    report["gt"] = {{"dataset_id", gt->vocabulary.dataset_id()},
                    {"images", gt->images.size()},
                    {"instances", gt->instances.size()},
                    {"vocabulary", gt->vocabulary.size()},
                    {"dropped_degenerate", gt->load_report.dropped_degenerate}};
  }
  if (!o.dets.empty()) {
    RequireFlag(o.gt, "--gt", "to validate --dets");
    const DetectionSet dets = LoadDetections(o.dets, *gt, o.source_id);
    const Vocabulary labels = VocabularyFromDetections(dets);
    int64_t outside = 0;
    for (const auto& d : dets.detections) outside += gt->vocabulary.Contains(d.label) ? 0 : 1;
    report["dets"] = {{"detections", dets.detections.size()},
                      {"labels", labels.size()},
                      {"outside_target_vocabulary", outside}};
    source_vocab = labels;
  }
  if (!o.src_gt.empty()) {
    source_vocab = LoadGroundTruth(o.src_gt, o.source_id).vocabulary;
  }
  if (!o.src_emb.empty()) report["src_emb"] = EmbeddingReport(LoadEmbeddings(o.src_emb));
  if (!o.tgt_emb.empty()) {
    tgt_emb = LoadEmbeddings(o.tgt_emb);
    report["tgt_emb"] = EmbeddingReport(*tgt_emb);
    if (gt) {
      json missing = json::array();
      for (const auto& l : gt->vocabulary.labels()) {
        if (!tgt_emb->Find(l.canonical())) missing.push_back(l.canonical());
      }
      report["tgt_emb"]["missing_target_labels"] = std::move(missing);
    }
  }
  if (!o.region_emb.empty()) {
    const RegionEmbeddings regions = LoadRegionEmbeddings(o.region_emb);
    if (tgt_emb) CheckCompatible(regions, *tgt_emb);
    report["region_emb"] = {{"model_id", regions.model_id},
                            {"dim", regions.dim},
                            {"entries", regions.entries.size()}};
  }
  std::optional<LabelMapping> mapping;
  if (!o.map.empty()) {
    mapping = LoadLabelMapping(o.map);
    report["mapping"] = {{"pairs", mapping->pairs.size()}};
  }
  if (gt && source_vocab) {
    report["shared_label_map"] = ToJson(BuildSharedMap(*source_vocab, gt->vocabulary, mapping));
  }
  if (report.empty()) {
    throw Error(ErrorKind::kUsage, "validate needs at least one input flag");
  }
  out << report.dump(2) << "\n";
  return 0;
}

}  // namespace

int RunCli(const std::vector<std::string>& args, std::ostream& out,
           std::ostream& err) {
  InitLogging();
  CLI::App app{"xdet: cross-dataset object-detection evaluation harness", "xdet"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  Options o;

  auto add_pair = [&](CLI::App* cmd, bool need_emb) {
    cmd->add_option("--gt", o.gt, "Target ground truth (COCO annotation JSON)")
        ->required()->check(CLI::ExistingFile);
    cmd->add_option("--dets", o.dets, "Detections (COCO results JSON)")
        ->required()->check(CLI::ExistingFile);
    cmd->add_option("--map", o.map, "Explicit label mapping JSON")->check(CLI::ExistingFile);
    cmd->add_option("--src-gt", o.src_gt,
                    "Source annotation JSON providing the source vocabulary "
                    "(default: labels present in --dets)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--src-emb", o.src_emb, "Source label embedding table")
        ->check(CLI::ExistingFile);
    cmd->add_option("--tgt-emb", o.tgt_emb, "Target label embedding table")
        ->check(CLI::ExistingFile);
    if (need_emb) {
      cmd->add_option("--region-emb", o.region_emb, "Region embeddings keyed by det_id")
          ->check(CLI::ExistingFile);
    }
    cmd->add_option("--source-id", o.source_id, "Source dataset id for reports");
    cmd->add_option("--target-id", o.target_id, "Target dataset id (default: --gt stem)");
    cmd->add_option("--config", o.config, "Eval config JSON (EvalConfig fields)")
        ->check(CLI::ExistingFile);
    cmd->add_option("--tau", o.tau, "Semantic similarity threshold (default 0.6)");
    cmd->add_option("--top-k", o.top_k, "Rank cutoff K for near misses (default 5)");
    cmd->add_option("--iou-diagnostics", o.iou_diagnostics,
                    "IoU threshold for diagnostics matching (default 0.5)");
    cmd->add_option("--threads", o.threads, "Worker threads (0 = all cores)");
  };

  auto* eval = app.add_subcommand("eval", "Evaluate one detection file against one target");
  add_pair(eval, false);
  eval->add_option("--mode", o.mode, "closed|open|both")
      ->check(CLI::IsMember({"closed", "open", "both"}));
  eval->add_option("--format", o.format, "json (default) or markdown");

  auto* diagnose = app.add_subcommand("diagnose", "Semantic near-miss diagnostics");
  add_pair(diagnose, true);
  diagnose->add_option("--out", o.out, "Directory for diagnostics.jsonl and summaries");

  auto* sweep = app.add_subcommand("sweep-tau", "Open-label mAP over a sweep of tau");
  add_pair(sweep, false);
  sweep->add_option("--taus", o.taus, "Thresholds, strictly increasing (default 0.5,0.6,0.7)")
      ->delimiter(',');
  sweep->add_option("--format", o.format, "csv (default), markdown or json");
  sweep->add_option("--out", o.out, "Output file (default stdout)");

  auto* grid = app.add_subcommand("grid", "Run a full transfer grid");
  grid->add_option("--config", o.config, "Grid config JSON")->required()->check(CLI::ExistingFile);
  grid->add_option("--out", o.out, "Run directory")->required();
  grid->add_option("--format", o.format, "Comma list of json,csv,markdown (default all)");
  grid->add_option("--tau", o.tau, "Override eval.tau");
  grid->add_option("--top-k", o.top_k, "Override eval.top_k");
  grid->add_option("--iou-diagnostics", o.iou_diagnostics, "Override eval.diagnostics_iou");
  grid->add_option("--threads", o.threads, "Worker threads (0 = all cores)");

  auto* validate = app.add_subcommand("validate", "Load inputs and print an audit report");
  validate->add_option("--gt", o.gt, "Target ground truth")->check(CLI::ExistingFile);
  validate->add_option("--dets", o.dets, "Detections (needs --gt)")->check(CLI::ExistingFile);
  validate->add_option("--src-gt", o.src_gt, "Source ground truth")->check(CLI::ExistingFile);
  validate->add_option("--map", o.map, "Label mapping")->check(CLI::ExistingFile);
  validate->add_option("--src-emb", o.src_emb, "Source embedding table")->check(CLI::ExistingFile);
  validate->add_option("--tgt-emb", o.tgt_emb, "Target embedding table")->check(CLI::ExistingFile);
  validate->add_option("--region-emb", o.region_emb, "Region embeddings")->check(CLI::ExistingFile);
  validate->add_option("--source-id", o.source_id, "Source dataset id");
  validate->add_option("--target-id", o.target_id, "Target dataset id");

  std::vector<std::string> argv_store = {"xdet"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_store) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (eval->parsed()) return RunEval(o, out);
    if (diagnose->parsed()) return RunDiagnose(o, out);
    if (sweep->parsed()) return RunSweep(o, out);
    if (grid->parsed()) return RunGridCommand(o, out);
    if (validate->parsed()) return RunValidate(o, out);
  } catch (const Error& e) {
    err << "xdet: " << e.what() << "\n";
    return e.kind() == ErrorKind::kUsage ? 2 : 1;
  } catch (const std::exception& e) {
    err << "xdet: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace xdet
