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

#include "xdet/grid.h"

#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "xdet/parallel.h"
#include "xdet/pipeline.h"

namespace xdet {

using nlohmann::json;

std::string_view GridModeName(GridMode mode) {
  switch (mode) {
    case GridMode::kClosed: return "closed";
    case GridMode::kOpen: return "open";
    case GridMode::kBoth: return "both";
  }
  return "closed";
}

GridMode ParseGridMode(std::string_view name) {
  if (name == "closed") return GridMode::kClosed;
  if (name == "open") return GridMode::kOpen;
  if (name == "both") return GridMode::kBoth;
  throw Error(ErrorKind::kUsage,
              "unknown mode '" + std::string(name) + "' (expected closed|open|both)");
}

void GridConfig::Validate() const {
  std::set<std::string> ids;
  for (const auto& d : datasets) {
    if (d.dataset_id.empty()) throw Error(ErrorKind::kUsage, "dataset with empty id");
    if (!ids.insert(d.dataset_id).second) {
      throw Error(ErrorKind::kUsage, "dataset '" + d.dataset_id + "' declared twice");
    }
  }
  std::set<CellKey> seen;
  for (const auto& c : cells) {
    for (const auto* id : {&c.source_id, &c.target_id}) {
      if (!ids.contains(*id)) {
        throw Error(ErrorKind::kUsage, "cell references undeclared dataset '" + *id + "'");
      }
    }
    if (!seen.insert({c.source_id, c.target_id}).second) {
      throw Error(ErrorKind::kUsage, "more than one cell for " + c.source_id +
                                         " -> " + c.target_id);
    }
  }
  eval.Validate();
}

GridConfig ParseGridConfig(const json& doc, const std::filesystem::path& base_dir) {
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  };
  GridConfig config;
  try {
    for (const auto& d : doc.at("datasets")) {
      DatasetSpec spec;
      spec.dataset_id = d.at("dataset_id").get<std::string>();
      spec.setting = ParseSettingType(d.at("setting").get<std::string>());
      spec.gt_path = resolve(d.at("gt_path").get<std::string>());
      if (d.contains("embedding_path") && !d.at("embedding_path").is_null()) {
        spec.embedding_path = resolve(d.at("embedding_path").get<std::string>());
      }
      config.datasets.push_back(std::move(spec));
    }
    for (const auto& c : doc.at("cells")) {
      CellSpec spec;
      spec.source_id = c.at("source_id").get<std::string>();
      spec.target_id = c.at("target_id").get<std::string>();
      spec.detections_path = resolve(c.at("detections_path").get<std::string>());
      if (c.contains("mapping_path") && !c.at("mapping_path").is_null()) {
        spec.mapping_path = resolve(c.at("mapping_path").get<std::string>());
      }
      if (c.contains("region_embeddings_path") &&
          !c.at("region_embeddings_path").is_null()) {
        spec.region_embeddings_path =
            resolve(c.at("region_embeddings_path").get<std::string>());
      }
      config.cells.push_back(std::move(spec));
    }
    config.eval = EvalConfigFromJson(doc.value("eval", json(nullptr)));
    config.mode = ParseGridMode(doc.value("mode", std::string("closed")));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("grid config: ") + e.what());
  }
  config.Validate();
  return config;
}

GridConfig LoadGridConfig(const std::filesystem::path& path) {
  return ParseGridConfig(ReadJsonFile(path), path.parent_path());
}

GridAverages ComputeAverages(
    const std::map<CellKey, std::optional<double>>& cell_values) {
  std::map<std::string, std::pair<double, int>> rows, cols;
  for (const auto& [key, value] : cell_values) {
    const auto& [source, target] = key;
    auto& row = rows[target];
    auto& col = cols[source];
    if (!value) continue;
    row.first += *value;
    ++row.second;
    col.first += *value;
    ++col.second;
  }
  GridAverages avgs;
  for (const auto& [id, acc] : rows) {
    avgs.row_avgs[id] = acc.second > 0 ? std::optional(acc.first / acc.second)
                                       : std::nullopt;
  }
  for (const auto& [id, acc] : cols) {
    avgs.col_avgs[id] = acc.second > 0 ? std::optional(acc.first / acc.second)
                                       : std::nullopt;
  }
  return avgs;
}

std::map<CellKey, std::optional<double>> TransferGrid::Values(bool open) const {
  std::map<CellKey, std::optional<double>> out;
  for (const auto& [key, cell] : cells) {
    const auto& report = open ? cell.open : cell.closed;
    out[key] = cell.ok && report ? report->map_5095 : std::nullopt;
  }
  return out;
}

namespace {

struct LoadedDataset {
  std::optional<DatasetAnnotations> gt;
  std::optional<EmbeddingTable> emb;
  std::string gt_error;
  std::string emb_error;
};

CellResult RunCell(const CellSpec& spec, const std::map<std::string, LoadedDataset>& loaded,
                   const EvalConfig& eval, GridMode mode) {
  CellResult r;
  r.source_id = spec.source_id;
  r.target_id = spec.target_id;
  try {
    const LoadedDataset& src = loaded.at(spec.source_id);
    const LoadedDataset& tgt = loaded.at(spec.target_id);
    if (!tgt.gt) throw std::runtime_error(tgt.gt_error);
    if (!src.gt) throw std::runtime_error(src.gt_error);
    const DetectionSet dets =
        LoadDetections(spec.detections_path, *tgt.gt, spec.source_id);

    PairInputs in;
    in.target_gt = &*tgt.gt;
    in.dets = &dets;
    in.source_vocab = &src.gt->vocabulary;
    if (spec.mapping_path) in.mapping = LoadLabelMapping(*spec.mapping_path);
    r.closed = EvaluateClosed(in, eval);

    if (mode != GridMode::kClosed) {
      if (spec.source_id == spec.target_id) {
        r.open = r.closed;
      } else {
        if (!src.emb) throw std::runtime_error(src.emb_error);
        if (!tgt.emb) throw std::runtime_error(tgt.emb_error);
        std::optional<RegionEmbeddings> regions;
        if (spec.region_embeddings_path) {
          regions = LoadRegionEmbeddings(*spec.region_embeddings_path);
        }
        in.src_emb = &*src.emb;
        in.tgt_emb = &*tgt.emb;
        in.region_emb = regions ? &*regions : nullptr;
        OpenResult open = EvaluateOpen(in, eval);
        r.open = std::move(open.report);
        r.open_retained = open.retained;
        r.diagnostics = DiagnosePair(in, eval).summary;
      }
      if (r.open->map_5095 && r.closed->map_5095) {
        r.delta = *r.open->map_5095 - *r.closed->map_5095;
      }
    }
  } catch (const std::exception& e) {
    spdlog::error("cell {} -> {} failed: {}", spec.source_id, spec.target_id, e.what());
    r.ok = false;
    r.error = e.what();
    r.closed.reset();
    r.open.reset();
    r.open_retained.reset();
    r.diagnostics.reset();
    r.delta.reset();
  }
  return r;
}

}  // namespace

TransferGrid RunGrid(const GridConfig& config, int threads) {
  config.Validate();
  const bool needs_emb = config.mode != GridMode::kClosed;

  std::vector<LoadedDataset> loaded_list(config.datasets.size());
  ParallelFor(config.datasets.size(), threads, [&](size_t i) {
    const DatasetSpec& spec = config.datasets[i];
    LoadedDataset& out = loaded_list[i];
    try {
      out.gt = LoadGroundTruth(spec.gt_path, spec.dataset_id, spec.setting);
    } catch (const std::exception& e) {
      out.gt_error = "dataset '" + spec.dataset_id + "': " + e.what();
    }
    if (!needs_emb) return;
    if (!spec.embedding_path) {
      out.emb_error = "dataset '" + spec.dataset_id +
                      "' has no embedding_path (required in open mode)";
      return;
    }
    try {
      out.emb = LoadEmbeddings(*spec.embedding_path);
    } catch (const std::exception& e) {
      out.emb_error = "dataset '" + spec.dataset_id + "': " + e.what();
    }
  });

  TransferGrid grid;
  grid.mode = config.mode;
  grid.eval = config.eval;
  std::map<std::string, LoadedDataset> loaded;
  for (size_t i = 0; i < config.datasets.size(); ++i) {
    grid.dataset_ids.push_back(config.datasets[i].dataset_id);
    grid.settings[config.datasets[i].dataset_id] = config.datasets[i].setting;
    loaded.emplace(config.datasets[i].dataset_id, std::move(loaded_list[i]));
  }

  std::vector<CellResult> results(config.cells.size());
  ParallelFor(config.cells.size(), threads, [&](size_t i) {
    results[i] = RunCell(config.cells[i], loaded, config.eval, config.mode);
  });
  for (auto& r : results) {
    CellKey key{r.source_id, r.target_id};
    grid.cells.emplace(std::move(key), std::move(r));
  }

  if (config.mode != GridMode::kOpen) grid.closed_avgs = ComputeAverages(grid.Values(false));
  if (config.mode != GridMode::kClosed) grid.open_avgs = ComputeAverages(grid.Values(true));
  return grid;
}

std::set<ReportFormat> ParseFormats(std::string_view list) {
  std::set<ReportFormat> out;
  std::stringstream ss{std::string(list)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "json") out.insert(ReportFormat::kJson);
    else if (item == "csv") out.insert(ReportFormat::kCsv);
    else if (item == "markdown" || item == "md") out.insert(ReportFormat::kMarkdown);
    else throw Error(ErrorKind::kUsage, "unknown format '" + item + "'");
  }
  if (out.empty()) throw Error(ErrorKind::kUsage, "no output format given");
  return out;
}

namespace {

json Opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json AveragesJson(const GridAverages& avgs) {
  json rows = json::object(), cols = json::object();
  for (const auto& [id, v] : avgs.row_avgs) rows[id] = Opt(v);
  for (const auto& [id, v] : avgs.col_avgs) cols[id] = Opt(v);
  return {{"row_avgs", std::move(rows)}, {"col_avgs", std::move(cols)}};
}

std::string Fixed3(const std::optional<double>& v) {
  return v ? fmt::format("{:.3f}", *v) : std::string("--");
}

std::string Shortest(const std::optional<double>& v) {
  return v ? fmt::format("{}", *v) : std::string();
}

void WriteFile(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write '" + path.string() + "'");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(ErrorKind::kIo, "failed writing '" + path.string() + "'");
}

}  // namespace

json ToJson(const TransferGrid& grid) {
  json datasets = json::array();
  for (const auto& id : grid.dataset_ids) {
    datasets.push_back(
        {{"dataset_id", id}, {"setting", SettingTypeName(grid.settings.at(id))}});
  }
  json cells = json::array();
  for (const auto& [key, c] : grid.cells) {
    json cell{{"source_id", c.source_id},
              {"target_id", c.target_id},
              {"status", c.ok ? "ok" : "error"},
              {"error", c.ok ? json(nullptr) : json(c.error)},
              {"closed", c.closed ? ToJson(*c.closed) : json(nullptr)}};
    if (grid.mode != GridMode::kClosed) {
      cell["open"] = c.open ? ToJson(*c.open) : json(nullptr);
      cell["open_retained"] = c.open_retained ? json(*c.open_retained) : json(nullptr);
      cell["delta"] = Opt(c.delta);
      cell["diagnostics"] = c.diagnostics ? ToJson(*c.diagnostics) : json(nullptr);
    }
    cells.push_back(std::move(cell));
  }
  json tables = json::object();
  if (grid.closed_avgs) tables["closed"] = AveragesJson(*grid.closed_avgs);
  if (grid.open_avgs) tables["open"] = AveragesJson(*grid.open_avgs);
  return {{"tool", "xdet"},
          {"version", kToolVersion},
          {"mode", GridModeName(grid.mode)},
          {"eval_config", ToJson(grid.eval)},
          {"datasets", std::move(datasets)},
          {"cells", std::move(cells)},
          {"tables", std::move(tables)}};
}

std::string GridCsv(const TransferGrid& grid) {
  std::string out = "source_id,target_id,status,closed_map,open_map,delta,open_retained\n";
  for (const auto& [key, c] : grid.cells) {
    out += fmt::format(
        "{},{},{},{},{},{},{}\n", c.source_id, c.target_id, c.ok ? "ok" : "error",
        Shortest(c.closed ? c.closed->map_5095 : std::nullopt),
        Shortest(c.open ? c.open->map_5095 : std::nullopt), Shortest(c.delta),
        c.open_retained ? std::to_string(*c.open_retained) : std::string());
  }
  return out;
}

std::string GridMarkdown(const TransferGrid& grid, bool open) {
  const auto values = grid.Values(open);
  const GridAverages avgs = ComputeAverages(values);
  const auto& ids = grid.dataset_ids;

  std::string out = fmt::format("{}-label mAP@[0.50:0.95] (rows: test, columns: train)\n\n",
                                open ? "Open" : "Closed");
  out += "| Test \\ Train |";
  for (const auto& id : ids) out += " " + id + " |";
  out += " Avg. |\n|---|";
  for (size_t i = 0; i <= ids.size(); ++i) out += "---|";
  out += "\n";

  auto avg_of = [](const auto& m, const std::string& id) -> std::optional<double> {
    auto it = m.find(id);
    return it == m.end() ? std::nullopt : it->second;
  };
  for (const auto& test : ids) {
    out += "| " + test + " |";
    for (const auto& train : ids) {
      auto it = grid.cells.find({train, test});
      if (it == grid.cells.end()) {
        out += " -- |";
        continue;
      }
      std::string text = Fixed3(values.at({train, test}));
      if (open && train != test && it->second.delta) {
        text += fmt::format(" ({:+.3f})", *it->second.delta);
      }
      out += " " + text + " |";
    }
    out += " " + Fixed3(avg_of(avgs.row_avgs, test)) + " |\n";
  }
  out += "| Avg. |";
  for (const auto& train : ids) out += " " + Fixed3(avg_of(avgs.col_avgs, train)) + " |";
  out += " -- |\n";
  return out;
}

std::string ContentHash(std::string_view bytes) {
  uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return fmt::format("{:016x}", h);
}

std::vector<std::filesystem::path> RenderReports(const TransferGrid& grid,
                                                 const std::set<ReportFormat>& formats,
                                                 const std::filesystem::path& out_dir,
                                                 const std::string& config_hash) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw Error(ErrorKind::kIo,
                "cannot create '" + out_dir.string() + "': " + ec.message());
  }
  std::vector<std::filesystem::path> written;
  auto emit = [&](const std::string& name, const std::string& content) {
    WriteFile(out_dir / name, content);
    written.push_back(out_dir / name);
  };
  if (formats.contains(ReportFormat::kJson)) emit("grid.json", ToJson(grid).dump(2) + "\n");
  if (formats.contains(ReportFormat::kCsv)) emit("grid.csv", GridCsv(grid));
  if (formats.contains(ReportFormat::kMarkdown)) {
    if (grid.mode != GridMode::kOpen) emit("grid_closed.md", GridMarkdown(grid, false));
    if (grid.mode != GridMode::kClosed) emit("grid_open.md", GridMarkdown(grid, true));
  }

  json cells = json::array();
  for (const auto& [key, c] : grid.cells) {
    cells.push_back({{"source_id", c.source_id},
                     {"target_id", c.target_id},
                     {"status", c.ok ? "ok" : "error"},
                     {"error", c.ok ? json(nullptr) : json(c.error)}});
  }
  json outputs = json::array();
  for (const auto& p : written) outputs.push_back(p.filename().string());
  json manifest{{"tool", "xdet"},
                {"version", kToolVersion},
                {"config_hash", config_hash},
                {"mode", GridModeName(grid.mode)},
                {"cells", std::move(cells)},
                {"outputs", std::move(outputs)}};
  emit("manifest.json", manifest.dump(2) + "\n");
  return written;
}

}  // namespace xdet
