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

#ifndef XDET_GRID_H_
#define XDET_GRID_H_

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "xdet/coco_metrics.h"
#include "xdet/ingest.h"
#include "xdet/semantic.h"

namespace xdet {

inline constexpr char kToolVersion[] = "0.1.0";

enum class GridMode { kClosed, kOpen, kBoth };

std::string_view GridModeName(GridMode mode);
GridMode ParseGridMode(std::string_view name);

struct DatasetSpec {
  std::string dataset_id;
  SettingType setting = SettingType::kAgnostic;
  std::filesystem::path gt_path;
  std::optional<std::filesystem::path> embedding_path;
};

struct CellSpec {
  std::string source_id;
  std::string target_id;
  std::filesystem::path detections_path;
  std::optional<std::filesystem::path> mapping_path;
  std::optional<std::filesystem::path> region_embeddings_path;
};

struct GridConfig {
  std::vector<DatasetSpec> datasets;
  std::vector<CellSpec> cells;
  EvalConfig eval;
  GridMode mode = GridMode::kClosed;

  // Throws kUsage on undeclared datasets, duplicate ids or duplicate cells.
  void Validate() const;
};

// Relative paths resolve against base_dir.
GridConfig ParseGridConfig(const nlohmann::json& doc,
                           const std::filesystem::path& base_dir);
GridConfig LoadGridConfig(const std::filesystem::path& path);

using CellKey = std::pair<std::string, std::string>;  // (source, target)

struct CellResult {
  std::string source_id;
  std::string target_id;
  bool ok = true;
  std::string error;
  std::optional<CellReport> closed;
  std::optional<CellReport> open;
  std::optional<int64_t> open_retained;
  std::optional<DiagnosticsSummary> diagnostics;
  // open - closed mAP when both are defined.
  std::optional<double> delta;
};

// Row = target (test) dataset, column = source (train) dataset.
struct GridAverages {
  std::map<std::string, std::optional<double>> row_avgs;
  std::map<std::string, std::optional<double>> col_avgs;
};

// Averages over cells with a defined value, diagonal included. A row or
// column with no defined cell is undefined.
GridAverages ComputeAverages(
    const std::map<CellKey, std::optional<double>>& cell_values);

struct TransferGrid {
  std::vector<std::string> dataset_ids;  // declaration order
  std::map<std::string, SettingType> settings;
  GridMode mode = GridMode::kClosed;
  EvalConfig eval;
  std::map<CellKey, CellResult> cells;
  std::optional<GridAverages> closed_avgs;
  std::optional<GridAverages> open_avgs;

  // mAP table for one protocol; failed or missing cells are nullopt.
  std::map<CellKey, std::optional<double>> Values(bool open) const;
};

// Cells run concurrently; a failing cell is recorded without stopping the
// others. In open mode diagonal cells skip remapping and reuse the closed
// score. Output is identical for every thread count.
TransferGrid RunGrid(const GridConfig& config, int threads = 0);

enum class ReportFormat { kJson, kCsv, kMarkdown };

std::set<ReportFormat> ParseFormats(std::string_view list);

nlohmann::json ToJson(const TransferGrid& grid);
std::string GridCsv(const TransferGrid& grid);
// Tests as rows, trains as columns, with an Avg. row and column. Open tables
// annotate off-diagonal cells with the gain over closed evaluation.
std::string GridMarkdown(const TransferGrid& grid, bool open);

// Writes grid.json / grid.csv / grid_{closed,open}.md and manifest.json into
// out_dir. config_hash is recorded in the manifest. Throws kIo.
std::vector<std::filesystem::path> RenderReports(
    const TransferGrid& grid, const std::set<ReportFormat>& formats,
    const std::filesystem::path& out_dir, const std::string& config_hash);

// FNV-1a 64-bit of the given bytes, as 16 hex digits.
std::string ContentHash(std::string_view bytes);

}  // namespace xdet

#endif  // XDET_GRID_H_
