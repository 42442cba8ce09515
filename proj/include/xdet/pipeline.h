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

#ifndef XDET_PIPELINE_H_
#define XDET_PIPELINE_H_

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "xdet/coco_metrics.h"
#include "xdet/ingest.h"
#include "xdet/semantic.h"
#include "xdet/vocab_align.h"

namespace xdet {

// Everything needed to score one (source, target) pair. Pointers are
// non-owning; embedding tables are only required by the open protocol.
struct PairInputs {
  const DatasetAnnotations* target_gt = nullptr;
  const DetectionSet* dets = nullptr;
  const Vocabulary* source_vocab = nullptr;
  std::optional<LabelMapping> mapping;
  const EmbeddingTable* src_emb = nullptr;
  const EmbeddingTable* tgt_emb = nullptr;
  const RegionEmbeddings* region_emb = nullptr;
};

// build shared map -> filter detections -> restrict GT -> evaluate.
CellReport EvaluateClosed(const PairInputs& in, const EvalConfig& config,
                          int threads = 1);

struct OpenResult {
  CellReport report;
  int64_t retained = 0;
};

// Remap detection labels to the target vocabulary at config.tau, then
// evaluate against the full target GT.
OpenResult EvaluateOpen(const PairInputs& in, const EvalConfig& config,
                        int threads = 1);

// Label-agnostic matching + mismatch diagnostics on the raw predictions.
DiagnosticsResult DiagnosePair(const PairInputs& in, const EvalConfig& config);

struct TauPoint {
  double tau = 0;
  std::optional<double> map_5095;
  int64_t retained = 0;
};

struct TauSweep {
  std::string pair_name;
  std::vector<TauPoint> points;
  std::optional<double> closed_map;
};

// One open-label evaluation per tau plus the closed baseline. Throws kUsage
// unless taus are strictly increasing inside (0, 1).
TauSweep SweepTau(const PairInputs& in, const std::vector<double>& taus,
                  const EvalConfig& config, std::string pair_name,
                  int threads = 1);

// CSV: header "pair,tau=0.5,...,closed", one row per sweep, 3 decimals.
std::string SweepTauCsv(const std::vector<TauSweep>& sweeps);
// Markdown table with the same columns.
std::string SweepTauMarkdown(const std::vector<TauSweep>& sweeps);
nlohmann::json ToJson(const TauSweep& sweep);

struct DiagnosticsRow {
  std::string pair_name;
  std::optional<double> delta_map;  // open - closed mAP for the pair
  DiagnosticsSummary summary;
  int top_k = 5;
};

// Columns: Train->Test | dmAP | Near-miss | E[s_tt] | Med. Rank | Top-K |
// E[d_it] (%(d_it>0)). Rates render as whole percents.
std::string DiagnosticsMarkdown(const std::vector<DiagnosticsRow>& rows);

}  // namespace xdet

#endif  // XDET_PIPELINE_H_
