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

#ifndef XDET_COCO_METRICS_H_
#define XDET_COCO_METRICS_H_

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xdet/ingest.h"
#include "xdet/vocab_align.h"

namespace xdet {

enum class BelowTauPolicy { kDrop, kKeepSourceLabel };

// Every numeric knob of an evaluation run. Defaults follow the COCO
// reference evaluator (0.50:0.05:0.95, 101 recall points, 100 dets).
struct EvalConfig {
  std::vector<double> iou_thresholds = DefaultIouThresholds();
  int recall_points = 101;
  int max_dets_per_image = 100;
  double small_max_area = 32.0 * 32.0;   // small: area < 32^2
  double medium_max_area = 96.0 * 96.0;  // medium: 32^2 <= area < 96^2
  double tau = 0.6;
  int top_k = 5;
  double diagnostics_iou = 0.5;
  bool undefined_as_zero = false;
  OffIntersectionPolicy off_intersection = OffIntersectionPolicy::kIgnore;
  BelowTauPolicy below_tau = BelowTauPolicy::kDrop;

  static std::vector<double> DefaultIouThresholds();

  // Throws kUsage on any violated invariant.
  void Validate() const;
};

nlohmann::json ToJson(const EvalConfig& config);
EvalConfig EvalConfigFromJson(const nlohmann::json& j);

double Iou(const BoundingBox& a, const BoundingBox& b);

enum class MatchOutcome { kTruePositive, kFalsePositive, kIgnored };

struct MatchRecord {
  int64_t det_id = 0;
  int64_t image_id = 0;
  // Set when the detection reached the threshold against some GT, including
  // ignored ones.
  std::optional<int64_t> gt_id;
  bool gt_ignored = false;
  // IoU with the matched GT, or the best IoU among GTs still available when
  // the detection was unmatched.
  double iou = 0;
  Label det_label;
  std::optional<Label> gt_label;
  double score = 0;
  MatchOutcome outcome = MatchOutcome::kFalsePositive;
};

// Greedy COCO matching for a single image. Detections are ranked by
// (-score, det_id) and cut to max_dets. Each detection takes the unmatched
// non-ignored GT of highest IoU >= threshold, else the best ignored GT
// (outcome kIgnored), else it is a false positive. Labels are not compared;
// callers group by class when they need per-class matching.
// Throws kUsage if records span more than one image.
std::vector<MatchRecord> MatchDetections(std::span<const Detection> dets,
                                         std::span<const GroundTruthInstance> gts,
                                         double iou_threshold, int max_dets);

// 101-point interpolated AP over records pooled across images for one class
// and threshold. kIgnored records do not enter the PR curve. Undefined when
// num_gt (non-ignored) is zero.
std::optional<double> AveragePrecision(std::span<const MatchRecord> records,
                                       int64_t num_gt, const EvalConfig& config);

struct CellCounts {
  int64_t images = 0;
  int64_t gts = 0;
  int64_t dets = 0;
  int64_t ignored = 0;
};

struct CellReport {
  std::optional<double> map_5095;
  std::vector<std::optional<double>> ap_per_threshold;
  std::optional<double> ap_small;
  std::optional<double> ap_medium;
  std::optional<double> ap_large;
  // Per class: mean AP over thresholds; undefined when the class has no
  // non-ignored GT.
  std::map<std::string, std::optional<double>> per_class_ap;
  CellCounts counts;
  std::optional<std::string> undefined_reason;
};

// COCO-style evaluation of one (ground truth, detections) pair. Classes are
// the GT vocabulary; detections with labels outside it are not scored.
// Deterministic for any thread count.
CellReport EvaluateCell(const DatasetAnnotations& gt, const DetectionSet& dets,
                        const EvalConfig& config, int threads = 1);

nlohmann::json ToJson(const CellReport& report);
CellReport CellReportFromJson(const nlohmann::json& j);

}  // namespace xdet

#endif  // XDET_COCO_METRICS_H_
