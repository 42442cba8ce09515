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

#include "xdet/coco_metrics.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "xdet/parallel.h"

namespace xdet {

using nlohmann::json;

std::vector<double> EvalConfig::DefaultIouThresholds() {
  std::vector<double> out;
  for (int i = 0; i < 10; ++i) out.push_back((50.0 + 5.0 * i) / 100.0);
  return out;
}

void EvalConfig::Validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorKind::kUsage, "invalid eval config: " + what);
  };
  if (iou_thresholds.empty()) fail("iou_thresholds is empty");
  for (size_t i = 0; i < iou_thresholds.size(); ++i) {
    const double t = iou_thresholds[i];
    if (!(t > 0.0 && t <= 1.0)) fail("iou thresholds must lie in (0, 1]");
    if (i > 0 && !(t > iou_thresholds[i - 1])) {
      fail("iou thresholds must be strictly increasing");
    }
  }
  if (recall_points < 2) fail("recall_points must be >= 2");
  if (max_dets_per_image < 1) fail("max_dets_per_image must be >= 1");
  if (!(tau > 0.0 && tau < 1.0)) fail("tau must lie in (0, 1)");
  if (top_k < 1) fail("top_k must be >= 1");
  if (!(diagnostics_iou > 0.0 && diagnostics_iou <= 1.0)) {
    fail("diagnostics_iou must lie in (0, 1]");
  }
  if (!(small_max_area > 0.0 && small_max_area <= medium_max_area)) {
    fail("size buckets must satisfy 0 < small_max_area <= medium_max_area");
  }
}

json ToJson(const EvalConfig& c) {
  return json{
      {"iou_thresholds", c.iou_thresholds},
      {"recall_points", c.recall_points},
      {"max_dets_per_image", c.max_dets_per_image},
      {"size_buckets",
       {{"small_max_area", c.small_max_area},
        {"medium_max_area", c.medium_max_area}}},
      {"tau", c.tau},
      {"top_k", c.top_k},
      {"diagnostics_iou", c.diagnostics_iou},
      {"undefined_as_zero", c.undefined_as_zero},
      {"off_intersection",
       c.off_intersection == OffIntersectionPolicy::kIgnore ? "ignore"
                                                            : "delete"},
      {"below_tau", c.below_tau == BelowTauPolicy::kDrop ? "drop" : "keep"},
  };
}

EvalConfig EvalConfigFromJson(const json& j) {
  EvalConfig c;
  if (j.is_null()) return c;
  try {
    c.iou_thresholds = j.value("iou_thresholds", c.iou_thresholds);
    c.recall_points = j.value("recall_points", c.recall_points);
    c.max_dets_per_image = j.value("max_dets_per_image", c.max_dets_per_image);
    if (j.contains("size_buckets")) {
      const json& b = j.at("size_buckets");
      c.small_max_area = b.value("small_max_area", c.small_max_area);
      c.medium_max_area = b.value("medium_max_area", c.medium_max_area);
    }
    c.tau = j.value("tau", c.tau);
    c.top_k = j.value("top_k", c.top_k);
    c.diagnostics_iou = j.value("diagnostics_iou", c.diagnostics_iou);
    c.undefined_as_zero = j.value("undefined_as_zero", c.undefined_as_zero);
    const std::string off = j.value("off_intersection", std::string("ignore"));
    if (off != "ignore" && off != "delete") {
      throw Error(ErrorKind::kParse, "off_intersection must be ignore|delete");
    }
    c.off_intersection = off == "ignore" ? OffIntersectionPolicy::kIgnore
                                         : OffIntersectionPolicy::kDelete;
    const std::string below = j.value("below_tau", std::string("drop"));
    if (below != "drop" && below != "keep") {
      throw Error(ErrorKind::kParse, "below_tau must be drop|keep");
    }
    c.below_tau =
        below == "drop" ? BelowTauPolicy::kDrop : BelowTauPolicy::kKeepSourceLabel;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("eval config: ") + e.what());
  }
  return c;
}

double Iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x, b.x);
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y, b.y);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

namespace {

bool RanksBefore(double score_a, int64_t id_a, double score_b, int64_t id_b) {
  if (score_a != score_b) return score_a > score_b;
  return id_a < id_b;
}

struct AreaRange {
  double lo = 0;
  double hi = std::numeric_limits<double>::infinity();
  bool Contains(double area) const { return area >= lo && area < hi; }
};

struct GreedyResult {
  int gt_index = -1;
  double iou = 0;
  MatchOutcome outcome = MatchOutcome::kFalsePositive;
};

// Detections are already ranked; ious is row-major [det][gt].
std::vector<GreedyResult> GreedyMatch(size_t num_dets, size_t num_gts,
                                      std::span<const double> ious,
                                      const std::vector<char>& gt_ignore,
                                      const std::vector<char>& det_out_of_range,
                                      double threshold) {
  std::vector<GreedyResult> out(num_dets);
  std::vector<char> taken(num_gts, 0);
  for (size_t d = 0; d < num_dets; ++d) {
    const double* row = ious.data() + d * num_gts;
    auto best_among = [&](bool want_ignored) {
      int best = -1;
      double best_iou = -1;
      for (size_t g = 0; g < num_gts; ++g) {
        if (static_cast<bool>(gt_ignore[g]) != want_ignored) continue;
        if (!want_ignored && taken[g]) continue;
        if (row[g] >= threshold && row[g] > best_iou) {
          best = static_cast<int>(g);
          best_iou = row[g];
        }
      }
      return best;
    };
    GreedyResult& r = out[d];
    if (int g = best_among(false); g >= 0) {
      taken[g] = 1;
      r = {g, row[g], MatchOutcome::kTruePositive};
    } else if (int gi = best_among(true); gi >= 0) {
      r = {gi, row[gi], MatchOutcome::kIgnored};
    } else {
      double available = 0;
      for (size_t g = 0; g < num_gts; ++g) {
        if (gt_ignore[g] || !taken[g]) available = std::max(available, row[g]);
      }
      r.iou = available;
      r.outcome = det_out_of_range[d] ? MatchOutcome::kIgnored
                                      : MatchOutcome::kFalsePositive;
    }
  }
  return out;
}

struct ScoredOutcome {
  double score;
  int64_t det_id;
  bool true_positive;
};

// Outcomes must exclude ignored detections. Sorts in place.
double InterpolatedAp(std::vector<ScoredOutcome>& pooled, int64_t num_gt,
                      int recall_points) {
  std::sort(pooled.begin(), pooled.end(), [](const auto& a, const auto& b) {
    return RanksBefore(a.score, a.det_id, b.score, b.det_id);
  });
  const size_t n = pooled.size();
  std::vector<double> precision(n), recall(n);
  int64_t tp = 0;
  for (size_t i = 0; i < n; ++i) {
    if (pooled[i].true_positive) ++tp;
    precision[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    recall[i] = static_cast<double>(tp) / static_cast<double>(num_gt);
  }
  for (size_t i = n; i-- > 1;) {
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  }
  double sum = 0;
  for (int k = 0; k < recall_points; ++k) {
    const double r = static_cast<double>(k) / (recall_points - 1);
    auto it = std::lower_bound(recall.begin(), recall.end(), r);
    if (it != recall.end()) sum += precision[it - recall.begin()];
  }
  return sum / recall_points;
}

std::optional<double> Mean(const std::vector<std::optional<double>>& values,
                           bool undefined_as_zero) {
  double sum = 0;
  size_t n = 0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++n;
    } else if (undefined_as_zero) {
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

constexpr int kNumBuckets = 4;  // all, small, medium, large

struct ImageSlot {
  std::vector<const GroundTruthInstance*> gts;
  std::vector<const Detection*> dets;
};

struct ClassResult {
  // [bucket][threshold]
  std::vector<std::vector<std::optional<double>>> ap;
};

ClassResult EvaluateClass(const std::map<int64_t, ImageSlot>& images,
                          const EvalConfig& config,
                          const std::array<AreaRange, kNumBuckets>& ranges) {
  const size_t num_thr = config.iou_thresholds.size();
  std::vector<std::vector<std::vector<ScoredOutcome>>> pooled(
      kNumBuckets, std::vector<std::vector<ScoredOutcome>>(num_thr));
  std::array<int64_t, kNumBuckets> num_gt{};

  for (const auto& [image_id, slot] : images) {
    std::vector<const Detection*> dets = slot.dets;
    std::sort(dets.begin(), dets.end(), [](const auto* a, const auto* b) {
      return RanksBefore(a->score, a->det_id, b->score, b->det_id);
    });
    if (dets.size() > static_cast<size_t>(config.max_dets_per_image)) {
      dets.resize(config.max_dets_per_image);
    }
    const size_t nd = dets.size();
    const size_t ng = slot.gts.size();
    std::vector<double> ious(nd * ng);
    for (size_t d = 0; d < nd; ++d) {
      for (size_t g = 0; g < ng; ++g) {
        ious[d * ng + g] = Iou(dets[d]->box, slot.gts[g]->box);
      }
    }
    for (int b = 0; b < kNumBuckets; ++b) {
      std::vector<char> gt_ignore(ng), det_out(nd);
      for (size_t g = 0; g < ng; ++g) {
        gt_ignore[g] =
            slot.gts[g]->ignore || !ranges[b].Contains(slot.gts[g]->area);
        if (!gt_ignore[g]) ++num_gt[b];
      }
      for (size_t d = 0; d < nd; ++d) {
        det_out[d] = !ranges[b].Contains(dets[d]->box.area());
      }
      for (size_t t = 0; t < num_thr; ++t) {
        auto matches = GreedyMatch(nd, ng, ious, gt_ignore, det_out,
                                   config.iou_thresholds[t]);
        for (size_t d = 0; d < nd; ++d) {
          if (matches[d].outcome == MatchOutcome::kIgnored) continue;
          pooled[b][t].push_back(
              {dets[d]->score, dets[d]->det_id,
               matches[d].outcome == MatchOutcome::kTruePositive});
        }
      }
    }
  }

  ClassResult result;
  result.ap.assign(kNumBuckets, std::vector<std::optional<double>>(num_thr));
  for (int b = 0; b < kNumBuckets; ++b) {
    if (num_gt[b] == 0) continue;
    for (size_t t = 0; t < num_thr; ++t) {
      result.ap[b][t] =
          InterpolatedAp(pooled[b][t], num_gt[b], config.recall_points);
    }
  }
  return result;
}

}  // namespace

std::vector<MatchRecord> MatchDetections(std::span<const Detection> dets,
                                         std::span<const GroundTruthInstance> gts,
                                         double iou_threshold, int max_dets) {
  std::optional<int64_t> image;
  auto check_image = [&](int64_t id) {
    if (image && *image != id) {
      throw Error(ErrorKind::kUsage,
                  "MatchDetections called with records from images " +
                      std::to_string(*image) + " and " + std::to_string(id));
    }
    image = id;
  };
  for (const auto& d : dets) check_image(d.image_id);
  for (const auto& g : gts) check_image(g.image_id);

  std::vector<const Detection*> ranked;
  for (const auto& d : dets) ranked.push_back(&d);
  std::sort(ranked.begin(), ranked.end(), [](const auto* a, const auto* b) {
    return RanksBefore(a->score, a->det_id, b->score, b->det_id);
  });
  if (max_dets >= 0 && ranked.size() > static_cast<size_t>(max_dets)) {
    ranked.resize(max_dets);
  }
  std::vector<const GroundTruthInstance*> ordered;
  for (const auto& g : gts) ordered.push_back(&g);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto* a, const auto* b) { return a->gt_id < b->gt_id; });

  const size_t nd = ranked.size();
  const size_t ng = ordered.size();
  std::vector<double> ious(nd * ng);
  std::vector<char> gt_ignore(ng), det_out(nd, 0);
  for (size_t g = 0; g < ng; ++g) gt_ignore[g] = ordered[g]->ignore;
  for (size_t d = 0; d < nd; ++d) {
    for (size_t g = 0; g < ng; ++g) {
      ious[d * ng + g] = Iou(ranked[d]->box, ordered[g]->box);
    }
  }
  auto greedy = GreedyMatch(nd, ng, ious, gt_ignore, det_out, iou_threshold);

  std::vector<MatchRecord> out;
  out.reserve(nd);
  for (size_t d = 0; d < nd; ++d) {
    MatchRecord rec;
    rec.det_id = ranked[d]->det_id;
    rec.image_id = ranked[d]->image_id;
    rec.det_label = ranked[d]->label;
    rec.score = ranked[d]->score;
    rec.iou = greedy[d].iou;
    rec.outcome = greedy[d].outcome;
    if (greedy[d].gt_index >= 0) {
      const auto* gt = ordered[greedy[d].gt_index];
      rec.gt_id = gt->gt_id;
      rec.gt_label = gt->label;
      rec.gt_ignored = gt->ignore;
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::optional<double> AveragePrecision(std::span<const MatchRecord> records,
                                       int64_t num_gt, const EvalConfig& config) {
  if (num_gt <= 0) return std::nullopt;
  std::vector<ScoredOutcome> pooled;
  for (const auto& r : records) {
    if (r.outcome == MatchOutcome::kIgnored) continue;
    pooled.push_back(
        {r.score, r.det_id, r.outcome == MatchOutcome::kTruePositive});
  }
  return InterpolatedAp(pooled, num_gt, config.recall_points);
}

CellReport EvaluateCell(const DatasetAnnotations& gt, const DetectionSet& dets,
                        const EvalConfig& config, int threads) {
  config.Validate();
  const auto& classes = gt.vocabulary.labels();
  std::map<std::string, size_t> class_index;
  for (size_t k = 0; k < classes.size(); ++k) {
    class_index.emplace(classes[k].canonical(), k);
  }

  CellReport report;
  report.counts.images = static_cast<int64_t>(gt.images.size());
  report.counts.gts = static_cast<int64_t>(gt.instances.size());
  report.counts.dets = static_cast<int64_t>(dets.detections.size());

  std::vector<std::map<int64_t, ImageSlot>> per_class(classes.size());
  for (const auto& inst : gt.instances) {
    if (inst.ignore) ++report.counts.ignored;
    auto it = class_index.find(inst.label.canonical());
    if (it == class_index.end()) continue;
    per_class[it->second][inst.image_id].gts.push_back(&inst);
  }
  for (const auto& d : dets.detections) {
    auto it = class_index.find(d.label.canonical());
    if (it == class_index.end()) continue;
    per_class[it->second][d.image_id].dets.push_back(&d);
  }

  const std::array<AreaRange, kNumBuckets> ranges = {
      AreaRange{},
      AreaRange{0.0, config.small_max_area},
      AreaRange{config.small_max_area, config.medium_max_area},
      AreaRange{config.medium_max_area,
                std::numeric_limits<double>::infinity()},
  };

  std::vector<ClassResult> results(classes.size());
  ParallelFor(classes.size(), threads, [&](size_t k) {
    results[k] = EvaluateClass(per_class[k], config, ranges);
  });

  const size_t num_thr = config.iou_thresholds.size();
  const bool as_zero = config.undefined_as_zero;
  for (size_t t = 0; t < num_thr; ++t) {
    std::vector<std::optional<double>> column;
    for (const auto& r : results) column.push_back(r.ap[0][t]);
    report.ap_per_threshold.push_back(Mean(column, as_zero));
  }
  for (size_t k = 0; k < classes.size(); ++k) {
    report.per_class_ap[classes[k].canonical()] = Mean(results[k].ap[0], false);
  }
  auto bucket_mean = [&](int b) {
    std::vector<std::optional<double>> all;
    for (const auto& r : results) {
      all.insert(all.end(), r.ap[b].begin(), r.ap[b].end());
    }
    return Mean(all, as_zero);
  };
  report.map_5095 = bucket_mean(0);
  report.ap_small = bucket_mean(1);
  report.ap_medium = bucket_mean(2);
  report.ap_large = bucket_mean(3);

  if (!report.map_5095) {
    report.undefined_reason =
        classes.empty() ? "no classes to evaluate (empty vocabulary)"
                        : "no class has a non-ignored ground-truth instance";
  }
  return report;
}

namespace {

json OptionalToJson(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> OptionalFromJson(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

json ToJson(const CellReport& r) {
  json per_thr = json::array();
  for (const auto& v : r.ap_per_threshold) per_thr.push_back(OptionalToJson(v));
  json per_class = json::object();
  for (const auto& [label, v] : r.per_class_ap) per_class[label] = OptionalToJson(v);
  json out{
      {"map_5095", OptionalToJson(r.map_5095)},
      {"ap_per_threshold", std::move(per_thr)},
      {"ap_small", OptionalToJson(r.ap_small)},
      {"ap_medium", OptionalToJson(r.ap_medium)},
      {"ap_large", OptionalToJson(r.ap_large)},
      {"per_class_ap", std::move(per_class)},
      {"counts",
       {{"images", r.counts.images},
        {"gts", r.counts.gts},
        {"dets", r.counts.dets},
        {"ignored", r.counts.ignored}}},
      {"undefined_reason",
       r.undefined_reason ? json(*r.undefined_reason) : json(nullptr)},
  };
  return out;
}

CellReport CellReportFromJson(const json& j) {
  CellReport r;
  try {
    r.map_5095 = OptionalFromJson(j.at("map_5095"));
    for (const auto& v : j.value("ap_per_threshold", json::array())) {
      r.ap_per_threshold.push_back(OptionalFromJson(v));
    }
    r.ap_small = OptionalFromJson(j.value("ap_small", json(nullptr)));
    r.ap_medium = OptionalFromJson(j.value("ap_medium", json(nullptr)));
    r.ap_large = OptionalFromJson(j.value("ap_large", json(nullptr)));
    const json per_class = j.value("per_class_ap", json::object());
    for (const auto& [k, v] : per_class.items()) {
      r.per_class_ap[k] = OptionalFromJson(v);
    }
    if (j.contains("counts")) {
      const json& c = j.at("counts");
      r.counts = {c.value("images", int64_t{0}), c.value("gts", int64_t{0}),
                  c.value("dets", int64_t{0}), c.value("ignored", int64_t{0})};
    }
    if (j.contains("undefined_reason") && !j.at("undefined_reason").is_null()) {
      r.undefined_reason = j.at("undefined_reason").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, std::string("cell report: ") + e.what());
  }
  return r;
}

}  // namespace xdet
