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

#include "xdet/semantic.h"

#include <algorithm>
#include <map>

namespace xdet {

using nlohmann::json;

NearestLabel NearestTargetLabel(const Label& pred, const EmbeddingTable& pred_emb,
                                const Vocabulary& tgt_vocab,
                                const EmbeddingTable& tgt_emb) {
  if (tgt_vocab.empty()) {
    throw Error(ErrorKind::kVocabulary, "target vocabulary is empty");
  }
  const Eigen::VectorXd& query = TextEmbedding(pred_emb, pred);
  NearestLabel best;
  bool have = false;
  // Labels iterate in ascending canonical order, so strict > keeps the
  // lexicographically smallest label among ties.
  for (const Label& candidate : tgt_vocab.labels()) {
    const double s = Cosine(query, TextEmbedding(tgt_emb, candidate));
    if (!have || s > best.similarity) {
      best = {candidate, s};
      have = true;
    }
  }
  return best;
}

DetectionSet OpenLabelRemap(const DetectionSet& dets,
                            const EmbeddingTable& src_emb,
                            const Vocabulary& tgt_vocab,
                            const EmbeddingTable& tgt_emb, double tau,
                            BelowTauPolicy policy) {
  CheckCompatible(src_emb, tgt_emb);
  for (const Label& l : tgt_vocab.labels()) TextEmbedding(tgt_emb, l);

  std::map<Label, std::optional<Label>> decisions;
  DetectionSet out;
  out.source_dataset_id = dets.source_dataset_id;
  out.target_dataset_id = dets.target_dataset_id;
  for (const Detection& d : dets.detections) {
    auto it = decisions.find(d.label);
    if (it == decisions.end()) {
      NearestLabel nearest = NearestTargetLabel(d.label, src_emb, tgt_vocab, tgt_emb);
      std::optional<Label> decision;
      if (nearest.similarity >= tau) {
        decision = nearest.label;
      } else if (policy == BelowTauPolicy::kKeepSourceLabel) {
        decision = d.label;
      }
      it = decisions.emplace(d.label, std::move(decision)).first;
    }
    if (!it->second) continue;
    Detection kept = d;
    kept.label = *it->second;
    out.detections.push_back(std::move(kept));
  }
  return out;
}

int64_t RankGtGivenPred(const Label& pred, const Label& gt,
                        const Vocabulary& tgt_vocab,
                        const EmbeddingTable& pred_emb,
                        const EmbeddingTable& tgt_emb) {
  if (!tgt_vocab.Contains(gt)) {
    throw Error(ErrorKind::kVocabulary,
                "ground-truth label '" + gt.canonical() +
                    "' is not in the target vocabulary");
  }
  const Eigen::VectorXd& query = TextEmbedding(pred_emb, pred);
  const double s_gt = Cosine(query, TextEmbedding(tgt_emb, gt));
  int64_t rank = 1;
  for (const Label& c : tgt_vocab.labels()) {
    if (Cosine(query, TextEmbedding(tgt_emb, c)) > s_gt) ++rank;
  }
  return rank;
}

std::optional<double> RegionMargin(int64_t det_id,
                                   const RegionEmbeddings& region_emb,
                                   const Label& gt, const Label& pred,
                                   const EmbeddingTable& pred_emb,
                                   const EmbeddingTable& tgt_emb) {
  const Eigen::VectorXd& e_gt = TextEmbedding(tgt_emb, gt);
  const Eigen::VectorXd& e_pred = TextEmbedding(pred_emb, pred);
  const Eigen::VectorXd* region = region_emb.Find(det_id);
  if (region == nullptr) return std::nullopt;
  return Cosine(*region, e_gt) - Cosine(*region, e_pred);
}

std::vector<MatchRecord> MatchForDiagnostics(const DatasetAnnotations& gt,
                                             const DetectionSet& dets,
                                             const EvalConfig& config) {
  std::map<int64_t, std::pair<std::vector<GroundTruthInstance>,
                              std::vector<Detection>>>
      by_image;
  for (const auto& inst : gt.instances) by_image[inst.image_id].first.push_back(inst);
  for (const auto& d : dets.detections) by_image[d.image_id].second.push_back(d);
  std::vector<MatchRecord> out;
  for (const auto& [image_id, slot] : by_image) {
    auto records = MatchDetections(slot.second, slot.first, config.diagnostics_iou,
                                   config.max_dets_per_image);
    out.insert(out.end(), std::make_move_iterator(records.begin()),
               std::make_move_iterator(records.end()));
  }
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.det_id < b.det_id; });
  return out;
}

DiagnosticsResult DiagnoseMismatches(std::span<const MatchRecord> matches,
                                     const Vocabulary& tgt_vocab,
                                     const EmbeddingTable& pred_emb,
                                     const EmbeddingTable& tgt_emb,
                                     const RegionEmbeddings* region_emb,
                                     const EvalConfig& config) {
  CheckCompatible(pred_emb, tgt_emb);
  if (region_emb != nullptr) CheckCompatible(*region_emb, tgt_emb);

  DiagnosticsResult result;
  for (const MatchRecord& m : matches) {
    if (m.outcome != MatchOutcome::kTruePositive || !m.gt_id || !m.gt_label) {
      continue;
    }
    if (m.det_label == *m.gt_label) continue;
    MatchDiagnostics d;
    d.det_id = m.det_id;
    d.pred_label = m.det_label;
    d.gt_label = *m.gt_label;
    d.s_tt = Cosine(TextEmbedding(pred_emb, d.pred_label),
                    TextEmbedding(tgt_emb, d.gt_label));
    d.rank_gt = RankGtGivenPred(d.pred_label, d.gt_label, tgt_vocab, pred_emb,
                                tgt_emb);
    d.in_top_k = d.rank_gt <= config.top_k;
    d.is_near_miss = d.s_tt >= config.tau && d.in_top_k;
    if (region_emb != nullptr) {
      d.delta_it = RegionMargin(d.det_id, *region_emb, d.gt_label, d.pred_label,
                                pred_emb, tgt_emb);
    }
    result.records.push_back(std::move(d));
  }
  std::sort(result.records.begin(), result.records.end(),
            [](const auto& a, const auto& b) { return a.det_id < b.det_id; });

  DiagnosticsSummary& s = result.summary;
  const auto& recs = result.records;
  s.n_mismatches = static_cast<int64_t>(recs.size());
  if (recs.empty()) return result;

  const double n = static_cast<double>(recs.size());
  double near = 0, s_tt = 0, top_k = 0, delta_sum = 0, delta_pos = 0;
  int64_t covered = 0;
  std::vector<int64_t> ranks;
  for (const auto& d : recs) {
    near += d.is_near_miss ? 1 : 0;
    s_tt += d.s_tt;
    top_k += d.in_top_k ? 1 : 0;
    ranks.push_back(d.rank_gt);
    if (d.delta_it) {
      ++covered;
      delta_sum += *d.delta_it;
      delta_pos += *d.delta_it > 0 ? 1 : 0;
    }
  }
  std::sort(ranks.begin(), ranks.end());
  const size_t mid = ranks.size() / 2;
  s.near_miss_rate = near / n;
  s.mean_s_tt = s_tt / n;
  s.median_rank = ranks.size() % 2 == 1
                      ? static_cast<double>(ranks[mid])
                      : (ranks[mid - 1] + ranks[mid]) / 2.0;
  s.top_k_rate = top_k / n;
  s.region_coverage = static_cast<double>(covered) / n;
  if (covered > 0) {
    s.mean_delta_it = delta_sum / static_cast<double>(covered);
    s.frac_delta_positive = delta_pos / static_cast<double>(covered);
  }
  return result;
}

namespace {

json Opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

json ToJson(const MatchDiagnostics& d) {
  return json{{"det_id", d.det_id},
              {"pred_label", d.pred_label.canonical()},
              {"gt_label", d.gt_label.canonical()},
              {"s_tt", d.s_tt},
              {"rank_gt", d.rank_gt},
              {"in_top_k", d.in_top_k},
              {"delta_it", Opt(d.delta_it)},
              {"is_near_miss", d.is_near_miss}};
}

json ToJson(const DiagnosticsSummary& s) {
  return json{{"n_mismatches", s.n_mismatches},
              {"near_miss_rate", Opt(s.near_miss_rate)},
              {"mean_s_tt", Opt(s.mean_s_tt)},
              {"median_rank", Opt(s.median_rank)},
              {"top_k_rate", Opt(s.top_k_rate)},
              {"mean_delta_it", Opt(s.mean_delta_it)},
              {"frac_delta_positive", Opt(s.frac_delta_positive)},
              {"region_coverage", Opt(s.region_coverage)}};
}

}  // namespace xdet
