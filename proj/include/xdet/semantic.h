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

#ifndef XDET_SEMANTIC_H_
#define XDET_SEMANTIC_H_

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "xdet/coco_metrics.h"
#include "xdet/ingest.h"

namespace xdet {

// Dot product of two unit vectors in double precision, clamped to [-1, 1].
// Throws kEmbedding on a dimension mismatch.
template <typename DerivedA, typename DerivedB>
double Cosine(const Eigen::MatrixBase<DerivedA>& u,
              const Eigen::MatrixBase<DerivedB>& v) {
  if (u.size() != v.size()) {
    throw Error(ErrorKind::kEmbedding,
                "cosine of vectors with dims " + std::to_string(u.size()) +
                    " and " + std::to_string(v.size()));
  }
  const double dot = u.template cast<double>().dot(v.template cast<double>());
  return std::clamp(dot, -1.0, 1.0);
}

// Throws kEmbedding unless both tables come from the same model and share
// a dimension.
template <typename KeyA, typename KeyB>
void CheckCompatible(const VectorTable<KeyA>& a, const VectorTable<KeyB>& b) {
  if (a.model_id != b.model_id || a.dim != b.dim) {
    throw Error(ErrorKind::kEmbedding,
                "embedding tables disagree: '" + a.model_id + "' (dim " +
                    std::to_string(a.dim) + ") vs '" + b.model_id + "' (dim " +
                    std::to_string(b.dim) + ")");
  }
}

struct NearestLabel {
  Label label;
  double similarity = 0;
};

// Most similar target label to `pred`; ties go to the lexicographically
// smallest canonical label. pred is looked up in pred_emb, targets in tgt_emb.
NearestLabel NearestTargetLabel(const Label& pred, const EmbeddingTable& pred_emb,
                                const Vocabulary& tgt_vocab,
                                const EmbeddingTable& tgt_emb);

// Open-label remapping: each detection label is rewritten to its nearest
// target label when the similarity is >= tau. Below tau the detection is
// dropped (or kept unchanged under kKeepSourceLabel). Boxes, scores and
// det_ids are never modified; no NMS is run.
DetectionSet OpenLabelRemap(const DetectionSet& dets,
                            const EmbeddingTable& src_emb,
                            const Vocabulary& tgt_vocab,
                            const EmbeddingTable& tgt_emb, double tau,
                            BelowTauPolicy policy = BelowTauPolicy::kDrop);

// 1 + number of target labels strictly more similar to pred than gt is.
int64_t RankGtGivenPred(const Label& pred, const Label& gt,
                        const Vocabulary& tgt_vocab,
                        const EmbeddingTable& pred_emb,
                        const EmbeddingTable& tgt_emb);
inline int64_t RankGtGivenPred(const Label& pred, const Label& gt,
                               const Vocabulary& tgt_vocab,
                               const EmbeddingTable& tgt_emb) {
  return RankGtGivenPred(pred, gt, tgt_vocab, tgt_emb, tgt_emb);
}

// cos(region, e_T(gt)) - cos(region, e_T(pred)). Positive when the region
// evidence prefers the ground truth. nullopt when det_id has no region
// vector; missing text embeddings throw.
std::optional<double> RegionMargin(int64_t det_id,
                                   const RegionEmbeddings& region_emb,
                                   const Label& gt, const Label& pred,
                                   const EmbeddingTable& pred_emb,
                                   const EmbeddingTable& tgt_emb);
inline std::optional<double> RegionMargin(int64_t det_id,
                                          const RegionEmbeddings& region_emb,
                                          const Label& gt, const Label& pred,
                                          const EmbeddingTable& tgt_emb) {
  return RegionMargin(det_id, region_emb, gt, pred, tgt_emb, tgt_emb);
}

struct MatchDiagnostics {
  int64_t det_id = 0;
  Label pred_label;
  Label gt_label;
  double s_tt = 0;
  int64_t rank_gt = 1;
  bool in_top_k = false;
  std::optional<double> delta_it;
  bool is_near_miss = false;
};

// Statistics over label mismatches; every field but n_mismatches is
// undefined when there are none. Delta statistics cover only mismatches with
// a region vector.
struct DiagnosticsSummary {
  int64_t n_mismatches = 0;
  std::optional<double> near_miss_rate;
  std::optional<double> mean_s_tt;
  std::optional<double> median_rank;
  std::optional<double> top_k_rate;
  std::optional<double> mean_delta_it;
  std::optional<double> frac_delta_positive;
  std::optional<double> region_coverage;
};

struct DiagnosticsResult {
  std::vector<MatchDiagnostics> records;
  DiagnosticsSummary summary;
};

// Class-agnostic greedy matching per image at config.diagnostics_iou, so
// that label disagreements surface as matched records.
std::vector<MatchRecord> MatchForDiagnostics(const DatasetAnnotations& gt,
                                             const DetectionSet& dets,
                                             const EvalConfig& config);

// Only records matched to a non-ignored GT whose label differs from the
// prediction are diagnosed. A mismatch is a near miss when s_tt >= tau and
// rank <= top_k.
DiagnosticsResult DiagnoseMismatches(std::span<const MatchRecord> matches,
                                     const Vocabulary& tgt_vocab,
                                     const EmbeddingTable& pred_emb,
                                     const EmbeddingTable& tgt_emb,
                                     const RegionEmbeddings* region_emb,
                                     const EvalConfig& config);

nlohmann::json ToJson(const MatchDiagnostics& d);
nlohmann::json ToJson(const DiagnosticsSummary& s);

}  // namespace xdet

#endif  // XDET_SEMANTIC_H_
