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

#include "xdet/vocab_align.h"

#include <set>

namespace xdet {

std::optional<Label> SharedLabelMap::TargetOf(const Label& source) const {
  auto it = forward_.find(source);
  if (it == forward_.end()) return std::nullopt;
  return it->second;
}

bool SharedLabelMap::ContainsTarget(const Label& target) const {
  return backward_.contains(target);
}

void SharedLabelMap::Insert(const Label& source, const Label& target) {
  if (forward_.contains(source)) {
    throw Error(ErrorKind::kMapping,
                "source label '" + source.canonical() + "' mapped twice");
  }
  if (backward_.contains(target)) {
    throw Error(ErrorKind::kMapping, "target label '" + target.canonical() +
                                         "' is the image of two source labels");
  }
  forward_.emplace(source, target);
  backward_.emplace(target, source);
}

SharedLabelMap BuildSharedMap(const Vocabulary& source, const Vocabulary& target,
                              const std::optional<LabelMapping>& explicit_map) {
  SharedLabelMap map;
  if (explicit_map) {
    for (const auto& [src, tgt] : explicit_map->pairs) {
      if (!source.Contains(src)) {
        throw Error(ErrorKind::kReferential,
                    "mapping source '" + src.canonical() +
                        "' is not in vocabulary of '" + source.dataset_id() + "'");
      }
      if (!target.Contains(tgt)) {
        throw Error(ErrorKind::kReferential,
                    "mapping target '" + tgt.canonical() +
                        "' is not in vocabulary of '" + target.dataset_id() + "'");
      }
      map.Insert(src, tgt);
    }
  }
  for (const Label& label : source.labels()) {
    if (!target.Contains(label)) continue;
    // Explicit entries win over string equality on either side.
    if (map.TargetOf(label) || map.ContainsTarget(label)) continue;
    // Use the target's raw spelling on the target side.
    const auto& tl = target.labels();
    map.Insert(label, *std::lower_bound(tl.begin(), tl.end(), label));
  }
  return map;
}

DetectionSet FilterToShared(const DetectionSet& dets, const SharedLabelMap& map) {
  DetectionSet out;
  out.source_dataset_id = dets.source_dataset_id;
  out.target_dataset_id = dets.target_dataset_id;
  for (const Detection& d : dets.detections) {
    if (auto target = map.TargetOf(d.label)) {
      Detection kept = d;
      kept.label = *target;
      out.detections.push_back(std::move(kept));
    }
  }
  return out;
}

DatasetAnnotations RestrictGroundTruth(const DatasetAnnotations& gt,
                                       const SharedLabelMap& map,
                                       OffIntersectionPolicy policy) {
  DatasetAnnotations out;
  out.images = gt.images;
  out.load_report = gt.load_report;
  std::vector<Label> kept;
  for (const Label& label : gt.vocabulary.labels()) {
    if (map.ContainsTarget(label)) kept.push_back(label);
  }
  out.vocabulary = Vocabulary(gt.vocabulary.dataset_id(), std::move(kept),
                              gt.vocabulary.setting());
  for (const auto& [id, label] : gt.categories) {
    if (out.vocabulary.Contains(label)) out.categories.emplace(id, label);
  }
  for (const GroundTruthInstance& inst : gt.instances) {
    if (map.ContainsTarget(inst.label)) {
      out.instances.push_back(inst);
    } else if (policy == OffIntersectionPolicy::kIgnore) {
      GroundTruthInstance ignored = inst;
      ignored.ignore = true;
      out.instances.push_back(std::move(ignored));
    }
  }
  return out;
}

Vocabulary VocabularyFromDetections(const DetectionSet& dets) {
  std::set<Label> labels;
  for (const Detection& d : dets.detections) labels.insert(d.label);
  return Vocabulary(dets.source_dataset_id,
                    std::vector<Label>(labels.begin(), labels.end()));
}

nlohmann::json ToJson(const SharedLabelMap& map) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [src, tgt] : map.pairs()) {
    pairs.push_back({{"source", src.canonical()}, {"target", tgt.canonical()}});
  }
  return {{"shared_size", map.shared_size()}, {"pairs", std::move(pairs)}};
}

}  // namespace xdet
