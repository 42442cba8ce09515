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

#ifndef XDET_VOCAB_ALIGN_H_
#define XDET_VOCAB_ALIGN_H_

#include <map>
#include <optional>
#include <string>

#include "json.hpp"
#include "xdet/ingest.h"

namespace xdet {

// One-to-one correspondence between source and target labels used by
// closed-label evaluation. Keyed by source canonical form.
class SharedLabelMap {
 public:
  SharedLabelMap() = default;

  size_t shared_size() const { return forward_.size(); }
  bool empty() const { return forward_.empty(); }

  // Target label for a source label, if the source label is shared.
  std::optional<Label> TargetOf(const Label& source) const;
  bool ContainsTarget(const Label& target) const;

  const std::map<Label, Label>& pairs() const { return forward_; }

  // Throws kMapping if either side is already taken.
  void Insert(const Label& source, const Label& target);

 private:
  std::map<Label, Label> forward_;
  std::map<Label, Label> backward_;
};

// Explicit pairs first, then string-equal labels not already covered by an
// explicit pair on either side. No similarity-based merging.
SharedLabelMap BuildSharedMap(const Vocabulary& source, const Vocabulary& target,
                              const std::optional<LabelMapping>& explicit_map);

// Keeps detections whose label is shared and rewrites the label to the
// target side. Order, boxes, scores and det_ids are untouched.
DetectionSet FilterToShared(const DetectionSet& dets, const SharedLabelMap& map);

enum class OffIntersectionPolicy { kIgnore, kDelete };

// Restricts scoring to the target side of the map: off-intersection
// instances are flagged ignore (default) or removed, and the vocabulary is
// reduced to the mapped target labels.
DatasetAnnotations RestrictGroundTruth(
    const DatasetAnnotations& gt, const SharedLabelMap& map,
    OffIntersectionPolicy policy = OffIntersectionPolicy::kIgnore);

// Source vocabulary implied by the labels present in a detection set.
Vocabulary VocabularyFromDetections(const DetectionSet& dets);

nlohmann::json ToJson(const SharedLabelMap& map);

}  // namespace xdet

#endif  // XDET_VOCAB_ALIGN_H_
