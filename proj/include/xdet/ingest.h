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

#ifndef XDET_INGEST_H_
#define XDET_INGEST_H_

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"
#include "xdet/error.h"

namespace xdet {

enum class SettingType { kSpecific, kAgnostic };

std::string_view SettingTypeName(SettingType setting);
SettingType ParseSettingType(std::string_view name);

// A category name together with its normalized form. Equality and ordering
// consider only the canonical string.
class Label {
 public:
  Label() = default;

  const std::string& raw() const { return raw_; }
  const std::string& canonical() const { return canonical_; }

  friend bool operator==(const Label& a, const Label& b) {
    return a.canonical_ == b.canonical_;
  }
  friend std::strong_ordering operator<=>(const Label& a, const Label& b) {
    return a.canonical_ <=> b.canonical_;
  }

 private:
  friend Label NormalizeLabel(std::string_view raw);
  Label(std::string raw, std::string canonical)
      : raw_(std::move(raw)), canonical_(std::move(canonical)) {}

  std::string raw_;
  std::string canonical_;
};

// Lowercases (ASCII), trims, and collapses internal whitespace runs to a
// single space. Throws kInvalidLabel when nothing is left.
Label NormalizeLabel(std::string_view raw);

// COCO [x, y, w, h] box, top-left origin, pixels.
struct BoundingBox {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;

  double x2() const { return x + w; }
  double y2() const { return y + h; }
  double area() const { return w * h; }
  bool IsValid() const;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct GroundTruthInstance {
  int64_t gt_id = 0;
  int64_t image_id = 0;
  Label label;
  BoundingBox box;
  double area = 0;
  bool ignore = false;

  friend bool operator==(const GroundTruthInstance&,
                         const GroundTruthInstance&) = default;
};

struct Detection {
  int64_t det_id = 0;
  int64_t image_id = 0;
  Label label;
  BoundingBox box;
  double score = 0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

// Ordered set of labels for one dataset, sorted by canonical form.
class Vocabulary {
 public:
  Vocabulary() = default;
  // Throws kVocabulary if two labels share a canonical form.
  Vocabulary(std::string dataset_id, std::vector<Label> labels,
             SettingType setting = SettingType::kAgnostic);

  const std::string& dataset_id() const { return dataset_id_; }
  SettingType setting() const { return setting_; }
  const std::vector<Label>& labels() const { return labels_; }
  size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  bool Contains(const Label& label) const;

  void set_dataset_id(std::string id) { dataset_id_ = std::move(id); }
  void set_setting(SettingType setting) { setting_ = setting; }

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::string dataset_id_;
  std::vector<Label> labels_;
  SettingType setting_ = SettingType::kAgnostic;
};

struct ImageInfo {
  int64_t image_id = 0;
  int64_t width = 0;
  int64_t height = 0;

  friend bool operator==(const ImageInfo&, const ImageInfo&) = default;
};

struct GroundTruthLoadReport {
  int64_t dropped_degenerate = 0;
};

struct DatasetAnnotations {
  Vocabulary vocabulary;
  std::map<int64_t, ImageInfo> images;
  // Sorted by gt_id.
  std::vector<GroundTruthInstance> instances;
  // COCO category id -> label, used to join detections that only carry ids.
  std::map<int64_t, Label> categories;
  GroundTruthLoadReport load_report;

  bool HasImage(int64_t image_id) const { return images.contains(image_id); }
};

struct DetectionSet {
  std::string source_dataset_id;
  std::string target_dataset_id;
  std::vector<Detection> detections;

  friend bool operator==(const DetectionSet&, const DetectionSet&) = default;
};

// Unit-norm vectors keyed by canonical label (text) or det_id (regions).
// raw_norms keeps the L2 norm each vector had in the file.
template <typename Key>
struct VectorTable {
  std::string model_id;
  int64_t dim = 0;
  std::map<Key, Eigen::VectorXd> entries;
  std::map<Key, double> raw_norms;

  const Eigen::VectorXd* Find(const Key& key) const {
    auto it = entries.find(key);
    return it == entries.end() ? nullptr : &it->second;
  }
};

using EmbeddingTable = VectorTable<std::string>;
using RegionEmbeddings = VectorTable<int64_t>;

// Text embedding lookup that throws kEmbedding naming the missing label.
const Eigen::VectorXd& TextEmbedding(const EmbeddingTable& table,
                                     const Label& label);

struct LabelMapping {
  std::vector<std::pair<Label, Label>> pairs;  // (source, target)
};

// ---- Parsing from in-memory JSON ----

DatasetAnnotations ParseGroundTruth(const nlohmann::json& doc,
                                    std::string dataset_id,
                                    SettingType setting = SettingType::kAgnostic);
DetectionSet ParseDetections(const nlohmann::json& doc,
                             const DatasetAnnotations& target,
                             std::string source_dataset_id = "");
EmbeddingTable ParseEmbeddings(const nlohmann::json& doc);
RegionEmbeddings ParseRegionEmbeddings(const nlohmann::json& doc);
LabelMapping ParseLabelMapping(const nlohmann::json& doc);

// ---- File loaders ----
// Dataset ids default to the file stem when empty.

nlohmann::json ReadJsonFile(const std::filesystem::path& path);

DatasetAnnotations LoadGroundTruth(const std::filesystem::path& path,
                                   std::string dataset_id = "",
                                   SettingType setting = SettingType::kAgnostic);
DetectionSet LoadDetections(const std::filesystem::path& path,
                            const DatasetAnnotations& target,
                            std::string source_dataset_id = "");
EmbeddingTable LoadEmbeddings(const std::filesystem::path& path);
RegionEmbeddings LoadRegionEmbeddings(const std::filesystem::path& path);
LabelMapping LoadLabelMapping(const std::filesystem::path& path);

// ---- Serialization (inverse of the parsers) ----

nlohmann::json ToCocoJson(const DatasetAnnotations& gt);
nlohmann::json ToResultsJson(const DetectionSet& dets);
nlohmann::json ToJson(const EmbeddingTable& table);
nlohmann::json ToJson(const RegionEmbeddings& table);
nlohmann::json ToJson(const LabelMapping& mapping);

}  // namespace xdet

#endif  // XDET_INGEST_H_
