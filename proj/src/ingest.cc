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

#include "xdet/ingest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

namespace xdet {

using nlohmann::json;

const char* ErrorKindName(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kInvalidLabel: return "InvalidLabel";
    case ErrorKind::kParse: return "ParseError";
    case ErrorKind::kVocabulary: return "VocabularyError";
    case ErrorKind::kReferential: return "ReferentialError";
    case ErrorKind::kRange: return "RangeError";
    case ErrorKind::kEmbedding: return "EmbeddingError";
    case ErrorKind::kMapping: return "MappingError";
    case ErrorKind::kUsage: return "UsageError";
    case ErrorKind::kIo: return "IOError";
  }
  return "Error";
}

std::string_view SettingTypeName(SettingType setting) {
  return setting == SettingType::kSpecific ? "specific" : "agnostic";
}

SettingType ParseSettingType(std::string_view name) {
  if (name == "specific") return SettingType::kSpecific;
  if (name == "agnostic") return SettingType::kAgnostic;
  throw Error(ErrorKind::kParse,
              "unknown setting type '" + std::string(name) +
                  "' (expected specific|agnostic)");
}

namespace {

bool IsSpace(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' ||
         c == '\v';
}

char AsciiLower(char c) {
  return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

}  // namespace

Label NormalizeLabel(std::string_view raw) {
  std::string canonical;
  canonical.reserve(raw.size());
  bool pending_space = false;
  for (char c : raw) {
    if (IsSpace(c)) {
      pending_space = !canonical.empty();
      continue;
    }
    if (pending_space) canonical.push_back(' ');
    pending_space = false;
    canonical.push_back(AsciiLower(c));
  }
  if (canonical.empty()) {
    throw Error(ErrorKind::kInvalidLabel,
                "label '" + std::string(raw) + "' is empty after normalization");
  }
  return Label(std::string(raw), std::move(canonical));
}

bool BoundingBox::IsValid() const {
  return std::isfinite(x) && std::isfinite(y) && std::isfinite(w) &&
         std::isfinite(h) && w > 0 && h > 0;
}

Vocabulary::Vocabulary(std::string dataset_id, std::vector<Label> labels,
                       SettingType setting)
    : dataset_id_(std::move(dataset_id)),
      labels_(std::move(labels)),
      setting_(setting) {
  std::sort(labels_.begin(), labels_.end());
  auto dup = std::adjacent_find(labels_.begin(), labels_.end());
  if (dup != labels_.end()) {
    throw Error(ErrorKind::kVocabulary,
                "duplicate label '" + dup->canonical() + "' in vocabulary of '" +
                    dataset_id_ + "' (raw '" + dup->raw() + "' and '" +
                    std::next(dup)->raw() + "')");
  }
}

bool Vocabulary::Contains(const Label& label) const {
  return std::binary_search(labels_.begin(), labels_.end(), label);
}

const Eigen::VectorXd& TextEmbedding(const EmbeddingTable& table,
                                     const Label& label) {
  const Eigen::VectorXd* v = table.Find(label.canonical());
  if (v == nullptr) {
    throw Error(ErrorKind::kEmbedding, "no embedding for label '" +
                                           label.canonical() + "' in table '" +
                                           table.model_id + "'");
  }
  return *v;
}

namespace {

// nlohmann type errors surface as ParseError with the record context.
template <typename Fn>
auto WithParseContext(const std::string& context, Fn&& fn) {
  try {
    return fn();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, context + ": " + e.what());
  }
}

const json& Require(const json& obj, const char* key,
                    const std::string& context) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw Error(ErrorKind::kParse, context + ": missing field '" + key + "'");
  }
  return obj.at(key);
}

BoundingBox ParseBox(const json& j, const std::string& context) {
  if (!j.is_array() || j.size() != 4) {
    throw Error(ErrorKind::kParse, context + ": bbox must be [x, y, w, h]");
  }
  for (const auto& v : j) {
    if (!v.is_number()) {
      throw Error(ErrorKind::kParse, context + ": bbox values must be numbers");
    }
  }
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(),
          j[3].get<double>()};
}

std::string DefaultId(const std::filesystem::path& path, std::string id) {
  return id.empty() ? path.stem().string() : id;
}

template <typename Key>
void AddVector(VectorTable<Key>& table, const Key& key, const json& values,
               const std::string& key_text) {
  if (!values.is_array()) {
    throw Error(ErrorKind::kParse,
                "embedding entry '" + key_text + "' must be an array");
  }
  const auto n = static_cast<int64_t>(values.size());
  if (n != table.dim) {
    throw Error(ErrorKind::kEmbedding,
                "embedding entry '" + key_text + "' has dim " +
                    std::to_string(n) + ", table dim is " +
                    std::to_string(table.dim));
  }
  Eigen::VectorXd v(n);
  for (int64_t i = 0; i < n; ++i) {
    if (!values[i].is_number()) {
      throw Error(ErrorKind::kParse,
                  "embedding entry '" + key_text + "' has a non-numeric value");
    }
    v[i] = values[i].get<double>();
  }
  if (!v.allFinite()) {
    throw Error(ErrorKind::kEmbedding,
                "embedding entry '" + key_text + "' is not finite");
  }
  const double norm = v.norm();
  if (norm == 0.0) {
    throw Error(ErrorKind::kEmbedding,
                "embedding entry '" + key_text + "' is a zero vector");
  }
  if (table.entries.contains(key)) {
    throw Error(ErrorKind::kEmbedding,
                "embedding key '" + key_text + "' appears more than once");
  }
  table.entries.emplace(key, v / norm);
  table.raw_norms.emplace(key, norm);
}

template <typename Key, typename KeyFn>
VectorTable<Key> ParseVectorTable(const json& doc, KeyFn&& make_key) {
  return WithParseContext("embedding file", [&] {
    VectorTable<Key> table;
    table.model_id = Require(doc, "model_id", "embedding file").get<std::string>();
    table.dim = Require(doc, "dim", "embedding file").get<int64_t>();
    if (table.dim <= 0) {
      throw Error(ErrorKind::kEmbedding, "dim must be positive");
    }
    const json& entries = Require(doc, "entries", "embedding file");
    if (!entries.is_object()) {
      throw Error(ErrorKind::kParse, "embedding file: 'entries' must be an object");
    }
    for (const auto& [k, v] : entries.items()) {
      AddVector(table, make_key(k), v, k);
    }
    return table;
  });
}

template <typename Key, typename KeyFn>
json VectorTableToJson(const VectorTable<Key>& table, KeyFn&& key_text) {
  json entries = json::object();
  for (const auto& [key, v] : table.entries) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    entries[key_text(key)] = std::move(arr);
  }
  return json{{"model_id", table.model_id},
              {"dim", table.dim},
              {"entries", std::move(entries)}};
}

}  // namespace

DatasetAnnotations ParseGroundTruth(const json& doc, std::string dataset_id,
                                    SettingType setting) {
  DatasetAnnotations gt;
  if (!doc.is_object()) {
    throw Error(ErrorKind::kParse, "annotation file must be a JSON object");
  }
  WithParseContext("annotation file", [&] {
    for (const auto& img : Require(doc, "images", "annotation file")) {
      ImageInfo info;
      info.image_id = Require(img, "id", "image").get<int64_t>();
      info.width = img.value("width", int64_t{0});
      info.height = img.value("height", int64_t{0});
      if (!gt.images.emplace(info.image_id, info).second) {
        throw Error(ErrorKind::kParse,
                    "duplicate image id " + std::to_string(info.image_id));
      }
    }

    std::vector<Label> labels;
    for (const auto& cat : Require(doc, "categories", "annotation file")) {
      const auto id = Require(cat, "id", "category").get<int64_t>();
      Label label =
          NormalizeLabel(Require(cat, "name", "category").get<std::string>());
      if (!gt.categories.emplace(id, label).second) {
        throw Error(ErrorKind::kParse,
                    "duplicate category id " + std::to_string(id));
      }
      labels.push_back(std::move(label));
    }
    gt.vocabulary = Vocabulary(dataset_id, std::move(labels), setting);

    const json& anns = Require(doc, "annotations", "annotation file");
    std::set<int64_t> seen_ids;
    int64_t index = 0;
    for (const auto& ann : anns) {
      const std::string ctx = "annotation #" + std::to_string(index);
      GroundTruthInstance inst;
      inst.gt_id = ann.contains("id") ? ann.at("id").get<int64_t>() : index;
      ++index;
      inst.image_id = Require(ann, "image_id", ctx).get<int64_t>();
      if (!gt.HasImage(inst.image_id)) {
        throw Error(ErrorKind::kReferential,
                    ctx + " references unknown image_id " +
                        std::to_string(inst.image_id));
      }
      const auto cat_id = Require(ann, "category_id", ctx).get<int64_t>();
      auto cat = gt.categories.find(cat_id);
      if (cat == gt.categories.end()) {
        throw Error(ErrorKind::kReferential,
                    ctx + " references unknown category_id " +
                        std::to_string(cat_id));
      }
      inst.label = cat->second;
      inst.box = ParseBox(Require(ann, "bbox", ctx), ctx);
      if (!inst.box.IsValid()) {
        ++gt.load_report.dropped_degenerate;
        spdlog::warn("{}: dropping degenerate ground-truth box", ctx);
        continue;
      }
      inst.area = ann.contains("area") ? ann.at("area").get<double>()
                                       : inst.box.area();
      if (!(inst.area > 0) || !std::isfinite(inst.area)) {
        inst.area = inst.box.area();
      }
      inst.ignore = ann.value("iscrowd", 0) != 0 || ann.value("ignore", 0) != 0;
      if (!seen_ids.insert(inst.gt_id).second) {
        throw Error(ErrorKind::kParse,
                    "duplicate annotation id " + std::to_string(inst.gt_id));
      }
      gt.instances.push_back(std::move(inst));
    }
    return 0;
  });
  std::sort(gt.instances.begin(), gt.instances.end(),
            [](const auto& a, const auto& b) { return a.gt_id < b.gt_id; });
  return gt;
}

DetectionSet ParseDetections(const json& doc, const DatasetAnnotations& target,
                             std::string source_dataset_id) {
  if (!doc.is_array()) {
    throw Error(ErrorKind::kParse, "detections file must be a JSON array");
  }
  DetectionSet set;
  set.source_dataset_id = std::move(source_dataset_id);
  set.target_dataset_id = target.vocabulary.dataset_id();
  set.detections.reserve(doc.size());
  int64_t det_id = 0;
  for (const auto& rec : doc) {
    const std::string ctx = "detection #" + std::to_string(det_id);
    WithParseContext(ctx, [&] {
      Detection det;
      det.det_id = det_id;
      det.image_id = Require(rec, "image_id", ctx).get<int64_t>();
      if (!target.HasImage(det.image_id)) {
        throw Error(ErrorKind::kReferential,
                    ctx + " references unknown image_id " +
                        std::to_string(det.image_id));
      }
      if (rec.contains("category_name")) {
        det.label = NormalizeLabel(rec.at("category_name").get<std::string>());
      } else if (rec.contains("category_id")) {
        const auto cat_id = rec.at("category_id").get<int64_t>();
        auto cat = target.categories.find(cat_id);
        if (cat == target.categories.end()) {
          throw Error(ErrorKind::kReferential,
                      ctx + " references unknown category_id " +
                          std::to_string(cat_id));
        }
        det.label = cat->second;
      } else {
        throw Error(ErrorKind::kParse,
                    ctx + ": needs category_name or category_id");
      }
      det.box = ParseBox(Require(rec, "bbox", ctx), ctx);
      if (!det.box.IsValid()) {
        throw Error(ErrorKind::kRange, ctx + ": degenerate bbox");
      }
      const json& score = Require(rec, "score", ctx);
      if (!score.is_number()) {
        throw Error(ErrorKind::kParse, ctx + ": score must be a number");
      }
      det.score = score.get<double>();
      if (!std::isfinite(det.score) || det.score < 0.0 || det.score > 1.0) {
        throw Error(ErrorKind::kRange,
                    ctx + ": score " + std::to_string(det.score) +
                        " outside [0, 1]");
      }
      set.detections.push_back(std::move(det));
      return 0;
    });
    ++det_id;
  }
  return set;
}

EmbeddingTable ParseEmbeddings(const json& doc) {
  return ParseVectorTable<std::string>(
      doc, [](const std::string& k) { return NormalizeLabel(k).canonical(); });
}

RegionEmbeddings ParseRegionEmbeddings(const json& doc) {
  return ParseVectorTable<int64_t>(doc, [](const std::string& k) {
    size_t pos = 0;
    int64_t id = -1;
    try {
      id = std::stoll(k, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != k.size() || k.empty() || id < 0) {
      throw Error(ErrorKind::kParse,
                  "region embedding key '" + k + "' is not a det_id");
    }
    return id;
  });
}

LabelMapping ParseLabelMapping(const json& doc) {
  if (!doc.is_array()) {
    throw Error(ErrorKind::kParse, "mapping file must be a JSON array");
  }
  LabelMapping mapping;
  std::set<std::string> sources, targets;
  WithParseContext("mapping file", [&] {
    for (const auto& entry : doc) {
      Label src = NormalizeLabel(Require(entry, "source", "mapping").get<std::string>());
      Label tgt = NormalizeLabel(Require(entry, "target", "mapping").get<std::string>());
      if (!sources.insert(src.canonical()).second) {
        throw Error(ErrorKind::kMapping,
                    "source label '" + src.canonical() + "' mapped twice");
      }
      if (!targets.insert(tgt.canonical()).second) {
        throw Error(ErrorKind::kMapping,
                    "target label '" + tgt.canonical() + "' mapped twice");
      }
      mapping.pairs.emplace_back(std::move(src), std::move(tgt));
    }
    return 0;
  });
  return mapping;
}

json ReadJsonFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::kIo, "cannot open '" + path.string() + "'");
  }
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::kParse, path.string() + ": " + e.what());
  }
}

DatasetAnnotations LoadGroundTruth(const std::filesystem::path& path,
                                   std::string dataset_id,
                                   SettingType setting) {
  return ParseGroundTruth(ReadJsonFile(path),
                          DefaultId(path, std::move(dataset_id)), setting);
}

DetectionSet LoadDetections(const std::filesystem::path& path,
                            const DatasetAnnotations& target,
                            std::string source_dataset_id) {
  return ParseDetections(ReadJsonFile(path), target,
                         std::move(source_dataset_id));
}

EmbeddingTable LoadEmbeddings(const std::filesystem::path& path) {
  return ParseEmbeddings(ReadJsonFile(path));
}

RegionEmbeddings LoadRegionEmbeddings(const std::filesystem::path& path) {
  return ParseRegionEmbeddings(ReadJsonFile(path));
}

LabelMapping LoadLabelMapping(const std::filesystem::path& path) {
  return ParseLabelMapping(ReadJsonFile(path));
}

json ToCocoJson(const DatasetAnnotations& gt) {
  json images = json::array();
  for (const auto& [id, img] : gt.images) {
    images.push_back({{"id", id}, {"width", img.width}, {"height", img.height}});
  }
  json categories = json::array();
  std::map<std::string, int64_t> cat_ids;
  for (const auto& [id, label] : gt.categories) {
    categories.push_back({{"id", id}, {"name", label.raw()}});
    cat_ids.emplace(label.canonical(), id);
  }
  json anns = json::array();
  for (const auto& inst : gt.instances) {
    anns.push_back({{"id", inst.gt_id},
                    {"image_id", inst.image_id},
                    {"category_id", cat_ids.at(inst.label.canonical())},
                    {"bbox", {inst.box.x, inst.box.y, inst.box.w, inst.box.h}},
                    {"area", inst.area},
                    {"iscrowd", 0},
                    {"ignore", inst.ignore ? 1 : 0}});
  }
  return json{{"images", std::move(images)},
              {"categories", std::move(categories)},
              {"annotations", std::move(anns)}};
}

json ToResultsJson(const DetectionSet& dets) {
  json out = json::array();
  for (const auto& d : dets.detections) {
    out.push_back({{"image_id", d.image_id},
                   {"category_name", d.label.raw()},
                   {"bbox", {d.box.x, d.box.y, d.box.w, d.box.h}},
                   {"score", d.score}});
  }
  return out;
}

json ToJson(const EmbeddingTable& table) {
  return VectorTableToJson(table, [](const std::string& k) { return k; });
}

json ToJson(const RegionEmbeddings& table) {
  return VectorTableToJson(table,
                           [](int64_t k) { return std::to_string(k); });
}

json ToJson(const LabelMapping& mapping) {
  json out = json::array();
  for (const auto& [src, tgt] : mapping.pairs) {
    out.push_back({{"source", src.raw()}, {"target", tgt.raw()}});
  }
  return out;
}

}  // namespace xdet
