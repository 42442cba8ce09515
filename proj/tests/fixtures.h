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

#ifndef XDET_TESTS_FIXTURES_H_
#define XDET_TESTS_FIXTURES_H_

// Randomized end-to-end fixtures for the open/closed pipelines.

#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "scene_util.h"

namespace xdet::testing {

struct OpenFixture {
  DatasetAnnotations gt;
  DetectionSet dets;
  EmbeddingTable src_emb;
  EmbeddingTable tgt_emb;
};

// Detections only use target labels and both sides share one table.
inline OpenFixture SharedLabelFixture(std::mt19937_64& rng, int dim = 8) {
  MicroScene scene;
  do {
    scene = RandomMicroScene(rng);
  } while (scene.gts.empty());
  for (auto& d : scene.dets) {
    if (d.label == "unknown") d.label = scene.labels[0];
  }
  std::vector<std::pair<std::string, Eigen::VectorXd>> entries;
  for (const auto& l : scene.labels) entries.emplace_back(l, RandomUnit(rng, dim));
  OpenFixture f;
  f.gt = SceneGt(scene);
  f.dets = SceneDets(scene, f.gt);
  f.src_emb = MakeTable("fixture-model", dim, entries);
  f.tgt_emb = f.src_emb;
  return f;
}

// Detections carry source-only names whose embeddings are noisy copies of
// target label embeddings, so similarities spread across typical taus.
inline OpenFixture DisjointLabelFixture(std::mt19937_64& rng, int dim = 8) {
  MicroScene scene;
  do {
    scene = RandomMicroScene(rng);
  } while (scene.gts.empty());
  std::vector<std::pair<std::string, Eigen::VectorXd>> tgt, src;
  for (const auto& l : scene.labels) tgt.emplace_back(l, RandomUnit(rng, dim));
  const int num_src = 6;
  std::uniform_real_distribution<double> noise(0.2, 1.6);
  std::uniform_int_distribution<size_t> pick(0, tgt.size() - 1);
  for (int i = 0; i < num_src; ++i) {
    Eigen::VectorXd v = tgt[pick(rng)].second + noise(rng) * RandomUnit(rng, dim);
    src.emplace_back("src" + std::to_string(i), v);
  }
  std::uniform_int_distribution<int> src_pick(0, num_src - 1);
  for (auto& d : scene.dets) d.label = "src" + std::to_string(src_pick(rng));
  OpenFixture f;
  f.gt = SceneGt(scene);
  f.dets = SceneDets(scene, f.gt);
  f.src_emb = MakeTable("fixture-model", dim, src);
  f.tgt_emb = MakeTable("fixture-model", dim, tgt);
  return f;
}

// Writes a random transfer grid (GT, detections, embeddings, config) into
// `dir` and returns the config path. Datasets draw vocabularies from a shared
// concept pool; near-synonyms get nearby embeddings so open-label remapping
// has something to recover.
inline std::filesystem::path WriteRandomGrid(const TempDir& dir, uint64_t seed,
                                             int num_datasets, const std::string& mode) {
  std::mt19937_64 rng(seed);
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const int dim = 8;
  const std::vector<std::string> pool = {"car", "automobile", "person", "pedestrian",
                                         "dog", "bicycle", "bike", "truck"};
  std::map<std::string, Eigen::VectorXd> concept_vec;
  for (const auto& c : pool) concept_vec[c] = RandomUnit(rng, dim);
  concept_vec["automobile"] = (concept_vec["car"] + 0.3 * concept_vec["automobile"]).normalized();
  concept_vec["pedestrian"] = (concept_vec["person"] + 0.4 * concept_vec["pedestrian"]).normalized();
  concept_vec["bike"] = (concept_vec["bicycle"] + 0.5 * concept_vec["bike"]).normalized();
  concept_vec["truck"] = (concept_vec["car"] + 1.0 * concept_vec["truck"]).normalized();

  const std::vector<std::string> names = {"alpha", "beta", "gamma", "delta"};
  std::vector<std::vector<std::string>> vocabs(num_datasets);
  std::vector<std::vector<GtSpec>> gts(num_datasets);
  json config{{"mode", mode}, {"datasets", json::array()}, {"cells", json::array()}};
  for (int d = 0; d < num_datasets; ++d) {
    auto shuffled = pool;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    vocabs[d].assign(shuffled.begin(), shuffled.begin() + uni(3, 5));
    int64_t next_id = 1;
    for (int64_t image = 1; image <= 3; ++image) {
      const int n = uni(1, 5);
      for (int k = 0; k < n; ++k) {
        const double w = uni(8, 140), h = uni(8, 140);
        gts[d].push_back({next_id++, image, vocabs[d][uni(0, static_cast<int>(vocabs[d].size()) - 1)],
                          static_cast<double>(uni(0, 400)), static_cast<double>(uni(0, 300)), w, h,
                          uni(0, 9) == 0});
      }
    }
    std::vector<std::pair<std::string, Eigen::VectorXd>> emb;
    for (const auto& l : vocabs[d]) emb.emplace_back(l, concept_vec[l]);
    dir.Write(names[d] + "_gt.json", CocoJson({1, 2, 3}, vocabs[d], gts[d]));
    dir.Write(names[d] + "_emb.json", EmbeddingJson("grid-model", dim, emb));
    config["datasets"].push_back({{"dataset_id", names[d]},
                                  {"setting", d % 2 == 0 ? "agnostic" : "specific"},
                                  {"gt_path", names[d] + "_gt.json"},
                                  {"embedding_path", names[d] + "_emb.json"}});
  }
  for (int s = 0; s < num_datasets; ++s) {
    for (int t = 0; t < num_datasets; ++t) {
      // A detector trained on s names things with its own vocabulary.
      auto nearest_in_source = [&](const std::string& label) {
        std::string best;
        double best_sim = -2;
        for (const auto& l : vocabs[s]) {
          const double sim = concept_vec[l].dot(concept_vec[label]);
          if (sim > best_sim) {
            best_sim = sim;
            best = l;
          }
        }
        return best;
      };
      std::vector<DetSpec> dets;
      for (const auto& g : gts[t]) {
        if (uni(0, 9) < 2) continue;
        const double j = std::max(1.0, g.w / 8);
        dets.push_back({g.image_id, nearest_in_source(g.label), g.x + uni(-1, 1) * j,
                        g.y + uni(-1, 1) * j, g.w, g.h, uni(1, 100) / 100.0});
      }
      for (int k = 0; k < 3; ++k) {
        dets.push_back({uni(1, 3), vocabs[s][uni(0, static_cast<int>(vocabs[s].size()) - 1)],
                        static_cast<double>(uni(0, 400)), static_cast<double>(uni(0, 300)),
                        static_cast<double>(uni(8, 100)), static_cast<double>(uni(8, 100)),
                        uni(1, 100) / 100.0});
      }
      const std::string file = names[s] + "_to_" + names[t] + ".json";
      dir.Write(file, ResultsJson(dets));
      config["cells"].push_back(
          {{"source_id", names[s]}, {"target_id", names[t]}, {"detections_path", file}});
    }
  }
  return dir.Write("grid.json", config);
}

}  // namespace xdet::testing

#endif  // XDET_TESTS_FIXTURES_H_
