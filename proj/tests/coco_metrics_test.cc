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

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "scene_util.h"

namespace xdet {
namespace {

using testing::DetSpec;
using testing::GtSpec;
using testing::MakeDets;
using testing::MakeGt;

BoundingBox Box(double x, double y, double w, double h) { return {x, y, w, h}; }

// Pixel-count IoU for integer boxes.
double RasterIou(int ax, int ay, int aw, int ah, int bx, int by, int bw, int bh) {
  int inter = 0, uni = 0;
  for (int y = std::min(ay, by); y < std::max(ay + ah, by + bh); ++y) {
    for (int x = std::min(ax, bx); x < std::max(ax + aw, bx + bw); ++x) {
      const bool in_a = x >= ax && x < ax + aw && y >= ay && y < ay + ah;
      const bool in_b = x >= bx && x < bx + bw && y >= by && y < by + bh;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

TEST(IouTest, Examples) {
  EXPECT_EQ(Iou(Box(0, 0, 10, 10), Box(0, 0, 10, 10)), 1.0);
  EXPECT_EQ(Iou(Box(0, 0, 10, 10), Box(20, 20, 5, 5)), 0.0);
  EXPECT_EQ(Iou(Box(0, 0, 10, 10), Box(10, 0, 10, 10)), 0.0);  // touching edge
  EXPECT_NEAR(Iou(Box(0, 0, 10, 10), Box(5, 0, 10, 10)), 50.0 / 150.0, 1e-12);
  EXPECT_NEAR(Iou(Box(0, 0, 10, 10), Box(5, 0, 10, 10)),
              RasterIou(0, 0, 10, 10, 5, 0, 10, 10), 1e-12);
}

TEST(IouTest, MatchesRasterOnRandomBoxes) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> pos(0, 30), size(1, 25);
  for (int i = 0; i < 500; ++i) {
    const int a[] = {pos(rng), pos(rng), size(rng), size(rng)};
    const int b[] = {pos(rng), pos(rng), size(rng), size(rng)};
    const double got = Iou(Box(a[0], a[1], a[2], a[3]), Box(b[0], b[1], b[2], b[3]));
    EXPECT_NEAR(got, RasterIou(a[0], a[1], a[2], a[3], b[0], b[1], b[2], b[3]), 1e-12);
    EXPECT_EQ(got, Iou(Box(b[0], b[1], b[2], b[3]), Box(a[0], a[1], a[2], a[3])));
    EXPECT_GE(got, 0.0);
    EXPECT_LE(got, 1.0);
  }
}

class MatchTest : public ::testing::Test {
 protected:
  DatasetAnnotations Gt(std::vector<GtSpec> gts) { return MakeGt({1, 2}, {"car"}, gts); }
};

TEST_F(MatchTest, HigherScoreTakesTheGroundTruth) {
  auto gt = Gt({{1, 1, "car", 0, 0, 10, 10}});
  for (double first : {0.9, 0.4}) {
    auto dets = MakeDets({{1, "car", 0, 0, 10, 10, first}, {1, "car", 1, 0, 10, 10, 0.6}}, gt);
    auto recs = MatchDetections(dets.detections, gt.instances, 0.5, 100);
    ASSERT_EQ(recs.size(), 2u);
    // Records come back in rank order.
    EXPECT_GE(recs[0].score, recs[1].score);
    EXPECT_EQ(recs[0].outcome, MatchOutcome::kTruePositive);
    EXPECT_EQ(recs[0].gt_id, 1);
    EXPECT_EQ(recs[1].outcome, MatchOutcome::kFalsePositive);
    EXPECT_FALSE(recs[1].gt_id);
  }
}

TEST_F(MatchTest, BestIouWinsAndTiesGoToSmallerId) {
  auto gt = Gt({{7, 1, "car", 0, 0, 10, 10}, {3, 1, "car", 2, 0, 10, 10}, {5, 1, "car", 2, 0, 10, 10}});
  auto dets = MakeDets({{1, "car", 2, 0, 10, 10, 0.9}, {1, "car", 2, 0, 10, 10, 0.8}}, gt);
  auto recs = MatchDetections(dets.detections, gt.instances, 0.5, 100);
  EXPECT_EQ(recs[0].gt_id, 3);
  EXPECT_EQ(recs[1].gt_id, 5);
  EXPECT_EQ(recs[1].iou, 1.0);
}

TEST_F(MatchTest, IgnoredGroundTruthAbsorbsDetections) {
  auto gt = Gt({{1, 1, "car", 0, 0, 10, 10, /*ignore=*/true}});
  auto dets = MakeDets({{1, "car", 0, 0, 10, 10, 0.9}, {1, "car", 0, 0, 10, 10, 0.8}}, gt);
  auto recs = MatchDetections(dets.detections, gt.instances, 0.5, 100);
  for (const auto& r : recs) {
    EXPECT_EQ(r.outcome, MatchOutcome::kIgnored);
    EXPECT_TRUE(r.gt_ignored);
  }
  EXPECT_EQ(AveragePrecision(recs, 0, EvalConfig{}), std::nullopt);
}

TEST_F(MatchTest, NonIgnoredPreferredOverIgnored) {
  auto gt = Gt({{1, 1, "car", 0, 0, 10, 10, true}, {2, 1, "car", 1, 0, 10, 10}});
  auto dets = MakeDets({{1, "car", 0, 0, 10, 10, 0.9}}, gt);
  auto recs = MatchDetections(dets.detections, gt.instances, 0.5, 100);
  EXPECT_EQ(recs[0].outcome, MatchOutcome::kTruePositive);
  EXPECT_EQ(recs[0].gt_id, 2);
}

TEST_F(MatchTest, BelowThresholdIsFalsePositive) {
  auto gt = Gt({{1, 1, "car", 0, 0, 10, 10}});
  auto dets = MakeDets({{1, "car", 5, 0, 10, 10, 0.9}}, gt);  // IoU 1/3
  EXPECT_EQ(MatchDetections(dets.detections, gt.instances, 0.5, 100)[0].outcome,
            MatchOutcome::kFalsePositive);
  EXPECT_EQ(MatchDetections(dets.detections, gt.instances, 0.3, 100)[0].outcome,
            MatchOutcome::kTruePositive);
}

TEST_F(MatchTest, MaxDetsTruncatesByRank) {
  auto gt = Gt({});
  std::vector<DetSpec> specs;
  for (int i = 0; i < 5; ++i) specs.push_back({1, "car", 0, 0, 5, 5, 0.1 * (i + 1)});
  auto dets = MakeDets(specs, gt);
  auto recs = MatchDetections(dets.detections, gt.instances, 0.5, 2);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0].det_id, 4);
  EXPECT_EQ(recs[1].det_id, 3);
}

TEST_F(MatchTest, MixedImagesAreRejected) {
  auto gt = Gt({{1, 1, "car", 0, 0, 10, 10}});
  auto dets = MakeDets({{2, "car", 0, 0, 10, 10, 0.9}}, gt);
  try {
    MatchDetections(dets.detections, gt.instances, 0.5, 100);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUsage);
  }
}

TEST_F(MatchTest, GreedyMatchesBruteForceOnEveryOrder) {
  // Two detections, one GT: the first in rank order always claims it.
  auto gt = Gt({{1, 1, "car", 0, 0, 10, 10}});
  for (double s0 : {0.3, 0.7}) {
    for (double s1 : {0.3, 0.7}) {
      auto dets = MakeDets({{1, "car", 0, 0, 10, 10, s0}, {1, "car", 1, 1, 10, 10, s1}}, gt);
      auto recs = MatchDetections(dets.detections, gt.instances, 0.5, 100);
      const int64_t winner = s1 > s0 ? 1 : 0;
      for (const auto& r : recs) {
        EXPECT_EQ(r.outcome == MatchOutcome::kTruePositive, r.det_id == winner);
      }
    }
  }
}

TEST(AveragePrecisionTest, GoldenValues) {
  const EvalConfig config;
  auto gt = MakeGt({1}, {"car"}, {{1, 1, "car", 0, 0, 10, 10}});
  auto match = [&](std::vector<DetSpec> d) {
    auto dets = MakeDets(d, gt);
    return AveragePrecision(MatchDetections(dets.detections, gt.instances, 0.5, 100), 1, config);
  };
  EXPECT_EQ(match({{1, "car", 0, 0, 10, 10, 0.9}}), 1.0);
  EXPECT_EQ(match({{1, "car", 50, 50, 10, 10, 0.9}}), 0.0);
  EXPECT_EQ(match({}), 0.0);
  // FP ranked above the TP: precision 1/2 at every recall point.
  EXPECT_NEAR(*match({{1, "car", 50, 50, 10, 10, 0.9}, {1, "car", 0, 0, 10, 10, 0.8}}), 0.5,
              1e-12);
  // TP above the FP leaves AP at 1.
  EXPECT_EQ(match({{1, "car", 0, 0, 10, 10, 0.9}, {1, "car", 50, 50, 10, 10, 0.8}}), 1.0);
}

TEST(AveragePrecisionTest, HalfRecall) {
  const EvalConfig config;
  auto gt = MakeGt({1}, {"car"}, {{1, 1, "car", 0, 0, 10, 10}, {2, 1, "car", 50, 50, 10, 10}});
  auto dets = MakeDets({{1, "car", 0, 0, 10, 10, 0.9}}, gt);
  auto ap = AveragePrecision(MatchDetections(dets.detections, gt.instances, 0.5, 100), 2, config);
  EXPECT_NEAR(*ap, 51.0 / 101.0, 1e-12);  // recall points 0.00..0.50
}

TEST(EvaluateCellTest, PerfectDetectorScoresExactlyOne) {
  auto gt = MakeGt({1, 2}, {"car", "person"},
                   {{1, 1, "car", 0, 0, 10, 10},
                    {2, 1, "person", 20, 20, 40, 80},
                    {3, 2, "car", 5, 5, 120, 100}});
  std::vector<DetSpec> specs;
  for (const auto& g : gt.instances) {
    specs.push_back({g.image_id, g.label.canonical(), g.box.x, g.box.y, g.box.w, g.box.h, 0.9});
  }
  auto r = EvaluateCell(gt, MakeDets(specs, gt), EvalConfig{});
  EXPECT_EQ(r.map_5095, 1.0);
  for (const auto& ap : r.ap_per_threshold) EXPECT_EQ(ap, 1.0);
  EXPECT_EQ(r.ap_small, 1.0);
  EXPECT_EQ(r.ap_medium, 1.0);
  EXPECT_EQ(r.ap_large, 1.0);
  EXPECT_EQ(r.per_class_ap.at("car"), 1.0);
  EXPECT_FALSE(r.undefined_reason);
}

TEST(EvaluateCellTest, EmptyDetectionsScoreZero) {
  auto gt = MakeGt({1}, {"car"}, {{1, 1, "car", 0, 0, 10, 10}});
  auto r = EvaluateCell(gt, MakeDets({}, gt), EvalConfig{});
  EXPECT_EQ(r.map_5095, 0.0);
  EXPECT_EQ(r.ap_large, std::nullopt);
}

TEST(EvaluateCellTest, NoGroundTruthIsUndefined) {
  auto gt = MakeGt({1}, {"car"}, {});
  auto r = EvaluateCell(gt, MakeDets({{1, "car", 0, 0, 5, 5, 0.5}}, gt), EvalConfig{});
  EXPECT_EQ(r.map_5095, std::nullopt);
  EXPECT_TRUE(r.undefined_reason);
  EvalConfig as_zero;
  as_zero.undefined_as_zero = true;
  EXPECT_EQ(EvaluateCell(gt, MakeDets({}, gt), as_zero).map_5095, 0.0);
}

TEST(EvaluateCellTest, UndefinedClassesAreExcludedFromTheMean) {
  auto gt = MakeGt({1}, {"car", "dog"}, {{1, 1, "car", 0, 0, 10, 10}});
  auto dets = MakeDets({{1, "car", 0, 0, 10, 10, 0.9}, {1, "dog", 30, 30, 5, 5, 0.9}}, gt);
  auto r = EvaluateCell(gt, dets, EvalConfig{});
  EXPECT_EQ(r.map_5095, 1.0);
  EXPECT_EQ(r.per_class_ap.at("dog"), std::nullopt);
  EvalConfig as_zero;
  as_zero.undefined_as_zero = true;
  EXPECT_EQ(EvaluateCell(gt, dets, as_zero).map_5095, 0.5);
}

TEST(EvaluateCellTest, SizeBucketBoundariesAreHalfOpen) {
  // 32x32 is medium, 31x32 is small, 96x96 is large.
  auto gt = MakeGt({1}, {"car"},
                   {{1, 1, "car", 0, 0, 32, 32}, {2, 1, "car", 100, 0, 31, 32},
                    {3, 1, "car", 200, 0, 96, 96}});
  auto dets = MakeDets({{1, "car", 0, 0, 32, 32, 0.9}}, gt);
  auto r = EvaluateCell(gt, dets, EvalConfig{});
  EXPECT_EQ(r.ap_medium, 1.0);
  EXPECT_EQ(r.ap_small, 0.0);
  EXPECT_EQ(r.ap_large, 0.0);
}

TEST(EvaluateCellTest, ReportRoundTripsThroughJson) {
  std::mt19937_64 rng(5);
  auto scene = testing::RandomMicroScene(rng);
  auto gt = testing::SceneGt(scene);
  auto r = EvaluateCell(gt, testing::SceneDets(scene, gt), EvalConfig{});
  EXPECT_EQ(ToJson(CellReportFromJson(ToJson(r))), ToJson(r));
}

TEST(EvalConfigTest, DefaultsAndValidation) {
  EvalConfig c;
  ASSERT_EQ(c.iou_thresholds.size(), 10u);
  EXPECT_EQ(c.iou_thresholds.front(), 0.5);
  EXPECT_EQ(c.iou_thresholds.back(), 0.95);
  EXPECT_NO_THROW(c.Validate());
  EXPECT_EQ(ToJson(EvalConfigFromJson(ToJson(c))), ToJson(c));
  c.tau = 1.5;
  EXPECT_THROW(c.Validate(), Error);
  c = EvalConfig{};
  c.iou_thresholds = {0.7, 0.5};
  EXPECT_THROW(c.Validate(), Error);
}

// --- Equivalence with the brute-force reference ---

void ExpectSame(const std::optional<double>& got, const std::optional<double>& want,
                const char* what, int scene) {
  ASSERT_EQ(got.has_value(), want.has_value()) << what << " scene " << scene;
  if (got) EXPECT_NEAR(*got, *want, 1e-9) << what << " scene " << scene;
}

TEST(OracleEquivalenceTest, RandomMicroScenes) {
  std::mt19937_64 rng(2024);
  testing::OracleParams params;
  params.thresholds = EvalConfig::DefaultIouThresholds();
  for (int i = 0; i < 300; ++i) {
    auto scene = testing::RandomMicroScene(rng);
    auto gt = testing::SceneGt(scene);
    auto r = EvaluateCell(gt, testing::SceneDets(scene, gt), EvalConfig{});
    auto want = testing::OracleEvaluate(scene, params);
    ExpectSame(r.map_5095, want.map, "map", i);
    ExpectSame(r.ap_small, want.small, "small", i);
    ExpectSame(r.ap_medium, want.medium, "medium", i);
    ExpectSame(r.ap_large, want.large, "large", i);
    for (size_t t = 0; t < want.per_threshold.size(); ++t) {
      ExpectSame(r.ap_per_threshold[t], want.per_threshold[t], "per-threshold", i);
    }
  }
}

TEST(OracleEquivalenceTest, SmallMaxDets) {
  std::mt19937_64 rng(99);
  testing::OracleParams params;
  params.thresholds = EvalConfig::DefaultIouThresholds();
  params.max_dets = 2;
  EvalConfig config;
  config.max_dets_per_image = 2;
  for (int i = 0; i < 200; ++i) {
    auto scene = testing::RandomMicroScene(rng);
    auto gt = testing::SceneGt(scene);
    auto r = EvaluateCell(gt, testing::SceneDets(scene, gt), config);
    ExpectSame(r.map_5095, testing::OracleEvaluate(scene, params).map, "map", i);
  }
}

// --- Metric properties ---

class MetricPropertyTest : public ::testing::TestWithParam<int> {
 protected:
  void SetUp() override {
    std::mt19937_64 rng(1000 + GetParam());
    do {
      scene_ = testing::RandomMicroScene(rng);
    } while (scene_.gts.empty());
  }
  CellReport Eval(const testing::MicroScene& s, const EvalConfig& c = EvalConfig{}) {
    auto gt = testing::SceneGt(s);
    return EvaluateCell(gt, testing::SceneDets(s, gt), c);
  }
  testing::MicroScene scene_;
};

TEST_P(MetricPropertyTest, MonotoneScoreTransformIsInvariant) {
  auto squashed = scene_;
  for (auto& d : squashed.dets) d.score = std::pow(d.score, 3.0) * 0.5;
  EXPECT_EQ(ToJson(Eval(scene_)), ToJson(Eval(squashed)));
}

TEST_P(MetricPropertyTest, ImageRelabelIsInvariant) {
  auto moved = scene_;
  for (auto& id : moved.images) id = 1000 - id;
  for (auto& g : moved.gts) g.image = 1000 - g.image;
  for (auto& d : moved.dets) d.image = 1000 - d.image;
  EXPECT_EQ(ToJson(Eval(scene_)), ToJson(Eval(moved)));
}

TEST_P(MetricPropertyTest, AveragesAreConsistent) {
  auto r = Eval(scene_);
  if (!r.map_5095) return;
  double sum = 0;
  int n = 0;
  for (const auto& ap : r.ap_per_threshold) {
    ASSERT_TRUE(ap);
    sum += *ap;
    ++n;
  }
  EXPECT_NEAR(*r.map_5095, sum / n, 1e-12);
  double cls_sum = 0;
  int cls_n = 0;
  for (const auto& [name, ap] : r.per_class_ap) {
    if (ap) {
      cls_sum += *ap;
      ++cls_n;
    }
  }
  EXPECT_NEAR(*r.map_5095, cls_sum / cls_n, 1e-12);
}

TEST_P(MetricPropertyTest, DistantIgnoredGroundTruthChangesNothing) {
  auto extra = scene_;
  extra.gts.push_back({999, extra.images[0], extra.labels[0], 5000, 5000, 20, 20, 400, true});
  EXPECT_EQ(ToJson(Eval(scene_))["map_5095"], ToJson(Eval(extra))["map_5095"]);
}

TEST_P(MetricPropertyTest, ApBoundedByRecall) {
  auto gt = testing::SceneGt(scene_);
  auto dets = testing::SceneDets(scene_, gt);
  for (const auto& label : gt.vocabulary.labels()) {
    std::vector<MatchRecord> all;
    int64_t num_gt = 0;
    int64_t tp = 0;
    for (int64_t image : scene_.images) {
      std::vector<Detection> d;
      std::vector<GroundTruthInstance> g;
      for (const auto& x : dets.detections) {
        if (x.image_id == image && x.label == label) d.push_back(x);
      }
      for (const auto& x : gt.instances) {
        if (x.image_id == image && x.label == label) {
          g.push_back(x);
          num_gt += !x.ignore;
        }
      }
      for (auto& r : MatchDetections(d, g, 0.5, 100)) {
        tp += r.outcome == MatchOutcome::kTruePositive;
        all.push_back(r);
      }
    }
    auto ap = AveragePrecision(all, num_gt, EvalConfig{});
    if (!ap) continue;
    // Only recall points up to the final recall can contribute.
    const double max_recall = static_cast<double>(tp) / num_gt;
    EXPECT_LE(*ap, (std::floor(100 * max_recall + 1e-9) + 1) / 101 + 1e-12);
    if (tp == 0) EXPECT_EQ(*ap, 0.0);
    EXPECT_GE(*ap, 0.0);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, MetricPropertyTest, ::testing::Range(0, 40));

}  // namespace
}  // namespace xdet
