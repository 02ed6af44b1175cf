// Copyright 2026 The bevsync Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "bevsync/eval.hpp"

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "bevsync/gtflow.hpp"
#include "bevsync/warp.hpp"

namespace bevsync {
namespace {

const BevGridSpec kGrid{-15.75, -15.75, 0.5, 64, 64};

GroundTruthObject gt_at(double x, double y, double speed) { return {Box2d(Pose2d(x, y, 0.0), 4.0, 2.0), speed}; }

Detection det_at(double x, double y, double score, double est_speed = 0.0) {
  Detection d;
  d.center = Vec2d(x, y);
  d.score = score;
  d.est_speed = est_speed;
  return d;
}

BevFeatureMap paint(const std::vector<Box2d>& boxes, double value = 1.0) {
  BevFeatureMap m = BevFeatureMap::zeros(kGrid, kFeatureChannels);
  for (const auto& b : boxes) {
    for (const auto& c : points_in_box(b, kGrid)) m.at(c.row, c.col, kOccupancyChannel) = value;
  }
  return m;
}

// Global greedy matching by hand: repeatedly take the closest free pair.
std::vector<double> greedy_oracle(const std::vector<Detection>& dets, const std::vector<GroundTruthObject>& gts,
                                  double max_dist) {
  std::vector<double> dist(dets.size(), INFINITY);
  std::vector<bool> det_used(dets.size()), gt_used(gts.size());
  while (true) {
    double best = INFINITY;
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      for (std::size_t j = 0; j < gts.size(); ++j) {
        if (det_used[i] || gt_used[j]) continue;
        const double d = std::hypot(dets[i].center.x() - gts[j].box.center.x, dets[i].center.y() - gts[j].box.center.y);
        if (d < best) {
          best = d;
          bi = i;
          bj = j;
        }
      }
    }
    if (!(best <= max_dist)) break;
    det_used[bi] = gt_used[bj] = true;
    dist[bi] = best;
  }
  return dist;
}

TEST(Detect, EmptyMapGivesNothing) {
  EXPECT_TRUE(detect(BevFeatureMap::zeros(kGrid, kFeatureChannels), 0.35).empty());
}

TEST(Detect, OneBoxAtFootprintCentroid) {
  const Box2d box(Pose2d(2.1, -3.4, 0.6), 4.0, 2.0);
  const auto cells = points_in_box(box, kGrid);
  Vec2d centroid = Vec2d::Zero();
  for (const auto& c : cells) centroid += cell_center(kGrid, c);
  centroid /= double(cells.size());
  const auto dets = detect(paint({box}), 0.35);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_LE((dets[0].center - centroid).norm(), 1e-12);
  EXPECT_LE((dets[0].center - Vec2d(2.1, -3.4)).norm(), 0.5 * kGrid.cell);
  EXPECT_EQ(dets[0].cells, cells.size());
  EXPECT_EQ(dets[0].score, 1.0);
}

TEST(Detect, TwoSeparatedBoxesGiveTwoDetections) {
  const auto dets = detect(paint({Box2d(Pose2d(-5, 0, 0), 4, 2), Box2d(Pose2d(5, 0, 0), 4, 2)}), 0.35);
  ASSERT_EQ(dets.size(), 2u);
  EXPECT_NEAR(dets[0].center.x(), -5.0, 0.25);
  EXPECT_NEAR(dets[1].center.x(), 5.0, 0.25);
}

TEST(Detect, DiagonalNeighboursJoin) {
  BevFeatureMap m = BevFeatureMap::zeros(kGrid, kFeatureChannels);
  m.at(10, 10, kOccupancyChannel) = 0.8;
  m.at(11, 11, kOccupancyChannel) = 0.6;
  m.at(20, 20, kOccupancyChannel) = 0.3;  // below threshold
  const auto dets = detect(m, 0.35);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].cells, 2u);
  EXPECT_DOUBLE_EQ(dets[0].score, 0.7);
}

TEST(Detect, ScoreIsClamped) {
  EXPECT_EQ(detect(paint({Box2d(Pose2d(0, 0, 0), 2, 2)}, 1.7), 0.35)[0].score, 1.0);
  EXPECT_THROW(detect(BevFeatureMap::zeros(kGrid, 4), 1.0), std::invalid_argument);
  EXPECT_THROW(detect(BevFeatureMap::zeros(kGrid, 4), 0.0), std::invalid_argument);
}

TEST(MatchAndScore, PerfectDetections) {
  const std::vector<GroundTruthObject> gts{gt_at(0, 0, 0), gt_at(8, 3, 2.0), gt_at(-6, -6, 3.0)};
  std::vector<Detection> dets;
  for (const auto& g : gts) dets.push_back(det_at(g.box.center.x, g.box.center.y, 0.9));
  const EvalReport r = match_and_score(dets, gts);
  for (auto c : {MotionClass::all, MotionClass::static_objects, MotionClass::dynamic_objects}) {
    for (double ap : r[c].ap) EXPECT_EQ(ap, 1.0);
    EXPECT_EQ(r[c].mean_translation_error, 0.0);
    EXPECT_EQ(r[c].recall, 1.0);
  }
  EXPECT_EQ(r[MotionClass::static_objects].gt_count, 1u);
  EXPECT_EQ(r[MotionClass::dynamic_objects].gt_count, 2u);
}

TEST(MatchAndScore, DisplacedDetectionsFollowThresholds) {
  const std::vector<GroundTruthObject> gts{gt_at(0, 0, 0), gt_at(9, 3, 2.0)};
  const std::vector<Detection> dets{det_at(1.5, 0, 0.9), det_at(9, 4.5, 0.8)};
  const EvalReport r = match_and_score(dets, gts);
  const std::vector<double> want{0.0, 0.0, 1.0, 1.0};
  EXPECT_EQ(r[MotionClass::all].ap, want);
  EXPECT_DOUBLE_EQ(r[MotionClass::all].mean_translation_error, 1.5);
}

TEST(MatchAndScore, HandComputedAveragePrecision) {
  const std::vector<GroundTruthObject> gts{gt_at(0, 0, 0), gt_at(10, 0, 0), gt_at(-10, 0, 0)};
  // Scores order: hit, miss, hit. Third ground truth never found.
  const std::vector<Detection> dets{det_at(0.3, 0, 0.9), det_at(0, 10, 0.8), det_at(10.4, 0, 0.7)};
  const EvalReport r = match_and_score(dets, gts, {0.5});
  // Precision 1, 1/2, 2/3; interpolated: 1 and 2/3 at the two hits.
  EXPECT_DOUBLE_EQ(r[MotionClass::all].ap[0], (1.0 + 2.0 / 3.0) / 3.0);
  EXPECT_DOUBLE_EQ(r[MotionClass::all].recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r[MotionClass::all].mean_translation_error, 0.35);
}

TEST(MatchAndScore, NoGroundTruthGivesNan) {
  const EvalReport r = match_and_score({det_at(0, 0, 0.5)}, {});
  EXPECT_TRUE(std::isnan(r[MotionClass::all].ap[0]));
  EXPECT_TRUE(std::isnan(r[MotionClass::all].recall));
  EXPECT_TRUE(std::isnan(r[MotionClass::all].mean_translation_error));
  const EvalReport s = match_and_score({}, {gt_at(0, 0, 0)});
  EXPECT_EQ(s[MotionClass::all].ap[0], 0.0);
  EXPECT_EQ(s[MotionClass::all].recall, 0.0);
  EXPECT_TRUE(std::isnan(s[MotionClass::dynamic_objects].ap[0]));
}

TEST(MatchAndScore, UnmatchedDetectionsUseEstimatedSpeed) {
  const std::vector<GroundTruthObject> gts{gt_at(0, 0, 0)};
  const std::vector<Detection> dets{det_at(0, 0, 0.9), det_at(10, 10, 0.5, 1.0), det_at(-10, 10, 0.5, 0.1)};
  const EvalReport r = match_and_score(dets, gts);
  EXPECT_EQ(r[MotionClass::static_objects].det_count, 2u);
  EXPECT_EQ(r[MotionClass::dynamic_objects].det_count, 1u);
  // Threshold is strict: exactly 0.2 m/s counts as static.
  EXPECT_EQ(match_and_score({}, {gt_at(0, 0, 0.2)})[MotionClass::static_objects].gt_count, 1u);
}

TEST(MatchAndScore, RejectsUnsortedThresholds) {
  EXPECT_THROW(match_and_score({}, {}, {2.0, 1.0}), std::invalid_argument);
}

TEST(MatchAndScoreProperties, RandomScenes) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(-12, 12), jitter(-3, 3), score(0.01, 1), speed(0, 3);
  std::uniform_int_distribution<int> count(0, 8);
  EvalAccumulator acc;
  for (int s = 0; s < 300; ++s) {
    std::vector<GroundTruthObject> gts;
    std::vector<Detection> dets;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) {
      gts.push_back(gt_at(pos(rng), pos(rng), speed(rng) < 1.0 ? 0.0 : speed(rng)));
      if (score(rng) < 0.8) dets.push_back(det_at(gts.back().box.center.x + jitter(rng), gts.back().box.center.y + jitter(rng), score(rng), speed(rng)));
    }
    for (int i = count(rng) / 3; i > 0; --i) dets.push_back(det_at(pos(rng), pos(rng), score(rng), speed(rng)));
    acc.add_scene(dets, gts);

    const EvalReport r = match_and_score(dets, gts);
    const auto oracle = greedy_oracle(dets, gts, 4.0);
    std::size_t within2 = 0;
    double err = 0;
    for (double d : oracle) {
      if (d <= 2.0) {
        ++within2;
        err += d;
      }
    }
    ASSERT_EQ(r[MotionClass::all].matches, within2) << s;
    if (within2 > 0) ASSERT_NEAR(r[MotionClass::all].mean_translation_error, err / double(within2), 1e-12);
    ASSERT_EQ(r[MotionClass::all].matches,
              r[MotionClass::static_objects].matches + r[MotionClass::dynamic_objects].matches);
    ASSERT_EQ(r[MotionClass::all].det_count,
              r[MotionClass::static_objects].det_count + r[MotionClass::dynamic_objects].det_count);
  }
  const EvalReport pooled = acc.report();
  for (const auto& m : pooled.classes) {
    for (std::size_t k = 0; k < m.ap.size(); ++k) {
      EXPECT_GE(m.ap[k], 0.0);
      EXPECT_LE(m.ap[k], 1.0);
      if (k > 0) EXPECT_GE(m.ap[k], m.ap[k - 1]);
    }
  }
  EXPECT_EQ(pooled[MotionClass::all].matches,
            pooled[MotionClass::static_objects].matches + pooled[MotionClass::dynamic_objects].matches);
}

// Rasterized scene, EMC-only alignment of an older frame versus GT-flow warping.
struct MixedScene {
  Scene scene;
  BevFeatureMap f0, f1;
  std::vector<GroundTruthObject> gts;
};

MixedScene mixed_scene(std::uint64_t seed, double t0, double t1) {
  SceneConfig cfg;
  cfg.object_count = 4;
  cfg.dynamic_fraction = 0.5;
  cfg.spawn_half_extent_m = 9.0;
  MixedScene m;
  m.scene = generate_scene(seed, cfg);
  const RasterOptions clean{0.0};
  m.f0 = rasterize_bev(m.scene, t0, kGrid, Modality::lidar, 0, clean);
  m.f1 = rasterize_bev(m.scene, t1, kGrid, Modality::lidar, 0, clean);
  const Pose2d to_ego = inverse(m.scene.ego.pose_at(t1));
  for (const auto& t : m.scene.tracks) {
    m.gts.push_back({Box2d(compose(to_ego, t.pose_at(t1)), t.length, t.width), t.speed_mps});
  }
  return m;
}

TEST(MatchAndScore, EgoOnlyAlignmentSplitsStaticAndDynamic) {
  EvalAccumulator acc;
  double speed_sum = 0;
  int dynamic = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const MixedScene m = mixed_scene(seed, 0.5, 1.0);
    const BevFeatureMap aligned = emc_align(m.f0, m.f1.ego_pose, 1.0);
    acc.add_scene(detect(aligned, 0.35), m.gts);
    for (const auto& g : m.gts) {
      if (g.speed > kDynamicSpeedThreshold) {
        speed_sum += g.speed;
        ++dynamic;
      }
    }
  }
  ASSERT_GT(dynamic, 0);
  const EvalReport r = acc.report();
  EXPECT_GE(r[MotionClass::static_objects].ap[0], 0.9);
  EXPECT_LE(r[MotionClass::dynamic_objects].ap[0], 0.2);
  EXPECT_NEAR(r[MotionClass::dynamic_objects].mean_translation_error, speed_sum / dynamic * 0.5, 0.25);
}

TEST(MatchAndScore, GroundTruthFlowWarpIsFixedPoint) {
  EvalAccumulator acc;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const MixedScene m = mixed_scene(seed, 0.5, 1.0);
    const FlowField emc = emc_flow(m.f0.ego_pose, m.f1.ego_pose, kGrid, FlowDirection::forward);
    const FlowField dyn = dense_gt_flow(m.scene.tracks, 0.5, 1.0, m.scene.ego, kGrid);
    const BevFeatureMap warped = splat_tokens(warp_tokens(tokens_from_grid(kGrid), emc, dyn), m.f0, kGrid, 1.0, m.f1.ego_pose);
    acc.add_scene(detect(warped, 0.35), m.gts);
  }
  const EvalReport r = acc.report();
  EXPECT_LE(r[MotionClass::dynamic_objects].mean_translation_error, kGrid.cell);
  EXPECT_GE(r[MotionClass::dynamic_objects].recall, 0.9);
}

}  // namespace
}  // namespace bevsync
