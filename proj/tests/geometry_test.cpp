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

#include "bevsync/geometry.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

namespace bevsync {
namespace {

constexpr double kPi = std::numbers::pi;

double deg(double d) { return d * kPi / 180.0; }

// Independent oracle: explicit 2x2 rotation written out by hand.
Vec2d rotate_by_hand(double yaw, const Vec2d& v) {
  return {std::cos(yaw) * v.x() - std::sin(yaw) * v.y(), std::sin(yaw) * v.x() + std::cos(yaw) * v.y()};
}

// Independent oracle: projection onto the box axes with explicit dot products.
bool contains_by_hand(const Box2d& b, const Vec2d& p) {
  const Vec2d d = p - Vec2d(b.center.x, b.center.y);
  const Vec2d ax(std::cos(b.center.yaw), std::sin(b.center.yaw));
  const Vec2d ay(-std::sin(b.center.yaw), std::cos(b.center.yaw));
  return std::abs(d.dot(ax)) <= b.length / 2 + 1e-9 && std::abs(d.dot(ay)) <= b.width / 2 + 1e-9;
}

std::vector<CellIndex> exhaustive_cells(const Box2d& b, const BevGridSpec& g) {
  std::vector<CellIndex> out;
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      if (contains_by_hand(b, {g.origin_x + c * g.cell, g.origin_y + r * g.cell})) out.push_back({r, c});
    }
  }
  return out;
}

void expect_pose_near(const Pose2d& a, const Pose2d& b, double tol) {
  EXPECT_NEAR(a.x, b.x, tol);
  EXPECT_NEAR(a.y, b.y, tol);
  EXPECT_NEAR(std::remainder(a.yaw - b.yaw, 2 * kPi), 0.0, tol);
}

TEST(Pose2, NormalizesYawIntoHalfOpenRange) {
  EXPECT_DOUBLE_EQ(Pose2d(0, 0, 3 * kPi).yaw, kPi);
  EXPECT_DOUBLE_EQ(Pose2d(0, 0, -kPi).yaw, kPi);
  EXPECT_NEAR(Pose2d(0, 0, deg(270)).yaw, deg(-90), 1e-12);
}

TEST(Compose, IdentityIsNeutral) {
  const Pose2d p(1.5, -2.0, 0.7);
  EXPECT_EQ(compose(Pose2d::identity(), p), p);
}

TEST(Compose, PureTranslationsAdd) {
  const Pose2d r = compose(Pose2d(1, 0, 0), Pose2d(2, 0, 0));
  EXPECT_EQ(r, Pose2d(3, 0, 0));
}

TEST(Compose, QuarterTurnThenStep) {
  const Pose2d r = compose(Pose2d(0, 0, deg(90)), Pose2d(1, 0, 0));
  const Vec2d oracle = rotate_by_hand(deg(90), {1, 0});
  EXPECT_NEAR(r.x, oracle.x(), 1e-12);
  EXPECT_NEAR(r.y, oracle.y(), 1e-12);
  EXPECT_NEAR(r.x, 0.0, 1e-12);
  EXPECT_NEAR(r.y, 1.0, 1e-12);
  EXPECT_NEAR(r.yaw, deg(90), 1e-12);
}

TEST(Apply, Examples) {
  EXPECT_EQ(apply(Pose2d::identity(), Vec2d(3, 4)), Vec2d(3, 4));
  const Vec2d q = apply(Pose2d(0, 0, deg(90)), Vec2d(1, 0));
  EXPECT_NEAR(q.x(), 0.0, 1e-12);
  EXPECT_NEAR(q.y(), 1.0, 1e-12);
  const Vec2d h = apply(Pose2d(5, -2, deg(180)), Vec2d(1, 1));
  const Vec2d oracle = rotate_by_hand(deg(180), {1, 1}) + Vec2d(5, -2);
  EXPECT_NEAR(h.x(), oracle.x(), 1e-12);
  EXPECT_NEAR(h.y(), oracle.y(), 1e-12);
  EXPECT_NEAR(h.x(), 4.0, 1e-12);
  EXPECT_NEAR(h.y(), -3.0, 1e-12);
}

TEST(Pose2Properties, InverseIsInvolutionAndComposeAssociative) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> pos(-50, 50), ang(-kPi, kPi);
  for (int i = 0; i < 500; ++i) {
    const Pose2d a(pos(rng), pos(rng), ang(rng));
    const Pose2d b(pos(rng), pos(rng), ang(rng));
    const Pose2d c(pos(rng), pos(rng), ang(rng));
    expect_pose_near(inverse(inverse(a)), a, 1e-9);
    expect_pose_near(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-9);
    expect_pose_near(compose(a, inverse(a)), Pose2d::identity(), 1e-9);
    const Vec2d p(pos(rng), pos(rng));
    const Vec2d direct = apply(compose(a, b), p);
    const Vec2d chained = apply(a, apply(b, p));
    EXPECT_NEAR((direct - chained).norm(), 0.0, 1e-9);
  }
}

TEST(Pose2, FloatInstantiation) {
  const Pose2<float> p(1.0f, 2.0f, 0.5f);
  const Pose2<float> q = compose(p, inverse(p));
  EXPECT_NEAR(q.x, 0.0f, 1e-5f);
  EXPECT_NEAR(q.y, 0.0f, 1e-5f);
  EXPECT_EQ(p.cast<double>().yaw, double(0.5f));
}

TEST(Box2, RejectsDegenerateExtent) {
  EXPECT_THROW(Box2d(Pose2d(), 0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(Box2d(Pose2d(), 1.0, -1.0), std::invalid_argument);
}

TEST(PointsInBox, AxisAlignedTwoMeterBoxOnUnitGrid) {
  const BevGridSpec g{0, 0, 1.0, 10, 10};
  const Box2d box(Pose2d(4, 5, 0), 2.0, 2.0);
  const auto cells = points_in_box(box, g);
  std::vector<CellIndex> expected;
  for (int r = 4; r <= 6; ++r) {
    for (int c = 3; c <= 5; ++c) expected.push_back({r, c});
  }
  EXPECT_EQ(cells, expected);
  EXPECT_EQ(cells, exhaustive_cells(box, g));
}

TEST(PointsInBox, OutsideGridIsEmpty) {
  const BevGridSpec g{0, 0, 1.0, 10, 10};
  EXPECT_TRUE(points_in_box(Box2d(Pose2d(100, 100, 0.3), 4, 2), g).empty());
  EXPECT_TRUE(points_in_box(Box2d(Pose2d(-1e12, 3, 0.3), 4, 2), g).empty());
}

TEST(PointsInBox, RotatedBoxMatchesBruteForce) {
  const BevGridSpec g{-8, -8, 0.5, 33, 33};
  const Box2d box(Pose2d(0.3, -0.2, deg(45)), 4.0, 2.0);
  const auto cells = points_in_box(box, g);
  EXPECT_FALSE(cells.empty());
  EXPECT_EQ(cells, exhaustive_cells(box, g));
}

TEST(PointsInBox, MatchesExhaustiveOracleOnRandomBoxes) {
  const BevGridSpec g{-15.75, -15.75, 0.5, 64, 64};
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> pos(-20, 20), ang(-kPi, kPi), ext(0.3, 8);
  for (int i = 0; i < 1000; ++i) {
    const Box2d box(Pose2d(pos(rng), pos(rng), ang(rng)), ext(rng), ext(rng));
    ASSERT_EQ(points_in_box(box, g), exhaustive_cells(box, g)) << "box " << i;
  }
}

TEST(PointsInBox, FullTurnLeavesFootprintUnchanged) {
  const BevGridSpec g{-15.75, -15.75, 0.5, 64, 64};
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> pos(-10, 10), ang(-kPi, kPi), ext(1, 6);
  for (int i = 0; i < 200; ++i) {
    const double yaw = ang(rng);
    const Box2d a(Pose2d(pos(rng), pos(rng), yaw), ext(rng), ext(rng));
    const Box2d b(Pose2d(a.center.x, a.center.y, yaw + 2 * kPi), a.length, a.width);
    EXPECT_EQ(points_in_box(a, g), points_in_box(b, g));
  }
}

TEST(PointsInBox, EdgeCentersCountAsInside) {
  const BevGridSpec g{0, 0, 1.0, 5, 5};
  const auto cells = points_in_box(Box2d(Pose2d(2, 2, 0), 2.0, 0.5), g);
  const std::vector<CellIndex> expected{{2, 1}, {2, 2}, {2, 3}};
  EXPECT_EQ(cells, expected);
}

TEST(Grid, CellCenterRoundTripsToIntegers) {
  const BevGridSpec g{-15.75, -15.75, 0.5, 64, 64};
  for (Eigen::Index i = 0; i < g.cell_count(); ++i) {
    const CellIndex c = g.unravel(i);
    const Vec2d uv = world_to_cell(g, cell_center(g, c));
    ASSERT_EQ(uv.x(), double(c.col));
    ASSERT_EQ(uv.y(), double(c.row));
  }
}

TEST(Grid, WorldToCellExamples) {
  const BevGridSpec g{-32, -32, 0.5, 128, 128};
  EXPECT_EQ(world_to_cell(g, Vec2d(-32, -32)), Vec2d(0, 0));
  EXPECT_EQ(world_to_cell(g, Vec2d(-31.75, -32)), Vec2d(0.5, 0));
}

TEST(Grid, ValidateAndBounds) {
  EXPECT_THROW((BevGridSpec{0, 0, 0.0, 4, 4}).validate(), std::invalid_argument);
  EXPECT_THROW((BevGridSpec{0, 0, 1.0, 0, 4}).validate(), std::invalid_argument);
  const BevGridSpec g{0, 0, 1.0, 4, 3};
  EXPECT_THROW(cell_center(g, CellIndex{3, 0}), std::out_of_range);
  EXPECT_EQ(g.linear({2, 3}), 11);
  EXPECT_EQ(g.unravel(11), (CellIndex{2, 3}));
}

}  // namespace
}  // namespace bevsync
