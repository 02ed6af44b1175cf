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

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace bevsync {

// Planar geometry. Convention: x forward, y left, yaw counterclockwise.
// Grids are indexed (row = y, col = x) and stored row-major.

template <typename Scalar>
using Vec2 = Eigen::Matrix<Scalar, 2, 1>;
template <typename Scalar>
using Mat2 = Eigen::Matrix<Scalar, 2, 2>;

using Vec2d = Vec2<double>;

/// Wraps an angle into (-pi, pi].
template <typename Scalar>
Scalar normalize_angle(Scalar a) {
  constexpr Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  a = std::remainder(a, two_pi);
  if (a <= -std::numbers::pi_v<Scalar>) a += two_pi;
  return a;
}

/// SE(2) rigid transform. Yaw is kept normalized by every constructor and
/// operation in this header.
template <typename Scalar>
struct Pose2 {
  Scalar x{0};
  Scalar y{0};
  Scalar yaw{0};

  Pose2() = default;
  Pose2(Scalar x_, Scalar y_, Scalar yaw_) : x(x_), y(y_), yaw(normalize_angle(yaw_)) {}

  static Pose2 identity() { return Pose2(); }

  Vec2<Scalar> translation() const { return Vec2<Scalar>(x, y); }

  Mat2<Scalar> rotation() const {
    const Scalar c = std::cos(yaw);
    const Scalar s = std::sin(yaw);
    Mat2<Scalar> r;
    r << c, -s, s, c;
    return r;
  }

  template <typename Other>
  Pose2<Other> cast() const {
    return Pose2<Other>(Other(x), Other(y), Other(yaw));
  }

  bool operator==(const Pose2&) const = default;
};

using Pose2d = Pose2<double>;

/// Rotates pt by the pose yaw, then translates.
template <typename Scalar>
Vec2<Scalar> apply(const Pose2<Scalar>& p, const Vec2<Scalar>& pt) {
  return p.rotation() * pt + p.translation();
}

/// Transform that applies b first, then a.
template <typename Scalar>
Pose2<Scalar> compose(const Pose2<Scalar>& a, const Pose2<Scalar>& b) {
  const Vec2<Scalar> t = apply(a, b.translation());
  return Pose2<Scalar>(t.x(), t.y(), a.yaw + b.yaw);
}

template <typename Scalar>
Pose2<Scalar> inverse(const Pose2<Scalar>& p) {
  const Vec2<Scalar> t = -(p.rotation().transpose() * p.translation());
  return Pose2<Scalar>(t.x(), t.y(), -p.yaw);
}

/// Oriented rectangle; length runs along the box heading.
template <typename Scalar>
struct Box2 {
  Pose2<Scalar> center;
  Scalar length{1};
  Scalar width{1};

  Box2() = default;
  Box2(const Pose2<Scalar>& c, Scalar l, Scalar w) : center(c), length(l), width(w) {
    if (!(l > 0) || !(w > 0)) throw std::invalid_argument("Box2: length and width must be positive");
  }
};

using Box2d = Box2<double>;

/// Cell centers closer than this to a box edge count as on the edge.
inline constexpr double kBoxEdgeTolerance = 1e-9;

/// Boundary-inclusive footprint test.
template <typename Scalar>
bool box_contains(const Box2<Scalar>& box, const Vec2<Scalar>& pt) {
  const Vec2<Scalar> local = box.center.rotation().transpose() * (pt - box.center.translation());
  const Scalar tol = Scalar(kBoxEdgeTolerance);
  return std::abs(local.x()) <= box.length / 2 + tol && std::abs(local.y()) <= box.width / 2 + tol;
}

template <typename Scalar>
std::vector<Vec2<Scalar>> box_corners(const Box2<Scalar>& box) {
  const Scalar hl = box.length / 2;
  const Scalar hw = box.width / 2;
  std::vector<Vec2<Scalar>> out;
  out.reserve(4);
  for (const auto& c : {Vec2<Scalar>(hl, hw), Vec2<Scalar>(-hl, hw), Vec2<Scalar>(-hl, -hw),
                        Vec2<Scalar>(hl, -hw)}) {
    out.push_back(apply(box.center, c));
  }
  return out;
}

struct CellIndex {
  int row{0};
  int col{0};
  bool operator==(const CellIndex&) const = default;
};

/// Regular BEV grid. origin_x/origin_y is the center of cell (0, 0).
struct BevGridSpec {
  double origin_x{0};
  double origin_y{0};
  double cell{1};
  int width{1};
  int height{1};

  void validate() const {
    if (!(cell > 0) || !std::isfinite(cell)) throw std::invalid_argument("BevGridSpec: cell must be positive");
    if (width < 1 || height < 1) throw std::invalid_argument("BevGridSpec: width and height must be >= 1");
    if (!std::isfinite(origin_x) || !std::isfinite(origin_y)) throw std::invalid_argument("BevGridSpec: origin must be finite");
  }

  Eigen::Index cell_count() const { return Eigen::Index(width) * height; }
  Eigen::Index linear(const CellIndex& c) const { return Eigen::Index(c.row) * width + c.col; }
  CellIndex unravel(Eigen::Index i) const { return {int(i / width), int(i % width)}; }
  bool contains(const CellIndex& c) const { return c.row >= 0 && c.row < height && c.col >= 0 && c.col < width; }

  bool operator==(const BevGridSpec&) const = default;
};

inline Vec2d cell_center(const BevGridSpec& grid, const CellIndex& c) {
  if (!grid.contains(c)) throw std::out_of_range("cell_center: index outside grid");
  return {grid.origin_x + c.col * grid.cell, grid.origin_y + c.row * grid.cell};
}

inline Vec2d cell_center(const BevGridSpec& grid, Eigen::Index linear) {
  return cell_center(grid, grid.unravel(linear));
}

/// Fractional (col, row) coordinates of a world point; not clamped.
inline Vec2d world_to_cell(const BevGridSpec& grid, const Vec2d& pt) {
  return {(pt.x() - grid.origin_x) / grid.cell, (pt.y() - grid.origin_y) / grid.cell};
}

/// Cells whose centers lie inside the box (boundary inclusive), row-major.
template <typename Scalar>
std::vector<CellIndex> points_in_box(const Box2<Scalar>& box, const BevGridSpec& grid) {
  Scalar min_x = std::numeric_limits<Scalar>::max(), min_y = min_x;
  Scalar max_x = std::numeric_limits<Scalar>::lowest(), max_y = max_x;
  for (const auto& c : box_corners(box)) {
    min_x = std::min(min_x, c.x());
    max_x = std::max(max_x, c.x());
    min_y = std::min(min_y, c.y());
    max_y = std::max(max_y, c.y());
  }
  const double pad = kBoxEdgeTolerance;
  auto to_index = [](double v, int hi) { return int(std::clamp(v, -1.0, double(hi))); };
  const int c0 = std::max(0, to_index(std::floor((double(min_x) - pad - grid.origin_x) / grid.cell), grid.width));
  const int c1 = std::min(grid.width - 1, to_index(std::ceil((double(max_x) + pad - grid.origin_x) / grid.cell), grid.width));
  const int r0 = std::max(0, to_index(std::floor((double(min_y) - pad - grid.origin_y) / grid.cell), grid.height));
  const int r1 = std::min(grid.height - 1, to_index(std::ceil((double(max_y) + pad - grid.origin_y) / grid.cell), grid.height));

  std::vector<CellIndex> out;
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      const Vec2d p = cell_center(grid, CellIndex{r, c});
      if (box_contains(box, p.template cast<Scalar>().eval())) out.push_back({r, c});
    }
  }
  return out;
}

}  // namespace bevsync
