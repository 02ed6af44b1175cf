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

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "bevsync/geometry.hpp"
#include "bevsync/scenesim.hpp"

namespace bevsync {

/// forward: defined on the earlier-frame grid, pointing to the later frame.
/// backward: defined on the later-frame grid, pointing back.
enum class FlowDirection : std::uint8_t { forward = 0, backward = 1 };
enum class FlowUnit : std::uint8_t { meters = 0, meters_per_second = 1 };

using FlowMatrix = Eigen::Matrix<double, Eigen::Dynamic, 2, Eigen::RowMajor>;

/// Per-cell 2D vectors on a grid; rows follow the grid's row-major cell order.
struct FlowField {
  BevGridSpec grid;
  FlowMatrix data;
  FlowDirection direction{FlowDirection::forward};
  FlowUnit unit{FlowUnit::meters};

  static FlowField zeros(const BevGridSpec& grid, FlowDirection direction, FlowUnit unit = FlowUnit::meters);

  Vec2d at(const CellIndex& c) const { return data.row(grid.linear(c)).transpose(); }
  void set(const CellIndex& c, const Vec2d& v) { data.row(grid.linear(c)) = v.transpose(); }
  void validate() const;
};

/// Relative displacement of every cell due to ego motion. For forward the
/// cells live in the ego frame at t0 and map into the frame at t1; backward
/// swaps the roles.
FlowField emc_flow(const Pose2d& ego_t0, const Pose2d& ego_t1, const BevGridSpec& grid, FlowDirection direction);

/// Dense box-driven flow on the grid anchored at the ego frame of t0. Cells
/// outside every box at t0 get zero. Ego motion is excluded. Requires t0 <= t1.
FlowField dense_gt_flow(const std::vector<BoxTrack>& tracks, double t0, double t1, const EgoTrajectory& ego,
                        const BevGridSpec& grid);

/// Same construction with the grid anchored at t1, pointing back to t0.
FlowField dense_gt_flow_backward(const std::vector<BoxTrack>& tracks, double t0, double t1,
                                 const EgoTrajectory& ego, const BevGridSpec& grid);

struct ScatterReport {
  std::size_t occupied_cells{0};
  std::size_t cells_checked{0};
  double max_discrepancy{0};
};

/// Re-derives the per-cell flow of dense_gt_flow by brute force over every
/// cell and every track and reports the largest absolute component difference.
/// The anchor frame (t0 or t1) follows the direction tag of `flow`.
ScatterReport scatter_check(const FlowField& flow, const std::vector<BoxTrack>& tracks, double t0, double t1,
                            const EgoTrajectory& ego, const BevGridSpec& grid);

}  // namespace bevsync
