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

#include "bevsync/gtflow.hpp"

#include <limits>
#include <stdexcept>

namespace bevsync {

FlowField FlowField::zeros(const BevGridSpec& grid, FlowDirection direction, FlowUnit unit) {
  grid.validate();
  FlowField f;
  f.grid = grid;
  f.data = FlowMatrix::Zero(grid.cell_count(), 2);
  f.direction = direction;
  f.unit = unit;
  return f;
}

void FlowField::validate() const {
  grid.validate();
  if (data.rows() != grid.cell_count()) throw std::invalid_argument("FlowField: data shape does not match grid");
  if (!data.allFinite()) throw std::invalid_argument("FlowField: non-finite flow value");
}

FlowField emc_flow(const Pose2d& ego_t0, const Pose2d& ego_t1, const BevGridSpec& grid, FlowDirection direction) {
  const Pose2d& source = direction == FlowDirection::forward ? ego_t0 : ego_t1;
  const Pose2d& target = direction == FlowDirection::forward ? ego_t1 : ego_t0;
  const Pose2d rel = compose(inverse(target), source);
  FlowField f = FlowField::zeros(grid, direction);
  for (Eigen::Index i = 0; i < grid.cell_count(); ++i) {
    const Vec2d c = cell_center(grid, i);
    f.data.row(i) = (apply(rel, c) - c).transpose();
  }
  return f;
}

namespace {

// Box flow on the grid anchored at the ego frame of t_anchor, pointing to t_other.
FlowField box_flow(const std::vector<BoxTrack>& tracks, double t_anchor, double t_other, const EgoTrajectory& ego,
                   const BevGridSpec& grid, FlowDirection direction) {
  FlowField f = FlowField::zeros(grid, direction);
  const Pose2d to_anchor = inverse(ego.pose_at(t_anchor));
  std::vector<double> owner_dist2(grid.cell_count(), std::numeric_limits<double>::infinity());
  std::vector<int> owner_id(grid.cell_count(), std::numeric_limits<int>::max());

  for (const auto& track : tracks) {
    const Pose2d at_anchor = compose(to_anchor, track.pose_at(t_anchor));
    const Pose2d at_other = compose(to_anchor, track.pose_at(t_other));
    const Pose2d motion = compose(at_other, inverse(at_anchor));
    for (const auto& idx : points_in_box(Box2d(at_anchor, track.length, track.width), grid)) {
      const auto i = grid.linear(idx);
      const Vec2d p = cell_center(grid, idx);
      const double d2 = (p - at_anchor.translation()).squaredNorm();
      if (!overlap_prefers(d2, track.id, owner_dist2[i], owner_id[i])) continue;
      owner_dist2[i] = d2;
      owner_id[i] = track.id;
      f.data.row(i) = (apply(motion, p) - p).transpose();
    }
  }
  return f;
}

}  // namespace

FlowField dense_gt_flow(const std::vector<BoxTrack>& tracks, double t0, double t1, const EgoTrajectory& ego,
                        const BevGridSpec& grid) {
  if (!(t0 <= t1)) throw std::invalid_argument("dense_gt_flow: requires t0 <= t1");
  return box_flow(tracks, t0, t1, ego, grid, FlowDirection::forward);
}

FlowField dense_gt_flow_backward(const std::vector<BoxTrack>& tracks, double t0, double t1,
                                 const EgoTrajectory& ego, const BevGridSpec& grid) {
  if (!(t0 <= t1)) throw std::invalid_argument("dense_gt_flow_backward: requires t0 <= t1");
  return box_flow(tracks, t1, t0, ego, grid, FlowDirection::backward);
}

ScatterReport scatter_check(const FlowField& flow, const std::vector<BoxTrack>& tracks, double t0, double t1,
                            const EgoTrajectory& ego, const BevGridSpec& grid) {
  if (!(flow.grid == grid)) throw std::invalid_argument("scatter_check: grid mismatch");
  const bool forward = flow.direction == FlowDirection::forward;
  const double anchor_t = forward ? t0 : t1;
  const double other_t = forward ? t1 : t0;

  // Brute force over every cell and every track, with its own containment and overlap logic.
  struct TrackChain {
    const BoxTrack* track;
    Pose2d at_anchor;
    Pose2d motion;
  };
  const Pose2d ego_anchor = ego.pose_at(anchor_t);
  std::vector<TrackChain> chains;
  for (const auto& track : tracks) {
    const Pose2d at_anchor = compose(inverse(ego_anchor), track.pose_at(anchor_t));
    const Pose2d at_other = compose(inverse(ego_anchor), track.pose_at(other_t));
    chains.push_back({&track, at_anchor, compose(at_other, inverse(at_anchor))});
  }

  ScatterReport report;
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) {
      const Vec2d p = cell_center(grid, CellIndex{r, c});
      const TrackChain* owner = nullptr;
      double best = 0;
      for (const auto& ch : chains) {
        if (!box_contains(Box2d(ch.at_anchor, ch.track->length, ch.track->width), p)) continue;
        const double d2 = (p - ch.at_anchor.translation()).squaredNorm();
        if (owner == nullptr || d2 < best || (d2 == best && ch.track->id < owner->track->id)) {
          owner = &ch;
          best = d2;
        }
      }
      Vec2d expected = Vec2d::Zero();
      if (owner != nullptr) {
        expected = apply(owner->motion, p) - p;
        ++report.occupied_cells;
      }
      ++report.cells_checked;
      const Vec2d got = flow.at({r, c});
      report.max_discrepancy = std::max(report.max_discrepancy, (got - expected).cwiseAbs().maxCoeff());
    }
  }
  return report;
}

}  // namespace bevsync
