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
#include <optional>
#include <vector>

#include "bevsync/geometry.hpp"
#include "bevsync/gtflow.hpp"
#include "bevsync/scenesim.hpp"

namespace bevsync {

struct Token {
  Vec2d coord;  ///< BEV position in meters
  std::int64_t payload_id{0};
};

using TokenSet = std::vector<Token>;

/// Fractional (col, row) source coordinates per target cell.
struct LookupTable {
  BevGridSpec grid;
  FlowMatrix source;

  static LookupTable identity(const BevGridSpec& grid);
};

/// source(c) = world_to_cell(center(c) + emc(c) + dyn(c)). Both fields must be
/// backward-tagged and live on `grid`.
LookupTable build_lut(const BevGridSpec& grid, const FlowField& emc_backward, const FlowField& dyn_backward);

/// Bilinear resampling with zero padding outside the grid.
BevFeatureMap grid_sample(const BevFeatureMap& features, const LookupTable& lut);

/// Bilinear sample of a field at a fractional (col, row) position, zero outside.
Vec2d sample_flow(const FlowField& field, const Vec2d& cell_coord);

/// Moves each token by dyn + emc, both sampled at the original position.
/// Tokens outside the grid get EMC from the nearest valid sample and no
/// dynamic flow.
TokenSet warp_tokens(const TokenSet& tokens, const FlowField& emc_forward, const FlowField& dyn_forward);

/// One token per cell at the cell center; payload_id is the linear cell index.
TokenSet tokens_from_grid(const BevGridSpec& grid);

/// Bilinear splat of per-token features onto a grid. Token i carries
/// features.row(tokens[i].payload_id). Contributions are summed.
BevFeatureMap splat_tokens(const TokenSet& tokens, const BevFeatureMap& features, const BevGridSpec& grid,
                           double timestamp, const Pose2d& ego_pose);

/// Per-cell weighted average of per-token scalars (weights from the same
/// bilinear splat); cells with no weight get 0.
Eigen::VectorXd splat_token_values(const TokenSet& tokens, const Eigen::VectorXd& values, const BevGridSpec& grid);

/// Resamples a map into the ego frame `target_ego`, using only ego motion.
BevFeatureMap emc_align(const BevFeatureMap& features, const Pose2d& target_ego, double target_timestamp);

struct RoundtripReport {
  std::size_t evaluated{0};
  std::size_t within{0};
  std::size_t left_grid{0};  ///< cells whose forward landing point is off the grid (excluded)
  double fraction{1.0};
  double max_error_cells{0};
};

/// Pushes each (masked) cell center through forward, samples backward at the
/// landing point and measures the return error in cells.
RoundtripReport roundtrip_check(const FlowField& forward, const FlowField& backward, double tolerance_cells,
                                const std::vector<bool>* mask = nullptr);

}  // namespace bevsync
