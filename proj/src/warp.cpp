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

#include "bevsync/warp.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bevsync {

namespace {

struct Tap {
  int row, col;
  double weight;
};

// Up to four bilinear taps with non-zero weight; taps outside the grid are dropped.
int bilinear_taps(const BevGridSpec& g, const Vec2d& uv, Tap out[4]) {
  const double u0 = std::floor(uv.x());
  const double v0 = std::floor(uv.y());
  const double fu = uv.x() - u0;
  const double fv = uv.y() - v0;
  int n = 0;
  for (int dy = 0; dy <= 1; ++dy) {
    const double wy = dy ? fv : 1.0 - fv;
    if (wy == 0) continue;
    for (int dx = 0; dx <= 1; ++dx) {
      const double wx = dx ? fu : 1.0 - fu;
      if (wx == 0) continue;
      const double r = v0 + dy, c = u0 + dx;
      if (r < 0 || r >= g.height || c < 0 || c >= g.width) continue;
      out[n++] = {int(r), int(c), wx * wy};
    }
  }
  return n;
}

bool inside_hull(const BevGridSpec& g, const Vec2d& uv) {
  return uv.x() >= 0 && uv.x() <= g.width - 1 && uv.y() >= 0 && uv.y() <= g.height - 1;
}

}  // namespace

LookupTable LookupTable::identity(const BevGridSpec& grid) {
  LookupTable lut;
  lut.grid = grid;
  lut.source.resize(grid.cell_count(), 2);
  for (Eigen::Index i = 0; i < grid.cell_count(); ++i) {
    const CellIndex c = grid.unravel(i);
    lut.source(i, 0) = c.col;
    lut.source(i, 1) = c.row;
  }
  return lut;
}

LookupTable build_lut(const BevGridSpec& grid, const FlowField& emc_backward, const FlowField& dyn_backward) {
  if (!(emc_backward.grid == grid) || !(dyn_backward.grid == grid)) throw std::invalid_argument("build_lut: grid mismatch");
  if (emc_backward.direction != FlowDirection::backward || dyn_backward.direction != FlowDirection::backward) {
    throw std::invalid_argument("build_lut: fields must be backward-tagged");
  }
  LookupTable lut = LookupTable::identity(grid);
  // Cell-unit form of world_to_cell(center + d); exact when d is zero.
  lut.source += (emc_backward.data + dyn_backward.data) / grid.cell;
  return lut;
}

BevFeatureMap grid_sample(const BevFeatureMap& features, const LookupTable& lut) {
  if (!(features.grid == lut.grid)) throw std::invalid_argument("grid_sample: grid mismatch");
  const auto& g = features.grid;
  BevFeatureMap out = BevFeatureMap::zeros(g, features.channels, features.timestamp, features.ego_pose);
  Tap taps[4];
  for (Eigen::Index i = 0; i < g.cell_count(); ++i) {
    const Vec2d uv = lut.source.row(i).transpose();
    const int n = bilinear_taps(g, uv, taps);
    if (n == 1 && taps[0].weight == 1.0) {
      out.data.row(i) = features.data.row(g.linear({taps[0].row, taps[0].col}));
      continue;
    }
    for (int k = 0; k < n; ++k) out.data.row(i) += taps[k].weight * features.data.row(g.linear({taps[k].row, taps[k].col}));
  }
  return out;
}

Vec2d sample_flow(const FlowField& field, const Vec2d& cell_coord) {
  Tap taps[4];
  const int n = bilinear_taps(field.grid, cell_coord, taps);
  if (n == 1 && taps[0].weight == 1.0) return field.at({taps[0].row, taps[0].col});
  Vec2d v = Vec2d::Zero();
  for (int k = 0; k < n; ++k) v += taps[k].weight * field.at({taps[k].row, taps[k].col});
  return v;
}

TokenSet warp_tokens(const TokenSet& tokens, const FlowField& emc_forward, const FlowField& dyn_forward) {
  if (emc_forward.direction != FlowDirection::forward || dyn_forward.direction != FlowDirection::forward) {
    throw std::invalid_argument("warp_tokens: fields must be forward-tagged");
  }
  if (!(emc_forward.grid == dyn_forward.grid)) throw std::invalid_argument("warp_tokens: grid mismatch");
  const auto& g = emc_forward.grid;
  TokenSet out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (!t.coord.allFinite()) throw std::invalid_argument("warp_tokens: non-finite token coordinate");
    const Vec2d uv = world_to_cell(g, t.coord);
    Token moved = t;
    if (inside_hull(g, uv)) {
      moved.coord = t.coord + sample_flow(dyn_forward, uv) + sample_flow(emc_forward, uv);
    } else {
      const Vec2d clamped(std::clamp(uv.x(), 0.0, double(g.width - 1)), std::clamp(uv.y(), 0.0, double(g.height - 1)));
      moved.coord = t.coord + sample_flow(emc_forward, clamped);
    }
    out.push_back(moved);
  }
  return out;
}

TokenSet tokens_from_grid(const BevGridSpec& grid) {
  TokenSet tokens;
  tokens.reserve(std::size_t(grid.cell_count()));
  for (Eigen::Index i = 0; i < grid.cell_count(); ++i) tokens.push_back({cell_center(grid, i), i});
  return tokens;
}

BevFeatureMap splat_tokens(const TokenSet& tokens, const BevFeatureMap& features, const BevGridSpec& grid,
                           double timestamp, const Pose2d& ego_pose) {
  BevFeatureMap out = BevFeatureMap::zeros(grid, features.channels, timestamp, ego_pose);
  Tap taps[4];
  for (const auto& t : tokens) {
    if (t.payload_id < 0 || t.payload_id >= features.data.rows()) throw std::out_of_range("splat_tokens: bad payload id");
    const int n = bilinear_taps(grid, world_to_cell(grid, t.coord), taps);
    for (int k = 0; k < n; ++k) {
      out.data.row(grid.linear({taps[k].row, taps[k].col})) += taps[k].weight * features.data.row(t.payload_id);
    }
  }
  return out;
}

Eigen::VectorXd splat_token_values(const TokenSet& tokens, const Eigen::VectorXd& values, const BevGridSpec& grid) {
  if (values.size() != Eigen::Index(tokens.size())) throw std::invalid_argument("splat_token_values: size mismatch");
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(grid.cell_count());
  Eigen::VectorXd weight = Eigen::VectorXd::Zero(grid.cell_count());
  Tap taps[4];
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const int n = bilinear_taps(grid, world_to_cell(grid, tokens[i].coord), taps);
    for (int k = 0; k < n; ++k) {
      const auto j = grid.linear({taps[k].row, taps[k].col});
      sum[j] += taps[k].weight * values[Eigen::Index(i)];
      weight[j] += taps[k].weight;
    }
  }
  for (Eigen::Index j = 0; j < sum.size(); ++j) sum[j] = weight[j] > 0 ? sum[j] / weight[j] : 0.0;
  return sum;
}

BevFeatureMap emc_align(const BevFeatureMap& features, const Pose2d& target_ego, double target_timestamp) {
  const FlowField emc = emc_flow(features.ego_pose, target_ego, features.grid, FlowDirection::backward);
  const FlowField none = FlowField::zeros(features.grid, FlowDirection::backward);
  BevFeatureMap out = grid_sample(features, build_lut(features.grid, emc, none));
  out.timestamp = target_timestamp;
  out.ego_pose = target_ego;
  return out;
}

RoundtripReport roundtrip_check(const FlowField& forward, const FlowField& backward, double tolerance_cells,
                                const std::vector<bool>* mask) {
  if (!(forward.grid == backward.grid)) throw std::invalid_argument("roundtrip_check: grid mismatch");
  if (forward.direction == backward.direction) throw std::invalid_argument("roundtrip_check: directions must differ");
  const auto& g = forward.grid;
  if (mask != nullptr && Eigen::Index(mask->size()) != g.cell_count()) {
    throw std::invalid_argument("roundtrip_check: mask size mismatch");
  }
  RoundtripReport rep;
  for (Eigen::Index i = 0; i < g.cell_count(); ++i) {
    if (mask != nullptr && !(*mask)[std::size_t(i)]) continue;
    const Vec2d start = cell_center(g, i);
    const Vec2d landed = start + forward.data.row(i).transpose();
    const Vec2d uv = world_to_cell(g, landed);
    if (!inside_hull(g, uv)) {
      ++rep.left_grid;
      continue;
    }
    const Vec2d back = landed + sample_flow(backward, uv);
    const double err = (back - start).norm() / g.cell;
    ++rep.evaluated;
    if (err <= tolerance_cells) ++rep.within;
    rep.max_error_cells = std::max(rep.max_error_cells, err);
  }
  rep.fraction = rep.evaluated == 0 ? 1.0 : double(rep.within) / double(rep.evaluated);
  return rep;
}

}  // namespace bevsync
