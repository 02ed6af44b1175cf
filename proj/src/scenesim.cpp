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

#include "bevsync/scenesim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include "bevsync/random.hpp"

namespace bevsync {

Pose2d advance(const Pose2d& start, double speed_mps, double yaw_rate_rps, double tau) {
  if (std::abs(yaw_rate_rps) < 1e-12) {
    return Pose2d(start.x + speed_mps * tau * std::cos(start.yaw), start.y + speed_mps * tau * std::sin(start.yaw),
                  start.yaw);
  }
  const double yaw1 = start.yaw + yaw_rate_rps * tau;
  const double r = speed_mps / yaw_rate_rps;
  return Pose2d(start.x + r * (std::sin(yaw1) - std::sin(start.yaw)),
                start.y - r * (std::cos(yaw1) - std::cos(start.yaw)), yaw1);
}

EgoTrajectory::EgoTrajectory(Pose2d initial, std::vector<MotionSegment> segments)
    : initial_(initial), segments_(std::move(segments)) {
  for (const auto& s : segments_) {
    if (!(s.duration_s > 0)) throw std::invalid_argument("EgoTrajectory: segment duration must be positive");
  }
}

Pose2d EgoTrajectory::pose_at(double t) const {
  if (segments_.empty()) return initial_;
  if (t <= 0) return advance(initial_, segments_.front().speed_mps, segments_.front().yaw_rate_rps, t);
  Pose2d pose = initial_;
  double elapsed = 0;
  for (std::size_t i = 0; i < segments_.size(); ++i) {
    const auto& s = segments_[i];
    if (i + 1 == segments_.size() || t <= elapsed + s.duration_s) {
      return advance(pose, s.speed_mps, s.yaw_rate_rps, t - elapsed);
    }
    pose = advance(pose, s.speed_mps, s.yaw_rate_rps, s.duration_s);
    elapsed += s.duration_s;
  }
  return pose;
}

Vec2d BoxTrack::velocity_at(double t) const {
  const double yaw = pose_at(t).yaw;
  return speed_mps * Vec2d(std::cos(yaw), std::sin(yaw));
}

std::string to_string(Modality m) { return m == Modality::lidar ? "lidar" : "camera"; }

Modality modality_from_string(const std::string& s) {
  if (s == "lidar") return Modality::lidar;
  if (s == "camera") return Modality::camera;
  throw std::invalid_argument("unknown modality: " + s);
}

double nearest_frame(const SensorStream& stream, double reference_t, double offset) {
  if (!(offset >= 0)) throw std::invalid_argument("nearest_frame: offset must be >= 0");
  if (!(stream.frequency_hz > 0)) throw std::invalid_argument("nearest_frame: frequency must be positive");
  const double target = reference_t - offset;
  const auto k = std::int64_t(std::floor((target - stream.phase_s) * stream.frequency_hz));
  std::int64_t best = k - 1;
  double best_gap = std::abs(stream.frame_time(best) - target);
  // Ascending candidates with strict improvement keep the earlier frame on ties.
  for (std::int64_t c = k; c <= k + 2; ++c) {
    const double gap = std::abs(stream.frame_time(c) - target);
    if (gap < best_gap) {
      best = c;
      best_gap = gap;
    }
  }
  return stream.frame_time(best);
}

void SceneConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("SceneConfig: ") + what);
  };
  require(object_count >= 0, "object_count must be >= 0");
  require(dynamic_fraction >= 0 && dynamic_fraction <= 1, "dynamic_fraction must be in [0, 1]");
  require(speed_min_mps >= 0 && speed_max_mps >= speed_min_mps, "speed range invalid");
  require(yaw_rate_max_rps >= 0, "yaw_rate_max must be >= 0");
  require(length_min_m > 0 && length_max_m >= length_min_m, "length range invalid");
  require(width_min_m > 0 && width_max_m >= width_min_m, "width range invalid");
  require(spawn_half_extent_m > 0, "spawn extent must be positive");
  require(min_separation_m >= 0, "min_separation must be >= 0");
  require(ego_speed_min_mps >= 0 && ego_speed_max_mps >= ego_speed_min_mps, "ego speed range invalid");
  require(ego_yaw_rate_max_rps >= 0, "ego yaw rate must be >= 0");
  require(ego_segments >= 1, "ego_segments must be >= 1");
  require(duration_s > 0, "duration must be positive");
}

Scene generate_scene(std::uint64_t seed, const SceneConfig& config) {
  config.validate();
  std::mt19937_64 rng(seed);
  auto uniform = [&rng](double lo, double hi) {
    if (hi <= lo) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  Scene scene;
  scene.seed = seed;
  scene.config = config;

  std::vector<MotionSegment> segments;
  const double seg_duration = config.duration_s / config.ego_segments;
  for (int i = 0; i < config.ego_segments; ++i) {
    segments.push_back({seg_duration, uniform(config.ego_speed_min_mps, config.ego_speed_max_mps),
                        uniform(-config.ego_yaw_rate_max_rps, config.ego_yaw_rate_max_rps)});
  }
  scene.ego = EgoTrajectory(Pose2d::identity(), std::move(segments));

  const int n = config.object_count;
  const int n_dynamic = int(std::lround(config.dynamic_fraction * n));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> dynamic(n, false);
  for (int i = 0; i < n_dynamic; ++i) dynamic[order[i]] = true;

  const double ext = config.spawn_half_extent_m;
  for (int i = 0; i < n; ++i) {
    Vec2d pos = Vec2d::Zero();
    // Rejection sampling for separation; falls back to the last draw.
    for (int attempt = 0; attempt < 200; ++attempt) {
      pos = Vec2d(uniform(-ext, ext), uniform(-ext, ext));
      const bool clear = std::all_of(scene.tracks.begin(), scene.tracks.end(), [&](const BoxTrack& other) {
        return (other.initial.translation() - pos).norm() >= config.min_separation_m;
      });
      if (clear) break;
    }
    BoxTrack track;
    track.id = i + 1;
    track.length = uniform(config.length_min_m, config.length_max_m);
    track.width = uniform(config.width_min_m, config.width_max_m);
    track.initial = Pose2d(pos.x(), pos.y(), uniform(-std::numbers::pi, std::numbers::pi));
    if (dynamic[i]) {
      track.speed_mps = uniform(config.speed_min_mps, config.speed_max_mps);
      track.yaw_rate_rps = uniform(-config.yaw_rate_max_rps, config.yaw_rate_max_rps);
    }
    scene.tracks.push_back(track);
  }
  return scene;
}

BevFeatureMap BevFeatureMap::zeros(const BevGridSpec& grid, int channels, double timestamp, const Pose2d& ego) {
  grid.validate();
  if (channels < 1) throw std::invalid_argument("BevFeatureMap: channels must be >= 1");
  BevFeatureMap m;
  m.grid = grid;
  m.channels = channels;
  m.data = FeatureMatrix::Zero(grid.cell_count(), channels);
  m.timestamp = timestamp;
  m.ego_pose = ego;
  return m;
}

void BevFeatureMap::validate() const {
  grid.validate();
  if (data.rows() != grid.cell_count() || data.cols() != channels) {
    throw std::invalid_argument("BevFeatureMap: data shape does not match grid and channels");
  }
  if (!data.allFinite()) throw std::invalid_argument("BevFeatureMap: non-finite feature value");
}

ModalityProfile default_profile(Modality m) {
  if (m == Modality::lidar) return {1.0, 0.05, false, true};
  // Camera BEV features localize weakly, are noisier and carry no sweep history.
  return {0.4, 0.15, true, false};
}

double identity_signature(int track_id) {
  const double golden = 0.6180339887498949;
  const double frac = track_id * golden - std::floor(track_id * golden);
  return 0.25 + 0.75 * frac;
}

namespace {

void blur_separable(BevFeatureMap& m) {
  // 3-tap Gaussian with sigma of one cell, edge-clamped.
  const double side = std::exp(-0.5);
  const double norm = 1.0 + 2.0 * side;
  const double w[3] = {side / norm, 1.0 / norm, side / norm};
  const auto& g = m.grid;
  FeatureMatrix tmp = FeatureMatrix::Zero(m.data.rows(), m.data.cols());
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      for (int k = -1; k <= 1; ++k) {
        const int cc = std::clamp(c + k, 0, g.width - 1);
        tmp.row(g.linear({r, c})) += w[k + 1] * m.data.row(g.linear({r, cc}));
      }
    }
  }
  m.data.setZero();
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      for (int k = -1; k <= 1; ++k) {
        const int rr = std::clamp(r + k, 0, g.height - 1);
        m.data.row(g.linear({r, c})) += w[k + 1] * tmp.row(g.linear({rr, c}));
      }
    }
  }
}

}  // namespace

BevFeatureMap rasterize_bev(const Scene& scene, double t, const BevGridSpec& grid, Modality modality,
                            std::uint64_t noise_seed, const RasterOptions& options) {
  if (!(t >= 0 && t <= scene.config.duration_s)) throw std::out_of_range("rasterize_bev: t outside scene duration");
  const ModalityProfile profile = default_profile(modality);
  const Pose2d ego = scene.ego.pose_at(t);
  const Pose2d to_ego = inverse(ego);
  BevFeatureMap map = BevFeatureMap::zeros(grid, kFeatureChannels, t, ego);

  const auto n = grid.cell_count();
  std::vector<double> owner_dist2(n, std::numeric_limits<double>::infinity());
  std::vector<int> owner_id(n, std::numeric_limits<int>::max());

  for (const auto& track : scene.tracks) {
    const Pose2d now = compose(to_ego, track.pose_at(t));
    const Pose2d before = compose(to_ego, track.pose_at(t - kSweepWindowS));
    const Pose2d now_inv = inverse(now);
    const Box2d box(now, track.length, track.width);
    for (const auto& idx : points_in_box(box, grid)) {
      const auto i = grid.linear(idx);
      const Vec2d p = cell_center(grid, idx);
      const double d2 = (p - now.translation()).squaredNorm();
      if (!overlap_prefers(d2, track.id, owner_dist2[i], owner_id[i])) continue;
      owner_dist2[i] = d2;
      owner_id[i] = track.id;
      map.data(i, kOccupancyChannel) = profile.occupancy_gain;
      map.data(i, kIdentityChannel) = profile.occupancy_gain * identity_signature(track.id);
      if (profile.motion_cue) {
        const Vec2d earlier = apply(before, apply(now_inv, p));
        map.data(i, kMotionXChannel) = p.x() - earlier.x();
        map.data(i, kMotionYChannel) = p.y() - earlier.y();
      } else {
        map.data(i, kMotionXChannel) = 0;
        map.data(i, kMotionYChannel) = 0;
      }
    }
  }

  const double amplitude = profile.noise_amplitude * options.noise_scale;
  if (amplitude != 0) {
    const std::uint64_t stream = mix_seed(noise_seed, std::uint64_t(modality) + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int ch = 0; ch < kFeatureChannels; ++ch) {
        map.data(i, ch) += amplitude * hashed_uniform(stream, std::uint64_t(i) * kFeatureChannels + ch);
      }
    }
  }
  if (profile.blur) blur_separable(map);
  return map;
}

}  // namespace bevsync
