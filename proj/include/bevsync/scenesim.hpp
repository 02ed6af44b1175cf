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
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bevsync/geometry.hpp"

namespace bevsync {

/// Constant speed along the heading plus constant yaw rate.
struct MotionSegment {
  double duration_s{1};
  double speed_mps{0};
  double yaw_rate_rps{0};
};

/// Integrates a constant-twist motion for tau seconds (tau may be negative).
Pose2d advance(const Pose2d& start, double speed_mps, double yaw_rate_rps, double tau);

/// Piecewise constant-twist ego trajectory starting at t = 0. Before t = 0 the
/// first segment is extrapolated; after the last segment ends, the last one is.
class EgoTrajectory {
 public:
  EgoTrajectory() = default;
  EgoTrajectory(Pose2d initial, std::vector<MotionSegment> segments);

  Pose2d pose_at(double t) const;

  const Pose2d& initial() const { return initial_; }
  const std::vector<MotionSegment>& segments() const { return segments_; }

 private:
  Pose2d initial_;
  std::vector<MotionSegment> segments_;
};

/// A tracked object with a constant-twist trajectory defined from its pose at t = 0.
struct BoxTrack {
  int id{0};
  double length{4};
  double width{2};
  Pose2d initial;
  double speed_mps{0};
  double yaw_rate_rps{0};

  Pose2d pose_at(double t) const { return advance(initial, speed_mps, yaw_rate_rps, t); }
  Box2d box_at(double t) const { return Box2d(pose_at(t), length, width); }
  /// World-frame velocity of the box center.
  Vec2d velocity_at(double t) const;
};

enum class Modality : std::uint8_t { lidar = 0, camera = 1 };

std::string to_string(Modality m);
Modality modality_from_string(const std::string& s);

struct SensorStream {
  std::string name;
  double frequency_hz{20};
  double phase_s{0};
  Modality modality{Modality::lidar};

  double frame_time(std::int64_t k) const { return phase_s + double(k) / frequency_hz; }
};

/// Timestamp of the stream frame closest to reference_t - offset. Ties go to
/// the earlier frame.
double nearest_frame(const SensorStream& stream, double reference_t, double offset);

struct SceneConfig {
  int object_count{6};
  double dynamic_fraction{0.5};
  double speed_min_mps{1.5};
  double speed_max_mps{3.5};
  double yaw_rate_max_rps{0.0};
  double length_min_m{3.5};
  double length_max_m{4.5};
  double width_min_m{1.6};
  double width_max_m{2.0};
  double spawn_half_extent_m{11.0};
  double min_separation_m{7.5};
  double ego_speed_min_mps{0.0};
  double ego_speed_max_mps{4.0};
  double ego_yaw_rate_max_rps{0.1};
  int ego_segments{4};
  double duration_s{20.0};

  void validate() const;
  bool operator==(const SceneConfig&) const = default;
};

struct Scene {
  std::uint64_t seed{0};
  SceneConfig config;
  EgoTrajectory ego;
  std::vector<BoxTrack> tracks;
};

Scene generate_scene(std::uint64_t seed, const SceneConfig& config);

// Feature channel layout shared by every modality.
inline constexpr int kOccupancyChannel = 0;
inline constexpr int kIdentityChannel = 1;
inline constexpr int kMotionXChannel = 2;
inline constexpr int kMotionYChannel = 3;
inline constexpr int kFeatureChannels = 4;

/// Accumulation window of the simulated multi-sweep LiDAR (ten 20 Hz sweeps).
inline constexpr double kSweepWindowS = 0.45;

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-cell feature vectors on a grid, rows = cells (row-major), cols = channels.
struct BevFeatureMap {
  BevGridSpec grid;
  int channels{kFeatureChannels};
  FeatureMatrix data;
  double timestamp{0};
  Pose2d ego_pose;

  static BevFeatureMap zeros(const BevGridSpec& grid, int channels, double timestamp = 0,
                             const Pose2d& ego = {});
  double at(int row, int col, int channel) const { return data(grid.linear({row, col}), channel); }
  double& at(int row, int col, int channel) { return data(grid.linear({row, col}), channel); }
  void validate() const;
};

/// Per-modality sensing characteristics of the synthetic rasterizer.
struct ModalityProfile {
  double occupancy_gain{1.0};
  double noise_amplitude{0.05};
  bool blur{false};
  bool motion_cue{true};
};

ModalityProfile default_profile(Modality m);

struct RasterOptions {
  /// Multiplies the modality noise amplitude; 0 disables noise.
  double noise_scale{1.0};
};

/// Expresses the scene in the ego frame at time t and rasterizes it.
BevFeatureMap rasterize_bev(const Scene& scene, double t, const BevGridSpec& grid, Modality modality,
                            std::uint64_t noise_seed, const RasterOptions& options = {});

/// Signature written into the identity channel for a track.
double identity_signature(int track_id);

/// Index of the track owning a cell when boxes overlap: nearest box center
/// wins, ties go to the lower id. Returns true if candidate should replace
/// the current owner.
inline bool overlap_prefers(double candidate_dist2, int candidate_id, double owner_dist2, int owner_id) {
  if (candidate_dist2 < owner_dist2) return true;
  return candidate_dist2 == owner_dist2 && candidate_id < owner_id;
}

}  // namespace bevsync
