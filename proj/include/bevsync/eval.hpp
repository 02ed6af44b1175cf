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

#include <array>
#include <limits>
#include <string>
#include <vector>

#include "bevsync/geometry.hpp"
#include "bevsync/scenesim.hpp"

namespace bevsync {

struct Detection {
  Vec2d center = Vec2d::Zero();
  double score{0};
  double est_speed{0};
  std::size_t cells{0};
};

/// Thresholds the occupancy channel and emits one detection per 8-connected
/// component: unweighted centroid of the cell centers, score = mean occupancy
/// clamped to [0, 1]. Components are ordered by their first cell (row-major).
std::vector<Detection> detect(const BevFeatureMap& fused, double threshold);

struct GroundTruthObject {
  Box2d box;
  double speed{0};
};

enum class MotionClass : int { all = 0, static_objects = 1, dynamic_objects = 2 };
std::string to_string(MotionClass c);

/// Speeds above this are dynamic, for predictions and ground truth alike.
inline constexpr double kDynamicSpeedThreshold = 0.2;
/// Matches farther than this do not count toward translation error or recall.
inline constexpr double kTranslationErrorThreshold = 2.0;

inline const std::vector<double>& default_distance_thresholds() {
  static const std::vector<double> t{0.5, 1.0, 2.0, 4.0};
  return t;
}

struct ClassMetrics {
  std::vector<double> ap;  ///< per distance threshold; NaN when the class has no ground truth
  double mean_translation_error{std::numeric_limits<double>::quiet_NaN()};
  double recall{std::numeric_limits<double>::quiet_NaN()};
  std::size_t gt_count{0};
  std::size_t det_count{0};
  std::size_t matches{0};  ///< matches within kTranslationErrorThreshold
};

struct EvalReport {
  std::vector<double> thresholds;
  std::array<ClassMetrics, 3> classes;

  const ClassMetrics& operator[](MotionClass c) const { return classes[std::size_t(c)]; }
};

/// Pools detections and ground truth over several scenes. Matching is greedy
/// by ascending center distance within each scene (one ground truth per
/// detection, pairs beyond the largest threshold never match). Matched pairs
/// take the motion class of their ground truth; unmatched detections take the
/// class of their estimated speed.
class EvalAccumulator {
 public:
  explicit EvalAccumulator(std::vector<double> thresholds = default_distance_thresholds());

  void add_scene(const std::vector<Detection>& dets, const std::vector<GroundTruthObject>& gts);
  EvalReport report() const;

 private:
  struct DetRecord {
    double score;
    double distance;  ///< infinity when unmatched
    int motion_class;
  };
  std::vector<double> thresholds_;
  std::vector<DetRecord> dets_;
  std::array<std::size_t, 3> gt_counts_{0, 0, 0};
};

EvalReport match_and_score(const std::vector<Detection>& dets, const std::vector<GroundTruthObject>& gts,
                           const std::vector<double>& thresholds = default_distance_thresholds());

}  // namespace bevsync
