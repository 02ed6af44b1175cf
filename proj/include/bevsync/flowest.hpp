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
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "bevsync/flownet.hpp"
#include "bevsync/gtflow.hpp"
#include "bevsync/scenesim.hpp"

namespace bevsync {

enum class EstimatorKind : std::uint8_t {
  oracle = 0,
  zero = 1,
  block_matching = 2,
  learned_motion = 3,
  learned_velocity = 4,
};

std::string to_string(EstimatorKind k);
EstimatorKind estimator_kind_from_string(const std::string& s);
inline bool is_learned(EstimatorKind k) {
  return k == EstimatorKind::learned_motion || k == EstimatorKind::learned_velocity;
}

struct FlowEstimatorSpec {
  EstimatorKind kind{EstimatorKind::zero};
  // block matching
  int patch_radius{2};
  int search_radius{8};
  // learned kinds
  FlowNetShape shape;
  Eigen::VectorXd params;

  void validate() const;
};

/// Learned spec for inputs with c0 + c1 feature channels. The motion kind gets
/// one extra input channel holding dt.
FlowEstimatorSpec make_learned_spec(EstimatorKind kind, int c0, int c1, std::uint64_t seed, int hidden = 8,
                                    int kernel = 3);

/// Per-cell flow between f0 (earlier) and f1 (later), conditioned on dt.
/// `gt` is required for the oracle kind and ignored otherwise.
FlowField estimate_flow(const FlowEstimatorSpec& spec, const BevFeatureMap& f0, const BevFeatureMap& f1, double dt,
                        const FlowField* gt = nullptr, FlowDirection direction = FlowDirection::forward);

/// dt-independent velocity field of the learned-velocity estimator.
FlowField estimate_velocity(const FlowEstimatorSpec& spec, const BevFeatureMap& f0, const BevFeatureMap& f1,
                            FlowDirection direction = FlowDirection::forward);

/// velocity * dt, re-tagged as a displacement field.
FlowField scale_velocity(const FlowField& velocity, double dt);

struct BlockMatchResult {
  FlowField displacement;
  FlowField velocity;  ///< displacement / dt, reusable for other dt values
  double dt{0};
};

/// Exhaustive SSD patch search on the occupancy channel. Ties prefer the
/// smaller offset, then row-major order of the offset.
BlockMatchResult block_match(const BevFeatureMap& f0, const BevFeatureMap& f1, double dt, int patch_radius,
                             int search_radius, FlowDirection direction = FlowDirection::forward);

/// Speed buckets: v <= 0.4, 0.4 < v <= 1, v > 1 (m/s), by ground-truth speed.
inline constexpr double kBucketEdgeSlow = 0.4;
inline constexpr double kBucketEdgeFast = 1.0;

int speed_bucket(double speed_mps);

struct FlowLossReport {
  std::array<double, 3> bucket_mean{0, 0, 0};
  std::array<std::size_t, 3> counts{0, 0, 0};
  double total{0};
};

/// Sum over the three buckets of the mean per-cell L2 error.
FlowLossReport flow_loss(const FlowField& pred, const FlowField& gt, double dt);

/// flow_loss plus its (sub)gradient with respect to pred. Cells with zero
/// error contribute a zero subgradient.
FlowLossReport flow_loss_with_gradient(const FlowField& pred, const FlowField& gt, double dt, FlowMatrix* d_pred);

struct TrainingSample {
  BevFeatureMap f0;
  BevFeatureMap f1;
  double dt{0};
  FlowField gt;
};

struct TrainingHyper {
  double step_size{0.01};
  int epochs{30};
  int batch_size{8};
  /// Weights of flow, classification and regression losses. Only the flow
  /// term is trainable here, so the last two must be zero.
  std::array<double, 3> loss_weights{1.0, 0.0, 0.0};
  std::uint64_t seed{0};
};

struct LossCurvePoint {
  int epoch{0};
  FlowLossReport loss;
};

struct TrainingResult {
  FlowEstimatorSpec spec;              ///< best parameters seen on the training set
  std::vector<LossCurvePoint> curve;   ///< training loss of the retained parameters (non-increasing)
  std::vector<LossCurvePoint> epoch_loss;  ///< training loss after each epoch
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, const std::string& what) : std::runtime_error(what), epoch_(epoch) {}
  int epoch() const { return epoch_; }

 private:
  int epoch_;
};

/// Adam on the flow loss, averaged per sample then over the batch.
TrainingResult train_estimator(const FlowEstimatorSpec& spec, const std::vector<TrainingSample>& dataset,
                               const TrainingHyper& hyper);

/// Loss of one sample and, if grad is non-null, its parameter gradient.
FlowLossReport sample_loss(const FlowEstimatorSpec& spec, const TrainingSample& sample,
                           Eigen::VectorXd* grad = nullptr);

/// Mean loss report over a dataset.
FlowLossReport dataset_loss(const FlowEstimatorSpec& spec, const std::vector<TrainingSample>& dataset);

struct GradientCheckReport {
  double max_relative_error{0};
  double max_abs_analytic{0};
  double max_abs_numeric{0};
  Eigen::Index worst_parameter{-1};
};

/// Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
inline constexpr double kGradientCheckFloor = 1e-6;

/// Compares analytic gradients with central finite differences on every parameter.
GradientCheckReport gradient_check(const FlowEstimatorSpec& spec, const TrainingSample& sample, double epsilon);

}  // namespace bevsync
