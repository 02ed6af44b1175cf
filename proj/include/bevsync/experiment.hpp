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
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bevsync/eval.hpp"
#include "bevsync/flowest.hpp"
#include "bevsync/gtflow.hpp"
#include "bevsync/scenesim.hpp"
#include "bevsync/warp.hpp"

namespace bevsync {

enum class Pipeline : std::uint8_t { vanilla = 0, emc = 1, emc_me = 2, emc_ve = 3, emc_oracle = 4, emc_bm = 5 };
std::string to_string(Pipeline p);
Pipeline pipeline_from_string(const std::string& s);

enum class WarperKind : std::uint8_t { token = 0, grid = 1 };
std::string to_string(WarperKind w);
WarperKind warper_from_string(const std::string& s);

struct TrainingConfig {
  EstimatorKind kind{EstimatorKind::learned_velocity};
  std::uint64_t seed{7};
  int scene_count{120};
  int samples_per_scene{2};
  double max_dt_s{0.5};
  /// Reference timestamps are drawn from [reference_time_s, reference_time_s + window].
  double reference_window_s{1.0};
  int hidden{8};
  int kernel{3};
  TrainingHyper hyper{0.01, 30, 8, {1.0, 0.0, 0.0}, 11};
};

struct ExperimentConfig {
  std::uint64_t seed{1};
  int scene_count{50};
  BevGridSpec grid{-15.75, -15.75, 0.5, 64, 64};
  SceneConfig scene;
  std::vector<SensorStream> streams{{"lidar", 20.0, 0.0, Modality::lidar}, {"camera", 12.0, 0.0, Modality::camera}};
  std::string reference{"camera"};
  std::vector<std::string> asynchronous{"lidar"};
  double reference_time_s{1.0};
  std::vector<double> dt_sweep_s{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<Pipeline> pipelines{Pipeline::vanilla, Pipeline::emc, Pipeline::emc_me, Pipeline::emc_ve,
                                  Pipeline::emc_oracle};
  WarperKind warper{WarperKind::token};
  double detection_threshold{0.35};
  double eval_margin_m{3.0};
  double noise_scale{1.0};
  int patch_radius{2};
  int search_radius{8};
  std::string velocity_params_path;
  std::string motion_params_path;
  TrainingConfig training;

  const SensorStream& stream(const std::string& name) const;
  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::string& path);

std::uint64_t scene_seed(std::uint64_t base, int index);
std::uint64_t noise_seed_for(std::uint64_t scene_seed);

/// One asynchronous pair: the reference frame at t1 and the delayed frame at t0 <= t1.
struct AsyncPair {
  double t1{0};
  double t0{0};
  double dt{0};
  BevFeatureMap reference;
  BevFeatureMap delayed;
};

AsyncPair sample_pair(const Scene& scene, const ExperimentConfig& cfg, const SensorStream& delayed, double t1,
                      double dt_request);

/// Estimator inputs and ground truth for the configured warper.
TrainingSample make_training_sample(const Scene& scene, const ExperimentConfig& cfg, const AsyncPair& pair);

struct Estimators {
  std::optional<FlowEstimatorSpec> velocity;
  std::optional<FlowEstimatorSpec> motion;
};

struct PipelineOutput {
  BevFeatureMap fused;
  std::vector<Detection> detections;  ///< inside the evaluation region
  std::vector<FlowField> flows;       ///< dynamic flow per delayed stream (empty for vanilla and emc)
};

PipelineOutput run_pipeline(const Scene& scene, const ExperimentConfig& cfg, Pipeline pipeline, double dt_request,
                            const Estimators& estimators);

/// Boxes at the reference time in the reference ego frame, inside the evaluation region.
std::vector<GroundTruthObject> ground_truth(const Scene& scene, const ExperimentConfig& cfg, double t1);

double reference_frame_time(const ExperimentConfig& cfg);

struct SweepRow {
  std::uint64_t scene_seed{0};
  double dt{0};
  Pipeline pipeline{Pipeline::emc};
  EvalReport report;
};

struct SweepResult {
  std::vector<SweepRow> per_scene;
  std::vector<SweepRow> pooled;  ///< scene_seed is unused here
  const EvalReport& pooled_report(double dt, Pipeline p) const;
};

struct SweepOptions {
  std::string dump_flow_dir;  ///< empty disables flow dumps
  bool timings{false};        ///< per-stage wall times on stderr
};

SweepResult run_sweep(const ExperimentConfig& cfg, const Estimators& estimators, const SweepOptions& options = {});

/// Rows (scenario_seed, dt, pipeline, motion_class, ap@..., mate, recall), sorted.
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows, bool pooled);

std::vector<TrainingSample> build_training_set(const ExperimentConfig& cfg, std::uint64_t seed, int scene_count,
                                               int samples_per_scene, std::optional<double> fixed_dt = std::nullopt);

TrainingResult train_from_config(const ExperimentConfig& cfg, EstimatorKind kind, bool timings = false);

/// Loads configured parameter files and trains the rest for the learned pipelines in cfg.
Estimators prepare_estimators(const ExperimentConfig& cfg, bool timings = false);

struct CheckSummary {
  GradientCheckReport gradient;
  ScatterReport scatter;
  RoundtripReport roundtrip;
  bool passed{false};
};

CheckSummary run_checks(std::uint64_t seed, int scenes);

}  // namespace bevsync
