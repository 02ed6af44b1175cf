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

#include "bevsync/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <stdexcept>

#include "bevsync/io.hpp"
#include "bevsync/random.hpp"

namespace bevsync {

namespace {

constexpr std::uint64_t kNoiseSalt = 0x6e6f697365ull;
constexpr std::uint64_t kTrainingSampleSalt = 0x7472616eull;

const std::vector<std::pair<Pipeline, const char*>>& pipeline_names() {
  static const std::vector<std::pair<Pipeline, const char*>> names{
      {Pipeline::vanilla, "vanilla"},  {Pipeline::emc, "emc"},
      {Pipeline::emc_me, "emc_me"},    {Pipeline::emc_ve, "emc_ve"},
      {Pipeline::emc_oracle, "emc_oracle"}, {Pipeline::emc_bm, "emc_bm"}};
  return names;
}

class StageClock {
 public:
  explicit StageClock(bool enabled) : enabled_(enabled) {}

  template <typename Fn>
  auto time(const std::string& stage, Fn&& fn) {
    if (!enabled_) return fn();
    const auto start = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      totals_[stage] += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    } else {
      auto r = fn();
      totals_[stage] += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      return r;
    }
  }

  void report(const char* what) const {
    if (!enabled_) return;
    for (const auto& [stage, secs] : totals_) std::fprintf(stderr, "[%s] %-12s %9.3f s\n", what, stage.c_str(), secs);
  }

 private:
  bool enabled_;
  std::map<std::string, double> totals_;
};

bool in_region(const BevGridSpec& g, double margin, const Vec2d& p) {
  const double x0 = g.origin_x - 0.5 * g.cell + margin;
  const double y0 = g.origin_y - 0.5 * g.cell + margin;
  const double x1 = g.origin_x + (g.width - 0.5) * g.cell - margin;
  const double y1 = g.origin_y + (g.height - 0.5) * g.cell - margin;
  return p.x() >= x0 && p.x() <= x1 && p.y() >= y0 && p.y() <= y1;
}

bool is_flow_pipeline(Pipeline p) { return p != Pipeline::vanilla && p != Pipeline::emc; }

// Latest frame of the stream not after t.
double frame_at_or_before(const SensorStream& s, double t) {
  auto k = std::int64_t(std::floor((t - s.phase_s) * s.frequency_hz));
  while (s.frame_time(k + 1) <= t) ++k;
  while (s.frame_time(k) > t) --k;
  return s.frame_time(k);
}

struct AlignedStream {
  BevFeatureMap aligned;
  Eigen::VectorXd speed;  ///< per reference-grid cell, m/s
  std::optional<FlowField> flow;
};

Eigen::VectorXd cell_speed(const FlowMatrix& m, double scale) {
  Eigen::VectorXd v = m.rowwise().norm();
  return v * scale;
}

AlignedStream align_stream(const Scene& scene, const ExperimentConfig& cfg, Pipeline pipeline, const AsyncPair& pair,
                           const Estimators& est, StageClock& clock) {
  const auto& g = cfg.grid;
  const Pose2d& ego1 = pair.reference.ego_pose;
  const Pose2d& ego0 = pair.delayed.ego_pose;
  const FlowDirection dir = cfg.warper == WarperKind::token ? FlowDirection::forward : FlowDirection::backward;
  AlignedStream out;
  out.speed = Eigen::VectorXd::Zero(g.cell_count());

  if (pipeline == Pipeline::vanilla) {
    out.aligned = pair.delayed;
    out.aligned.timestamp = pair.t1;
    out.aligned.ego_pose = ego1;
    return out;
  }

  FlowField dyn = FlowField::zeros(g, dir);
  Eigen::VectorXd speed = Eigen::VectorXd::Zero(g.cell_count());
  if (is_flow_pipeline(pipeline)) {
    const TrainingSample s = clock.time("inputs", [&] { return make_training_sample(scene, cfg, pair); });
    clock.time("estimate", [&] {
      switch (pipeline) {
        case Pipeline::emc_oracle:
          dyn = s.gt;
          if (pair.dt > 0) speed = cell_speed(dyn.data, 1.0 / pair.dt);
          break;
        case Pipeline::emc_ve: {
          if (!est.velocity) throw std::invalid_argument("run_pipeline: emc_ve needs a velocity estimator");
          const FlowField vel = estimate_velocity(*est.velocity, s.f0, s.f1, dir);
          dyn = scale_velocity(vel, pair.dt);
          speed = cell_speed(vel.data, 1.0);
          break;
        }
        case Pipeline::emc_me:
          if (!est.motion) throw std::invalid_argument("run_pipeline: emc_me needs a motion estimator");
          dyn = estimate_flow(*est.motion, s.f0, s.f1, pair.dt, nullptr, dir);
          if (pair.dt > 0) speed = cell_speed(dyn.data, 1.0 / pair.dt);
          break;
        case Pipeline::emc_bm:
          if (pair.dt > 0) {
            const BlockMatchResult bm = block_match(s.f0, s.f1, pair.dt, cfg.patch_radius, cfg.search_radius, dir);
            dyn = bm.displacement;
            speed = cell_speed(bm.velocity.data, 1.0);
          }
          break;
        default:
          break;
      }
    });
    out.flow = dyn;
  }

  clock.time("warp", [&] {
    if (cfg.warper == WarperKind::token) {
      const FlowField emc = emc_flow(ego0, ego1, g, FlowDirection::forward);
      const TokenSet moved = warp_tokens(tokens_from_grid(g), emc, dyn);
      out.aligned = splat_tokens(moved, pair.delayed, g, pair.t1, ego1);
      out.speed = splat_token_values(moved, speed, g);
    } else {
      const FlowField emc = emc_flow(ego0, ego1, g, FlowDirection::backward);
      out.aligned = grid_sample(pair.delayed, build_lut(g, emc, dyn));
      out.aligned.timestamp = pair.t1;
      out.aligned.ego_pose = ego1;
      out.speed = speed;
    }
  });
  return out;
}

PipelineOutput run_pipeline_timed(const Scene& scene, const ExperimentConfig& cfg, Pipeline pipeline,
                                  double dt_request, const Estimators& est, StageClock& clock) {
  const double t1 = reference_frame_time(cfg);
  const auto& g = cfg.grid;
  PipelineOutput out;
  Eigen::VectorXd speed = Eigen::VectorXd::Zero(g.cell_count());
  FeatureMatrix sum;
  for (const auto& name : cfg.asynchronous) {
    const AsyncPair pair =
        clock.time("rasterize", [&] { return sample_pair(scene, cfg, cfg.stream(name), t1, dt_request); });
    if (sum.size() == 0) {
      sum = pair.reference.data;
      out.fused = pair.reference;
    }
    AlignedStream a = align_stream(scene, cfg, pipeline, pair, est, clock);
    if (a.aligned.channels != out.fused.channels) throw std::invalid_argument("run_pipeline: channel counts differ");
    sum += a.aligned.data;
    speed = speed.cwiseMax(a.speed);
    if (a.flow) out.flows.push_back(std::move(*a.flow));
  }
  out.fused.data = sum / double(cfg.asynchronous.size() + 1);

  clock.time("detect", [&] {
    for (Detection d : detect(out.fused, cfg.detection_threshold)) {
      if (!in_region(g, cfg.eval_margin_m, d.center)) continue;
      const Vec2d uv = world_to_cell(g, d.center);
      const CellIndex c{int(std::lround(uv.y())), int(std::lround(uv.x()))};
      d.est_speed = g.contains(c) ? speed[g.linear(c)] : 0.0;
      out.detections.push_back(d);
    }
  });
  return out;
}

std::string dt_tag(double dt) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", dt);
  return buf;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty() || std::filesystem::path(p).is_absolute()) return p;
  return base / p;
}

}  // namespace

std::string to_string(Pipeline p) {
  for (const auto& [k, name] : pipeline_names()) {
    if (k == p) return name;
  }
  return "unknown";
}

Pipeline pipeline_from_string(const std::string& s) {
  for (const auto& [k, name] : pipeline_names()) {
    if (s == name) return k;
  }
  throw std::invalid_argument("unknown pipeline: " + s);
}

std::string to_string(WarperKind w) { return w == WarperKind::token ? "token" : "grid"; }

WarperKind warper_from_string(const std::string& s) {
  if (s == "token") return WarperKind::token;
  if (s == "grid") return WarperKind::grid;
  throw std::invalid_argument("unknown warper: " + s);
}

const SensorStream& ExperimentConfig::stream(const std::string& name) const {
  for (const auto& s : streams) {
    if (s.name == name) return s;
  }
  throw std::invalid_argument("unknown stream: " + name);
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("ExperimentConfig: " + what);
  };
  grid.validate();
  scene.validate();
  require(scene_count >= 0, "scene_count must be >= 0");
  require(!streams.empty(), "no streams");
  for (std::size_t i = 0; i < streams.size(); ++i) {
    require(streams[i].frequency_hz > 0, "stream frequency must be positive");
    for (std::size_t j = 0; j < i; ++j) require(streams[i].name != streams[j].name, "duplicate stream " + streams[i].name);
  }
  stream(reference);
  require(!asynchronous.empty(), "asynchronous list is empty");
  for (const auto& a : asynchronous) {
    stream(a);
    require(a != reference, "reference stream " + a + " listed as asynchronous");
  }
  require(!dt_sweep_s.empty(), "dt sweep is empty");
  double max_dt = training.max_dt_s;
  for (double dt : dt_sweep_s) {
    require(std::isfinite(dt) && dt >= 0, "dt values must be >= 0");
    max_dt = std::max(max_dt, dt);
  }
  require(!pipelines.empty(), "pipeline list is empty");
  require(detection_threshold > 0 && detection_threshold < 1, "detection_threshold must be in (0, 1)");
  require(eval_margin_m >= 0, "eval_margin_m must be >= 0");
  require(noise_scale >= 0, "noise_scale must be >= 0");
  require(patch_radius >= 1 && search_radius >= patch_radius, "block matching radii invalid");
  require(training.max_dt_s > 0, "training max_dt_s must be positive");
  require(training.reference_window_s >= 0, "training reference_window_s must be >= 0");
  require(training.scene_count >= 1 && training.samples_per_scene >= 1, "training set size must be positive");
  require(is_learned(training.kind), "training kind must be learned-motion or learned-velocity");
  const double frame_slack = 1.0 / stream(reference).frequency_hz;
  require(reference_time_s - frame_slack - max_dt >= 0, "reference_time_s too small for the largest dt");
  require(reference_time_s + training.reference_window_s + frame_slack <= scene.duration_s,
          "reference time outside the scene duration");
}

nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json streams = nlohmann::json::array();
  for (const auto& s : c.streams) {
    streams.push_back(
        {{"name", s.name}, {"frequency_hz", s.frequency_hz}, {"phase_s", s.phase_s}, {"modality", to_string(s.modality)}});
  }
  nlohmann::json pipelines = nlohmann::json::array();
  for (auto p : c.pipelines) pipelines.push_back(to_string(p));
  const auto& t = c.training;
  return {{"schema_version", kSchemaVersion},
          {"seed", c.seed},
          {"scene_count", c.scene_count},
          {"grid", to_json(c.grid)},
          {"scene", to_json(c.scene)},
          {"streams", streams},
          {"reference", c.reference},
          {"asynchronous", c.asynchronous},
          {"reference_time_s", c.reference_time_s},
          {"dt_sweep_s", c.dt_sweep_s},
          {"pipelines", pipelines},
          {"warper", to_string(c.warper)},
          {"detection_threshold", c.detection_threshold},
          {"eval_margin_m", c.eval_margin_m},
          {"noise_scale", c.noise_scale},
          {"estimator",
           {{"patch_radius_cells", c.patch_radius},
            {"search_radius_cells", c.search_radius},
            {"velocity_params_path", c.velocity_params_path},
            {"motion_params_path", c.motion_params_path}}},
          {"training",
           {{"kind", to_string(t.kind)},
            {"seed", t.seed},
            {"scene_count", t.scene_count},
            {"samples_per_scene", t.samples_per_scene},
            {"max_dt_s", t.max_dt_s},
            {"reference_window_s", t.reference_window_s},
            {"hidden_channels", t.hidden},
            {"kernel_cells", t.kernel},
            {"step_size", t.hyper.step_size},
            {"epochs", t.hyper.epochs},
            {"batch_size", t.hyper.batch_size},
            {"loss_weights", t.hyper.loss_weights},
            {"init_seed", t.hyper.seed}}}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
  if (!j.contains("schema_version") || j.at("schema_version").get<int>() != kSchemaVersion) {
    throw std::invalid_argument("config: schema_version must be " + std::to_string(kSchemaVersion));
  }
  ExperimentConfig c;
  auto opt = [](const nlohmann::json& obj, const char* key, auto& field) {
    if (obj.contains(key)) field = obj.at(key).get<std::decay_t<decltype(field)>>();
  };
  opt(j, "seed", c.seed);
  opt(j, "scene_count", c.scene_count);
  if (j.contains("grid")) c.grid = grid_from_json(j.at("grid"));
  if (j.contains("scene")) c.scene = scene_config_from_json(j.at("scene"));
  if (j.contains("streams")) {
    c.streams.clear();
    for (const auto& s : j.at("streams")) {
      SensorStream st;
      st.name = s.at("name").get<std::string>();
      st.frequency_hz = s.at("frequency_hz").get<double>();
      st.phase_s = s.value("phase_s", 0.0);
      st.modality = modality_from_string(s.at("modality").get<std::string>());
      c.streams.push_back(st);
    }
  }
  opt(j, "reference", c.reference);
  opt(j, "asynchronous", c.asynchronous);
  opt(j, "reference_time_s", c.reference_time_s);
  opt(j, "dt_sweep_s", c.dt_sweep_s);
  if (j.contains("pipelines")) {
    c.pipelines.clear();
    for (const auto& p : j.at("pipelines")) c.pipelines.push_back(pipeline_from_string(p.get<std::string>()));
  }
  if (j.contains("warper")) c.warper = warper_from_string(j.at("warper").get<std::string>());
  opt(j, "detection_threshold", c.detection_threshold);
  opt(j, "eval_margin_m", c.eval_margin_m);
  opt(j, "noise_scale", c.noise_scale);
  if (j.contains("estimator")) {
    const auto& e = j.at("estimator");
    opt(e, "patch_radius_cells", c.patch_radius);
    opt(e, "search_radius_cells", c.search_radius);
    opt(e, "velocity_params_path", c.velocity_params_path);
    opt(e, "motion_params_path", c.motion_params_path);
  }
  if (j.contains("training")) {
    const auto& t = j.at("training");
    auto& tc = c.training;
    if (t.contains("kind")) tc.kind = estimator_kind_from_string(t.at("kind").get<std::string>());
    opt(t, "seed", tc.seed);
    opt(t, "scene_count", tc.scene_count);
    opt(t, "samples_per_scene", tc.samples_per_scene);
    opt(t, "max_dt_s", tc.max_dt_s);
    opt(t, "reference_window_s", tc.reference_window_s);
    opt(t, "hidden_channels", tc.hidden);
    opt(t, "kernel_cells", tc.kernel);
    opt(t, "step_size", tc.hyper.step_size);
    opt(t, "epochs", tc.hyper.epochs);
    opt(t, "batch_size", tc.hyper.batch_size);
    opt(t, "loss_weights", tc.hyper.loss_weights);
    opt(t, "init_seed", tc.hyper.seed);
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config: " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config " + path + ": " + e.what());
  }
  ExperimentConfig c = experiment_config_from_json(j);
  const auto base = std::filesystem::path(path).parent_path();
  c.velocity_params_path = resolve(base, c.velocity_params_path).string();
  c.motion_params_path = resolve(base, c.motion_params_path).string();
  return c;
}

std::uint64_t scene_seed(std::uint64_t base, int index) { return mix_seed(base, std::uint64_t(index)); }

std::uint64_t noise_seed_for(std::uint64_t seed) { return mix_seed(seed, kNoiseSalt); }

double reference_frame_time(const ExperimentConfig& cfg) {
  return nearest_frame(cfg.stream(cfg.reference), cfg.reference_time_s, 0.0);
}

AsyncPair sample_pair(const Scene& scene, const ExperimentConfig& cfg, const SensorStream& delayed, double t1,
                      double dt_request) {
  AsyncPair p;
  p.t1 = t1;
  p.t0 = nearest_frame(delayed, t1, dt_request);
  if (p.t0 > t1) p.t0 = frame_at_or_before(delayed, t1);
  p.dt = t1 - p.t0;
  const RasterOptions opts{cfg.noise_scale};
  const std::uint64_t ns = noise_seed_for(scene.seed);
  p.reference = rasterize_bev(scene, t1, cfg.grid, cfg.stream(cfg.reference).modality, ns, opts);
  p.delayed = rasterize_bev(scene, p.t0, cfg.grid, delayed.modality, ns, opts);
  return p;
}

TrainingSample make_training_sample(const Scene& scene, const ExperimentConfig& cfg, const AsyncPair& pair) {
  TrainingSample s;
  s.dt = pair.dt;
  if (cfg.warper == WarperKind::token) {
    s.f0 = pair.delayed;
    s.f1 = emc_align(pair.reference, pair.delayed.ego_pose, pair.t0);
    s.gt = dense_gt_flow(scene.tracks, pair.t0, pair.t1, scene.ego, cfg.grid);
  } else {
    s.f0 = emc_align(pair.delayed, pair.reference.ego_pose, pair.t1);
    s.f1 = pair.reference;
    s.gt = dense_gt_flow_backward(scene.tracks, pair.t0, pair.t1, scene.ego, cfg.grid);
  }
  return s;
}

std::vector<GroundTruthObject> ground_truth(const Scene& scene, const ExperimentConfig& cfg, double t1) {
  const Pose2d to_ego = inverse(scene.ego.pose_at(t1));
  std::vector<GroundTruthObject> out;
  for (const auto& tr : scene.tracks) {
    const Box2d box(compose(to_ego, tr.pose_at(t1)), tr.length, tr.width);
    if (!in_region(cfg.grid, cfg.eval_margin_m, box.center.translation())) continue;
    out.push_back({box, tr.velocity_at(t1).norm()});
  }
  return out;
}

PipelineOutput run_pipeline(const Scene& scene, const ExperimentConfig& cfg, Pipeline pipeline, double dt_request,
                            const Estimators& estimators) {
  StageClock clock(false);
  return run_pipeline_timed(scene, cfg, pipeline, dt_request, estimators, clock);
}

const EvalReport& SweepResult::pooled_report(double dt, Pipeline p) const {
  for (const auto& r : pooled) {
    if (r.dt == dt && r.pipeline == p) return r.report;
  }
  throw std::out_of_range("pooled_report: no such (dt, pipeline)");
}

SweepResult run_sweep(const ExperimentConfig& cfg, const Estimators& estimators, const SweepOptions& options) {
  cfg.validate();
  StageClock clock(options.timings);
  if (!options.dump_flow_dir.empty()) std::filesystem::create_directories(options.dump_flow_dir);
  const double t1 = reference_frame_time(cfg);
  std::vector<std::vector<EvalAccumulator>> pooled(cfg.dt_sweep_s.size(),
                                                   std::vector<EvalAccumulator>(cfg.pipelines.size()));
  SweepResult res;
  for (int i = 0; i < cfg.scene_count; ++i) {
    const std::uint64_t seed = scene_seed(cfg.seed, i);
    const Scene scene = clock.time("scene", [&] { return generate_scene(seed, cfg.scene); });
    const auto gts = ground_truth(scene, cfg, t1);
    for (std::size_t di = 0; di < cfg.dt_sweep_s.size(); ++di) {
      const double dt = cfg.dt_sweep_s[di];
      for (std::size_t pi = 0; pi < cfg.pipelines.size(); ++pi) {
        const Pipeline p = cfg.pipelines[pi];
        const PipelineOutput out = run_pipeline_timed(scene, cfg, p, dt, estimators, clock);
        clock.time("evaluate", [&] {
          pooled[di][pi].add_scene(out.detections, gts);
          res.per_scene.push_back({seed, dt, p, match_and_score(out.detections, gts)});
        });
        if (!options.dump_flow_dir.empty()) {
          for (std::size_t k = 0; k < out.flows.size(); ++k) {
            const std::string name = "flow_" + std::to_string(seed) + "_dt" + dt_tag(dt) + "_" + to_string(p) + "_" +
                                     cfg.asynchronous[k] + ".bflw";
            save_flow_field((std::filesystem::path(options.dump_flow_dir) / name).string(), out.flows[k]);
          }
        }
      }
    }
  }
  for (std::size_t di = 0; di < cfg.dt_sweep_s.size(); ++di) {
    for (std::size_t pi = 0; pi < cfg.pipelines.size(); ++pi) {
      res.pooled.push_back({0, cfg.dt_sweep_s[di], cfg.pipelines[pi], pooled[di][pi].report()});
    }
  }
  clock.report("run");
  return res;
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows, bool pooled) {
  std::vector<const SweepRow*> order;
  for (const auto& r : rows) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(), [](const SweepRow* a, const SweepRow* b) {
    if (a->scene_seed != b->scene_seed) return a->scene_seed < b->scene_seed;
    if (a->dt != b->dt) return a->dt < b->dt;
    return a->pipeline < b->pipeline;
  });
  os << "scenario_seed,dt,pipeline,motion_class";
  if (!rows.empty()) {
    for (double t : rows.front().report.thresholds) os << ",ap@" << format_number(t);
  }
  os << ",mate,recall\n";
  for (const SweepRow* r : order) {
    for (auto cls : {MotionClass::all, MotionClass::static_objects, MotionClass::dynamic_objects}) {
      const ClassMetrics& m = r->report[cls];
      os << (pooled ? std::string("all") : std::to_string(r->scene_seed)) << ',' << format_number(r->dt) << ','
         << to_string(r->pipeline) << ',' << to_string(cls);
      for (double ap : m.ap) os << ',' << format_number(ap);
      os << ',' << format_number(m.mean_translation_error) << ',' << format_number(m.recall) << '\n';
    }
  }
}

std::vector<TrainingSample> build_training_set(const ExperimentConfig& cfg, std::uint64_t seed, int scene_count,
                                               int samples_per_scene, std::optional<double> fixed_dt) {
  cfg.validate();
  std::mt19937_64 rng(mix_seed(seed, kTrainingSampleSalt));
  std::uniform_real_distribution<double> window(0.0, cfg.training.reference_window_s);
  std::uniform_real_distribution<double> offset(0.0, cfg.training.max_dt_s);
  const SensorStream& ref = cfg.stream(cfg.reference);
  std::vector<TrainingSample> out;
  for (int i = 0; i < scene_count; ++i) {
    const Scene scene = generate_scene(scene_seed(seed, i), cfg.scene);
    for (int k = 0; k < samples_per_scene; ++k) {
      const double t1 = nearest_frame(ref, cfg.reference_time_s + window(rng), 0.0);
      const double dt = fixed_dt ? *fixed_dt : offset(rng);
      const SensorStream& delayed = cfg.stream(cfg.asynchronous[std::size_t(k) % cfg.asynchronous.size()]);
      const AsyncPair pair = sample_pair(scene, cfg, delayed, t1, dt);
      if (!(pair.dt > 0)) continue;
      out.push_back(make_training_sample(scene, cfg, pair));
    }
  }
  return out;
}

TrainingResult train_from_config(const ExperimentConfig& cfg, EstimatorKind kind, bool timings) {
  if (!is_learned(kind)) throw std::invalid_argument("train_from_config: learned kind required");
  StageClock clock(timings);
  const auto& t = cfg.training;
  const auto data = clock.time("dataset", [&] {
    return build_training_set(cfg, t.seed, t.scene_count, t.samples_per_scene);
  });
  if (data.empty()) throw std::runtime_error("train_from_config: every sampled offset quantized to zero");
  const FlowEstimatorSpec init = make_learned_spec(kind, data.front().f0.channels, data.front().f1.channels,
                                                   mix_seed(t.hyper.seed, std::uint64_t(kind)), t.hidden, t.kernel);
  TrainingResult r = clock.time("train", [&] { return train_estimator(init, data, t.hyper); });
  clock.report(to_string(kind).c_str());
  return r;
}

Estimators prepare_estimators(const ExperimentConfig& cfg, bool timings) {
  Estimators est;
  auto wants = [&cfg](Pipeline p) { return std::find(cfg.pipelines.begin(), cfg.pipelines.end(), p) != cfg.pipelines.end(); };
  auto obtain = [&](const std::string& path, EstimatorKind kind) {
    if (!path.empty()) {
      FlowEstimatorSpec s = load_estimator(path);
      if (s.kind != kind) throw std::invalid_argument(path + ": expected a " + to_string(kind) + " estimator");
      return s;
    }
    return train_from_config(cfg, kind, timings).spec;
  };
  if (wants(Pipeline::emc_ve)) est.velocity = obtain(cfg.velocity_params_path, EstimatorKind::learned_velocity);
  if (wants(Pipeline::emc_me)) est.motion = obtain(cfg.motion_params_path, EstimatorKind::learned_motion);
  return est;
}

CheckSummary run_checks(std::uint64_t seed, int scenes) {
  CheckSummary sum;
  const BevGridSpec grid{-15.75, -15.75, 0.5, 64, 64};

  SceneConfig moving;
  moving.yaw_rate_max_rps = 0.5;
  SceneConfig still_ego;
  still_ego.ego_speed_max_mps = 0.0;
  still_ego.ego_yaw_rate_max_rps = 0.0;

  bool ok = true;
  for (int i = 0; i < scenes; ++i) {
    const Scene s = generate_scene(scene_seed(seed, i), moving);
    for (const FlowField& f : {dense_gt_flow(s.tracks, 0.5, 1.0, s.ego, grid),
                               dense_gt_flow_backward(s.tracks, 0.5, 1.0, s.ego, grid)}) {
      const ScatterReport r = scatter_check(f, s.tracks, 0.5, 1.0, s.ego, grid);
      sum.scatter.occupied_cells += r.occupied_cells;
      sum.scatter.cells_checked += r.cells_checked;
      sum.scatter.max_discrepancy = std::max(sum.scatter.max_discrepancy, r.max_discrepancy);
    }

    const Scene t = generate_scene(scene_seed(seed ^ 0x5a5aull, i), still_ego);
    const FlowField fwd = dense_gt_flow(t.tracks, 0.5, 1.0, t.ego, grid);
    const FlowField bwd = dense_gt_flow_backward(t.tracks, 0.5, 1.0, t.ego, grid);
    std::vector<bool> inside(std::size_t(grid.cell_count()), false);
    const Pose2d to_ego = inverse(t.ego.pose_at(0.5));
    for (const auto& tr : t.tracks) {
      // Interior cells only: the box shrunk by one cell on each side.
      if (tr.length <= 2 * grid.cell || tr.width <= 2 * grid.cell) continue;
      const Box2d core(compose(to_ego, tr.pose_at(0.5)), tr.length - 2 * grid.cell, tr.width - 2 * grid.cell);
      for (const auto& c : points_in_box(core, grid)) inside[std::size_t(grid.linear(c))] = true;
    }
    const RoundtripReport r = roundtrip_check(fwd, bwd, 0.5, &inside);
    sum.roundtrip.evaluated += r.evaluated;
    sum.roundtrip.within += r.within;
    sum.roundtrip.left_grid += r.left_grid;
    sum.roundtrip.max_error_cells = std::max(sum.roundtrip.max_error_cells, r.max_error_cells);
  }
  sum.roundtrip.fraction =
      sum.roundtrip.evaluated == 0 ? 1.0 : double(sum.roundtrip.within) / double(sum.roundtrip.evaluated);

  const BevGridSpec small{-2.25, -2.25, 0.5, 10, 10};
  SceneConfig tiny;
  tiny.object_count = 1;
  tiny.dynamic_fraction = 1.0;
  tiny.spawn_half_extent_m = 1.0;
  tiny.min_separation_m = 0.0;
  tiny.length_min_m = 1.5;
  tiny.length_max_m = 2.0;
  tiny.width_min_m = 1.0;
  tiny.width_max_m = 1.5;
  const Scene s = generate_scene(seed, tiny);
  const std::uint64_t ns = noise_seed_for(s.seed);
  TrainingSample sample;
  sample.f0 = rasterize_bev(s, 0.75, small, Modality::lidar, ns);
  sample.f1 = rasterize_bev(s, 1.0, small, Modality::camera, ns);
  sample.dt = 0.25;
  sample.gt = dense_gt_flow(s.tracks, 0.75, 1.0, s.ego, small);
  for (auto kind : {EstimatorKind::learned_velocity, EstimatorKind::learned_motion}) {
    const FlowEstimatorSpec spec =
        make_learned_spec(kind, sample.f0.channels, sample.f1.channels, mix_seed(seed, std::uint64_t(kind)));
    const GradientCheckReport g = gradient_check(spec, sample, 1e-6);
    if (g.max_relative_error >= sum.gradient.max_relative_error) sum.gradient = g;
  }

  ok = ok && sum.scatter.max_discrepancy == 0.0;
  ok = ok && sum.roundtrip.fraction >= 0.99;
  ok = ok && sum.gradient.max_relative_error < 1e-4;
  sum.passed = ok;
  return sum;
}

}  // namespace bevsync
