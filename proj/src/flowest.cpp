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

#include "bevsync/flowest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace bevsync {

std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::oracle: return "oracle";
    case EstimatorKind::zero: return "zero";
    case EstimatorKind::block_matching: return "block-matching";
    case EstimatorKind::learned_motion: return "learned-motion";
    case EstimatorKind::learned_velocity: return "learned-velocity";
  }
  return "unknown";
}

EstimatorKind estimator_kind_from_string(const std::string& s) {
  for (auto k : {EstimatorKind::oracle, EstimatorKind::zero, EstimatorKind::block_matching,
                 EstimatorKind::learned_motion, EstimatorKind::learned_velocity}) {
    if (to_string(k) == s) return k;
  }
  throw std::invalid_argument("unknown estimator kind: " + s);
}

void FlowEstimatorSpec::validate() const {
  if (kind == EstimatorKind::block_matching) {
    if (patch_radius < 1 || search_radius < patch_radius) {
      throw std::invalid_argument("block matching requires search_radius >= patch_radius >= 1");
    }
  }
  if (is_learned(kind)) {
    shape.validate();
    if (params.size() != shape.parameter_count()) throw std::invalid_argument("learned spec: parameter count mismatch");
    if (!params.allFinite()) throw std::invalid_argument("learned spec: non-finite parameters");
  }
}

FlowEstimatorSpec make_learned_spec(EstimatorKind kind, int c0, int c1, std::uint64_t seed, int hidden, int kernel) {
  if (!is_learned(kind)) throw std::invalid_argument("make_learned_spec: kind is not learned");
  FlowEstimatorSpec spec;
  spec.kind = kind;
  spec.shape = {c0 + c1 + (kind == EstimatorKind::learned_motion ? 1 : 0), hidden, kernel};
  spec.params = flownet_init(spec.shape, seed);
  return spec;
}

namespace {

void require_same_grid(const BevFeatureMap& f0, const BevFeatureMap& f1) {
  if (!(f0.grid == f1.grid)) throw std::invalid_argument("estimate_flow: feature grids differ");
}

FeatureMatrix network_input(const FlowEstimatorSpec& spec, const BevFeatureMap& f0, const BevFeatureMap& f1,
                            double dt) {
  const bool with_dt = spec.kind == EstimatorKind::learned_motion;
  const Eigen::Index cin = f0.channels + f1.channels + (with_dt ? 1 : 0);
  if (cin != spec.shape.input_channels) throw std::invalid_argument("estimate_flow: channel count does not match spec");
  FeatureMatrix x(f0.grid.cell_count(), cin);
  x.leftCols(f0.channels) = f0.data;
  x.middleCols(f0.channels, f1.channels) = f1.data;
  if (with_dt) x.col(cin - 1).setConstant(dt);
  return x;
}

FlowField wrap(const BevGridSpec& grid, FlowMatrix data, FlowDirection direction, FlowUnit unit) {
  FlowField f;
  f.grid = grid;
  f.data = std::move(data);
  f.direction = direction;
  f.unit = unit;
  return f;
}

}  // namespace

FlowField scale_velocity(const FlowField& velocity, double dt) {
  FlowField f = velocity;
  f.data = velocity.data * dt;
  f.unit = FlowUnit::meters;
  return f;
}

FlowField estimate_velocity(const FlowEstimatorSpec& spec, const BevFeatureMap& f0, const BevFeatureMap& f1,
                            FlowDirection direction) {
  if (spec.kind != EstimatorKind::learned_velocity) {
    throw std::invalid_argument("estimate_velocity: only the learned-velocity kind has a dt-free velocity field");
  }
  require_same_grid(f0, f1);
  spec.validate();
  FlowMatrix out = flownet_forward(spec.shape, spec.params, network_input(spec, f0, f1, 0.0), f0.grid);
  return wrap(f0.grid, std::move(out), direction, FlowUnit::meters_per_second);
}

FlowField estimate_flow(const FlowEstimatorSpec& spec, const BevFeatureMap& f0, const BevFeatureMap& f1, double dt,
                        const FlowField* gt, FlowDirection direction) {
  require_same_grid(f0, f1);
  if (!(dt >= 0)) throw std::invalid_argument("estimate_flow: dt must be >= 0");
  switch (spec.kind) {
    case EstimatorKind::oracle:
      if (gt == nullptr) throw std::invalid_argument("estimate_flow: oracle kind needs a ground-truth field");
      if (!(gt->grid == f0.grid)) throw std::invalid_argument("estimate_flow: ground-truth grid differs");
      return *gt;
    case EstimatorKind::zero:
      return FlowField::zeros(f0.grid, direction);
    case EstimatorKind::block_matching:
      spec.validate();
      if (dt == 0) return FlowField::zeros(f0.grid, direction);
      return block_match(f0, f1, dt, spec.patch_radius, spec.search_radius, direction).displacement;
    case EstimatorKind::learned_velocity:
      return scale_velocity(estimate_velocity(spec, f0, f1, direction), dt);
    case EstimatorKind::learned_motion: {
      spec.validate();
      FlowMatrix out = flownet_forward(spec.shape, spec.params, network_input(spec, f0, f1, dt), f0.grid);
      return wrap(f0.grid, std::move(out), direction, FlowUnit::meters);
    }
  }
  throw std::invalid_argument("estimate_flow: unknown estimator kind");
}

BlockMatchResult block_match(const BevFeatureMap& f0, const BevFeatureMap& f1, double dt, int patch_radius,
                             int search_radius, FlowDirection direction) {
  require_same_grid(f0, f1);
  if (patch_radius < 1 || search_radius < patch_radius) {
    throw std::invalid_argument("block_match: requires search_radius >= patch_radius >= 1");
  }
  if (!(dt > 0)) throw std::invalid_argument("block_match: dt must be positive");
  const auto& g = f0.grid;

  struct Offset {
    int dx, dy;
  };
  std::vector<Offset> offsets;
  for (int dy = -search_radius; dy <= search_radius; ++dy) {
    for (int dx = -search_radius; dx <= search_radius; ++dx) offsets.push_back({dx, dy});
  }
  std::stable_sort(offsets.begin(), offsets.end(), [](const Offset& a, const Offset& b) {
    return a.dx * a.dx + a.dy * a.dy < b.dx * b.dx + b.dy * b.dy;
  });

  auto occ = [&g](const BevFeatureMap& m, int r, int c) {
    if (r < 0 || r >= g.height || c < 0 || c >= g.width) return 0.0;
    return m.data(g.linear({r, c}), kOccupancyChannel);
  };

  BlockMatchResult res{FlowField::zeros(g, direction), FlowField::zeros(g, direction, FlowUnit::meters_per_second), dt};
  for (int r = 0; r < g.height; ++r) {
    for (int c = 0; c < g.width; ++c) {
      double best = std::numeric_limits<double>::infinity();
      Offset arg{0, 0};
      for (const auto& o : offsets) {
        double ssd = 0;
        for (int py = -patch_radius; py <= patch_radius && ssd < best; ++py) {
          for (int px = -patch_radius; px <= patch_radius; ++px) {
            const double d = occ(f0, r + py, c + px) - occ(f1, r + py + o.dy, c + px + o.dx);
            ssd += d * d;
          }
        }
        if (ssd < best) {
          best = ssd;
          arg = o;
        }
      }
      const Vec2d disp(arg.dx * g.cell, arg.dy * g.cell);
      res.displacement.set({r, c}, disp);
      res.velocity.set({r, c}, disp / dt);
    }
  }
  return res;
}

int speed_bucket(double speed_mps) {
  if (speed_mps <= kBucketEdgeSlow) return 0;
  if (speed_mps <= kBucketEdgeFast) return 1;
  return 2;
}

FlowLossReport flow_loss_with_gradient(const FlowField& pred, const FlowField& gt, double dt, FlowMatrix* d_pred) {
  if (!(pred.grid == gt.grid)) throw std::invalid_argument("flow_loss: grid mismatch");
  if (pred.direction != gt.direction) throw std::invalid_argument("flow_loss: direction mismatch");
  if (pred.unit != FlowUnit::meters || gt.unit != FlowUnit::meters) {
    throw std::invalid_argument("flow_loss: fields must be displacements");
  }
  if (!(dt > 0)) throw std::invalid_argument("flow_loss: dt must be positive");

  const auto n = gt.grid.cell_count();
  std::vector<int> bucket(n);
  Eigen::VectorXd err_norm(n);
  // Mean shifted by the first value of each bucket, so constant errors come back exactly.
  std::array<double, 3> shift{0, 0, 0};
  std::array<double, 3> sums{0, 0, 0};
  FlowLossReport rep;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int b = speed_bucket(gt.data.row(i).norm() / dt);
    bucket[i] = b;
    err_norm[i] = (pred.data.row(i) - gt.data.row(i)).norm();
    if (rep.counts[b]++ == 0) shift[b] = err_norm[i];
    sums[b] += err_norm[i] - shift[b];
  }
  for (int b = 0; b < 3; ++b) {
    rep.bucket_mean[b] = rep.counts[b] == 0 ? 0.0 : shift[b] + sums[b] / double(rep.counts[b]);
    rep.total += rep.bucket_mean[b];
  }
  if (d_pred != nullptr) {
    d_pred->setZero(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (err_norm[i] == 0) continue;
      d_pred->row(i) = (pred.data.row(i) - gt.data.row(i)) / (err_norm[i] * double(rep.counts[bucket[i]]));
    }
  }
  return rep;
}

FlowLossReport flow_loss(const FlowField& pred, const FlowField& gt, double dt) {
  return flow_loss_with_gradient(pred, gt, dt, nullptr);
}

FlowLossReport sample_loss(const FlowEstimatorSpec& spec, const TrainingSample& sample, Eigen::VectorXd* grad) {
  if (!is_learned(spec.kind)) throw std::invalid_argument("sample_loss: learned kind required");
  require_same_grid(sample.f0, sample.f1);
  const bool velocity = spec.kind == EstimatorKind::learned_velocity;
  FlowNetActivations act;
  FlowMatrix out = flownet_forward(spec.shape, spec.params, network_input(spec, sample.f0, sample.f1, sample.dt),
                                   sample.f0.grid, grad != nullptr ? &act : nullptr);
  FlowField pred = wrap(sample.f0.grid, velocity ? FlowMatrix(out * sample.dt) : out, sample.gt.direction,
                        FlowUnit::meters);
  if (grad == nullptr) return flow_loss(pred, sample.gt, sample.dt);
  FlowMatrix d_pred;
  FlowLossReport rep = flow_loss_with_gradient(pred, sample.gt, sample.dt, &d_pred);
  if (velocity) d_pred *= sample.dt;
  *grad = flownet_backward(spec.shape, spec.params, act, d_pred, sample.f0.grid);
  return rep;
}

namespace {

void accumulate(FlowLossReport& acc, const FlowLossReport& r) {
  for (int b = 0; b < 3; ++b) {
    acc.bucket_mean[b] += r.bucket_mean[b];
    acc.counts[b] += r.counts[b];
  }
  acc.total += r.total;
}

void divide(FlowLossReport& acc, double n) {
  for (auto& m : acc.bucket_mean) m /= n;
  acc.total /= n;
}

}  // namespace

FlowLossReport dataset_loss(const FlowEstimatorSpec& spec, const std::vector<TrainingSample>& dataset) {
  FlowLossReport acc;
  for (const auto& s : dataset) accumulate(acc, sample_loss(spec, s));
  if (!dataset.empty()) divide(acc, double(dataset.size()));
  return acc;
}

TrainingResult train_estimator(const FlowEstimatorSpec& spec, const std::vector<TrainingSample>& dataset,
                               const TrainingHyper& hyper) {
  if (!is_learned(spec.kind)) throw std::invalid_argument("train_estimator: learned kind required");
  if (dataset.empty()) throw std::invalid_argument("train_estimator: empty dataset");
  if (hyper.loss_weights[1] != 0 || hyper.loss_weights[2] != 0) {
    throw std::invalid_argument("train_estimator: detection loss weights must be zero");
  }
  if (hyper.epochs < 0 || hyper.batch_size < 1 || !(hyper.step_size >= 0)) {
    throw std::invalid_argument("train_estimator: invalid hyperparameters");
  }
  for (const auto& s : dataset) {
    if (!(s.dt > 0)) throw std::invalid_argument("train_estimator: every sample needs dt > 0");
  }
  spec.validate();

  constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  const double w_flow = hyper.loss_weights[0];

  TrainingResult result;
  result.spec = spec;
  FlowEstimatorSpec current = spec;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(spec.params.size());
  Eigen::VectorXd v = Eigen::VectorXd::Zero(spec.params.size());
  std::int64_t step = 0;

  auto check_finite = [](const FlowLossReport& r, int epoch) {
    if (!std::isfinite(r.total)) {
      throw TrainingDiverged(epoch, "train_estimator: non-finite loss at epoch " + std::to_string(epoch));
    }
  };

  FlowLossReport initial = dataset_loss(current, dataset);
  check_finite(initial, 0);
  result.curve.push_back({0, initial});
  result.epoch_loss.push_back({0, initial});
  double best_total = initial.total;

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(hyper.seed);

  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += std::size_t(hyper.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + std::size_t(hyper.batch_size));
      Eigen::VectorXd grad = Eigen::VectorXd::Zero(current.params.size());
      Eigen::VectorXd g;
      for (std::size_t k = start; k < stop; ++k) {
        const FlowLossReport r = sample_loss(current, dataset[order[k]], &g);
        check_finite(r, epoch);
        grad += g;
      }
      grad *= w_flow / double(stop - start);
      ++step;
      m = beta1 * m + (1 - beta1) * grad;
      v = beta2 * v + (1 - beta2) * grad.cwiseProduct(grad);
      const double c1 = 1 - std::pow(beta1, double(step));
      const double c2 = 1 - std::pow(beta2, double(step));
      current.params.array() -=
          hyper.step_size * (m.array() / c1) / ((v.array() / c2).sqrt() + adam_eps);
    }
    const FlowLossReport after = dataset_loss(current, dataset);
    check_finite(after, epoch);
    result.epoch_loss.push_back({epoch, after});
    if (after.total < best_total) {
      best_total = after.total;
      result.spec = current;
      result.curve.push_back({epoch, after});
    } else {
      result.curve.push_back({epoch, result.curve.back().loss});
    }
  }
  return result;
}

GradientCheckReport gradient_check(const FlowEstimatorSpec& spec, const TrainingSample& sample, double epsilon) {
  if (!(epsilon > 0)) throw std::invalid_argument("gradient_check: epsilon must be positive");
  Eigen::VectorXd analytic;
  sample_loss(spec, sample, &analytic);
  GradientCheckReport rep;
  FlowEstimatorSpec probe = spec;
  for (Eigen::Index i = 0; i < spec.params.size(); ++i) {
    probe.params[i] = spec.params[i] + epsilon;
    const double up = sample_loss(probe, sample).total;
    probe.params[i] = spec.params[i] - epsilon;
    const double down = sample_loss(probe, sample).total;
    probe.params[i] = spec.params[i];
    const double numeric = (up - down) / (2 * epsilon);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kGradientCheckFloor});
    rep.max_abs_analytic = std::max(rep.max_abs_analytic, std::abs(a));
    rep.max_abs_numeric = std::max(rep.max_abs_numeric, std::abs(numeric));
    if (rel > rep.max_relative_error || rep.worst_parameter < 0) {
      rep.max_relative_error = std::max(rep.max_relative_error, rel);
      rep.worst_parameter = i;
    }
  }
  return rep;
}

}  // namespace bevsync
