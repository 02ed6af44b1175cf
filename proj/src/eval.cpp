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

#include "bevsync/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bevsync {

std::vector<Detection> detect(const BevFeatureMap& fused, double threshold) {
  if (!(threshold > 0 && threshold < 1)) throw std::invalid_argument("detect: threshold must be in (0, 1)");
  const auto& g = fused.grid;
  const auto n = g.cell_count();
  std::vector<bool> seen(std::size_t(n), false);
  std::vector<Detection> out;
  std::vector<Eigen::Index> stack;
  for (Eigen::Index start = 0; start < n; ++start) {
    if (seen[start] || !(fused.data(start, kOccupancyChannel) > threshold)) continue;
    Detection det;
    double occ_sum = 0;
    Vec2d center_sum = Vec2d::Zero();
    stack.assign(1, start);
    seen[start] = true;
    while (!stack.empty()) {
      const auto i = stack.back();
      stack.pop_back();
      ++det.cells;
      occ_sum += fused.data(i, kOccupancyChannel);
      center_sum += cell_center(g, i);
      const CellIndex c = g.unravel(i);
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const CellIndex nb{c.row + dr, c.col + dc};
          if ((dr == 0 && dc == 0) || !g.contains(nb)) continue;
          const auto j = g.linear(nb);
          if (seen[j] || !(fused.data(j, kOccupancyChannel) > threshold)) continue;
          seen[j] = true;
          stack.push_back(j);
        }
      }
    }
    det.center = center_sum / double(det.cells);
    det.score = std::clamp(occ_sum / double(det.cells), 0.0, 1.0);
    out.push_back(det);
  }
  return out;
}

std::string to_string(MotionClass c) {
  switch (c) {
    case MotionClass::all: return "all";
    case MotionClass::static_objects: return "static";
    case MotionClass::dynamic_objects: return "dynamic";
  }
  return "unknown";
}

namespace {

int class_of_speed(double speed) {
  return speed > kDynamicSpeedThreshold ? int(MotionClass::dynamic_objects) : int(MotionClass::static_objects);
}

}  // namespace

EvalAccumulator::EvalAccumulator(std::vector<double> thresholds) : thresholds_(std::move(thresholds)) {
  if (thresholds_.empty()) throw std::invalid_argument("EvalAccumulator: need at least one threshold");
  if (!std::is_sorted(thresholds_.begin(), thresholds_.end())) {
    throw std::invalid_argument("EvalAccumulator: thresholds must be sorted ascending");
  }
}

void EvalAccumulator::add_scene(const std::vector<Detection>& dets, const std::vector<GroundTruthObject>& gts) {
  const double max_dist = thresholds_.back();
  struct Pair {
    double d;
    std::size_t det, gt;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    for (std::size_t j = 0; j < gts.size(); ++j) {
      const double d = (dets[i].center - gts[j].box.center.translation()).norm();
      if (d <= max_dist) pairs.push_back({d, i, j});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.d != b.d) return a.d < b.d;
    if (a.det != b.det) return a.det < b.det;
    return a.gt < b.gt;
  });
  std::vector<double> det_dist(dets.size(), std::numeric_limits<double>::infinity());
  std::vector<int> det_gt(dets.size(), -1);
  std::vector<bool> gt_used(gts.size(), false);
  for (const auto& p : pairs) {
    if (det_gt[p.det] >= 0 || gt_used[p.gt]) continue;
    det_gt[p.det] = int(p.gt);
    det_dist[p.det] = p.d;
    gt_used[p.gt] = true;
  }
  for (const auto& gt : gts) ++gt_counts_[std::size_t(class_of_speed(gt.speed))];
  for (std::size_t i = 0; i < dets.size(); ++i) {
    const int cls = det_gt[i] >= 0 ? class_of_speed(gts[std::size_t(det_gt[i])].speed) : class_of_speed(dets[i].est_speed);
    dets_.push_back({dets[i].score, det_dist[i], cls});
  }
}

EvalReport EvalAccumulator::report() const {
  EvalReport rep;
  rep.thresholds = thresholds_;
  const double nan = std::numeric_limits<double>::quiet_NaN();

  std::vector<std::size_t> order(dets_.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets_[a].score > dets_[b].score; });

  for (int cls = 0; cls < 3; ++cls) {
    ClassMetrics& m = rep.classes[std::size_t(cls)];
    m.gt_count = cls == 0 ? gt_counts_[1] + gt_counts_[2] : gt_counts_[std::size_t(cls)];
    std::vector<std::size_t> members;
    for (auto i : order) {
      if (cls == 0 || dets_[i].motion_class == cls) members.push_back(i);
    }
    m.det_count = members.size();

    for (double tau : thresholds_) {
      if (m.gt_count == 0) {
        m.ap.push_back(nan);
        continue;
      }
      // All-point interpolated AP over the score-ordered sweep.
      std::vector<double> precision(members.size());
      std::vector<bool> tp(members.size());
      std::size_t hits = 0;
      for (std::size_t k = 0; k < members.size(); ++k) {
        tp[k] = dets_[members[k]].distance <= tau;
        hits += tp[k] ? 1 : 0;
        precision[k] = double(hits) / double(k + 1);
      }
      double ap = 0;
      double running_max = 0;
      for (std::size_t k = members.size(); k-- > 0;) {
        running_max = std::max(running_max, precision[k]);
        if (tp[k]) ap += running_max;
      }
      m.ap.push_back(std::clamp(ap / double(m.gt_count), 0.0, 1.0));
    }

    double err_sum = 0;
    for (auto i : members) {
      if (dets_[i].distance <= kTranslationErrorThreshold) {
        err_sum += dets_[i].distance;
        ++m.matches;
      }
    }
    if (m.matches > 0) m.mean_translation_error = err_sum / double(m.matches);
    if (m.gt_count > 0) m.recall = double(m.matches) / double(m.gt_count);
  }
  return rep;
}

EvalReport match_and_score(const std::vector<Detection>& dets, const std::vector<GroundTruthObject>& gts,
                           const std::vector<double>& thresholds) {
  EvalAccumulator acc(thresholds);
  acc.add_scene(dets, gts);
  return acc.report();
}

}  // namespace bevsync
