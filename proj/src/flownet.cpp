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

#include "bevsync/flownet.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace bevsync {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

// Parameter layout: W1 (hidden x in), b1, W2 (hidden x hidden*K*K), b2, W3 (2 x hidden*K*K), b3.
struct Layout {
  Eigen::Index w1, b1, w2, b2, w3, b3, end;
  explicit Layout(const FlowNetShape& s) {
    const Eigen::Index taps = Eigen::Index(s.kernel) * s.kernel;
    w1 = 0;
    b1 = w1 + Eigen::Index(s.hidden) * s.input_channels;
    w2 = b1 + s.hidden;
    b2 = w2 + Eigen::Index(s.hidden) * s.hidden * taps;
    w3 = b2 + s.hidden;
    b3 = w3 + 2 * s.hidden * taps;
    end = b3 + 2;
  }
};

}  // namespace

Eigen::Index FlowNetShape::parameter_count() const { return Layout(*this).end; }

void FlowNetShape::validate() const {
  if (input_channels < 1 || hidden < 1) throw std::invalid_argument("FlowNetShape: channel counts must be >= 1");
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("FlowNetShape: kernel must be odd and >= 1");
}

FeatureMatrix im2col(const FeatureMatrix& x, const BevGridSpec& grid, int kernel) {
  const int ch = int(x.cols());
  const int half = kernel / 2;
  FeatureMatrix out = FeatureMatrix::Zero(x.rows(), Eigen::Index(ch) * kernel * kernel);
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) {
      const auto i = grid.linear({r, c});
      for (int ky = 0; ky < kernel; ++ky) {
        const int rr = r + ky - half;
        if (rr < 0 || rr >= grid.height) continue;
        for (int kx = 0; kx < kernel; ++kx) {
          const int cc = c + kx - half;
          if (cc < 0 || cc >= grid.width) continue;
          out.block(i, Eigen::Index(ky * kernel + kx) * ch, 1, ch) = x.row(grid.linear({rr, cc}));
        }
      }
    }
  }
  return out;
}

FeatureMatrix col2im(const FeatureMatrix& patches, const BevGridSpec& grid, int kernel, int channels) {
  const int half = kernel / 2;
  FeatureMatrix out = FeatureMatrix::Zero(patches.rows(), channels);
  for (int r = 0; r < grid.height; ++r) {
    for (int c = 0; c < grid.width; ++c) {
      const auto i = grid.linear({r, c});
      for (int ky = 0; ky < kernel; ++ky) {
        const int rr = r + ky - half;
        if (rr < 0 || rr >= grid.height) continue;
        for (int kx = 0; kx < kernel; ++kx) {
          const int cc = c + kx - half;
          if (cc < 0 || cc >= grid.width) continue;
          out.row(grid.linear({rr, cc})) += patches.block(i, Eigen::Index(ky * kernel + kx) * channels, 1, channels);
        }
      }
    }
  }
  return out;
}

FlowMatrix flownet_forward(const FlowNetShape& shape, const Eigen::VectorXd& params, const FeatureMatrix& input,
                           const BevGridSpec& grid, FlowNetActivations* keep) {
  const Layout L(shape);
  if (params.size() != L.end) throw std::invalid_argument("flownet_forward: parameter vector has wrong length");
  if (input.cols() != shape.input_channels || input.rows() != grid.cell_count()) {
    throw std::invalid_argument("flownet_forward: input shape mismatch");
  }
  const int taps = shape.kernel * shape.kernel;
  const ConstMap w1(params.data() + L.w1, shape.hidden, shape.input_channels);
  const ConstMap w2(params.data() + L.w2, shape.hidden, Eigen::Index(shape.hidden) * taps);
  const ConstMap w3(params.data() + L.w3, 2, Eigen::Index(shape.hidden) * taps);
  const auto b1 = params.segment(L.b1, shape.hidden).transpose();
  const auto b2 = params.segment(L.b2, shape.hidden).transpose();
  const auto b3 = params.segment(L.b3, 2).transpose();

  FeatureMatrix pre1 = input * w1.transpose();
  pre1.rowwise() += b1;
  FeatureMatrix act1 = pre1.cwiseMax(0.0);
  FeatureMatrix patches1 = im2col(act1, grid, shape.kernel);
  FeatureMatrix pre2 = patches1 * w2.transpose();
  pre2.rowwise() += b2;
  FeatureMatrix act2 = pre2.cwiseMax(0.0);
  FeatureMatrix patches2 = im2col(act2, grid, shape.kernel);
  FlowMatrix out = patches2 * w3.transpose();
  out.rowwise() += b3;

  if (keep != nullptr) {
    keep->input = input;
    keep->pre1 = std::move(pre1);
    keep->act1 = std::move(act1);
    keep->patches1 = std::move(patches1);
    keep->pre2 = std::move(pre2);
    keep->act2 = std::move(act2);
    keep->patches2 = std::move(patches2);
  }
  return out;
}

Eigen::VectorXd flownet_backward(const FlowNetShape& shape, const Eigen::VectorXd& params,
                                 const FlowNetActivations& act, const FlowMatrix& d_out, const BevGridSpec& grid) {
  const Layout L(shape);
  const int taps = shape.kernel * shape.kernel;
  const ConstMap w2(params.data() + L.w2, shape.hidden, Eigen::Index(shape.hidden) * taps);
  const ConstMap w3(params.data() + L.w3, 2, Eigen::Index(shape.hidden) * taps);

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(L.end);
  MutMap(grad.data() + L.w3, 2, Eigen::Index(shape.hidden) * taps) = d_out.transpose() * act.patches2;
  grad.segment(L.b3, 2) = d_out.colwise().sum().transpose();

  FeatureMatrix d_act2 = col2im(d_out * w3, grid, shape.kernel, shape.hidden);
  FeatureMatrix d_pre2 = d_act2.cwiseProduct((act.pre2.array() > 0.0).cast<double>().matrix());
  MutMap(grad.data() + L.w2, shape.hidden, Eigen::Index(shape.hidden) * taps) = d_pre2.transpose() * act.patches1;
  grad.segment(L.b2, shape.hidden) = d_pre2.colwise().sum().transpose();

  FeatureMatrix d_act1 = col2im(d_pre2 * w2, grid, shape.kernel, shape.hidden);
  FeatureMatrix d_pre1 = d_act1.cwiseProduct((act.pre1.array() > 0.0).cast<double>().matrix());
  MutMap(grad.data() + L.w1, shape.hidden, shape.input_channels) = d_pre1.transpose() * act.input;
  grad.segment(L.b1, shape.hidden) = d_pre1.colwise().sum().transpose();
  return grad;
}

Eigen::VectorXd flownet_init(const FlowNetShape& shape, std::uint64_t seed) {
  shape.validate();
  const Layout L(shape);
  const int taps = shape.kernel * shape.kernel;
  std::mt19937_64 rng(seed);
  Eigen::VectorXd p = Eigen::VectorXd::Zero(L.end);
  auto fill = [&](Eigen::Index start, Eigen::Index count, double fan_in, double gain) {
    std::normal_distribution<double> n(0.0, gain * std::sqrt(2.0 / fan_in));
    for (Eigen::Index i = 0; i < count; ++i) p[start + i] = n(rng);
  };
  fill(L.w1, L.b1 - L.w1, shape.input_channels, 1.0);
  fill(L.w2, L.b2 - L.w2, double(shape.hidden) * taps, 1.0);
  // Small output layer so the initial flow is near zero.
  fill(L.w3, L.b3 - L.w3, double(shape.hidden) * taps, 0.1);
  p.segment(L.b1, shape.hidden).setConstant(0.01);
  p.segment(L.b2, shape.hidden).setConstant(0.01);
  return p;
}

}  // namespace bevsync
