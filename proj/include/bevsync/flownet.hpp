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

#include <Eigen/Core>

#include "bevsync/geometry.hpp"
#include "bevsync/gtflow.hpp"
#include "bevsync/scenesim.hpp"

namespace bevsync {

/// Compact fully-convolutional flow regressor:
///   encoder   1x1 filter bank (in -> hidden), rectified
///   decoder   KxK filter bank (hidden -> hidden), rectified
///             KxK filter bank (hidden -> 2), linear
/// All filters are shift-invariant with zero padding at the grid border.
struct FlowNetShape {
  int input_channels{8};
  int hidden{8};
  int kernel{3};

  Eigen::Index parameter_count() const;
  void validate() const;
  bool operator==(const FlowNetShape&) const = default;
};

/// Intermediate tensors kept from a forward pass for backpropagation.
struct FlowNetActivations {
  FeatureMatrix input;
  FeatureMatrix pre1, act1, patches1;
  FeatureMatrix pre2, act2, patches2;
};

/// Gathers the KxK neighborhood of every cell into one row
/// (column = (ky * K + kx) * channels + channel).
FeatureMatrix im2col(const FeatureMatrix& x, const BevGridSpec& grid, int kernel);
/// Adjoint of im2col: scatters patch gradients back onto cells.
FeatureMatrix col2im(const FeatureMatrix& patches, const BevGridSpec& grid, int kernel, int channels);

FlowMatrix flownet_forward(const FlowNetShape& shape, const Eigen::VectorXd& params, const FeatureMatrix& input,
                           const BevGridSpec& grid, FlowNetActivations* keep = nullptr);

/// Gradient of <d_out, output> with respect to the parameters.
Eigen::VectorXd flownet_backward(const FlowNetShape& shape, const Eigen::VectorXd& params,
                                 const FlowNetActivations& act, const FlowMatrix& d_out, const BevGridSpec& grid);

/// He-style initialization, deterministic in seed.
Eigen::VectorXd flownet_init(const FlowNetShape& shape, std::uint64_t seed);

}  // namespace bevsync
