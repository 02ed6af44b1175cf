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

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "bevsync/flowest.hpp"
#include "bevsync/gtflow.hpp"
#include "bevsync/scenesim.hpp"

namespace bevsync {

// Binary formats are little-endian.
//
// FlowField ("BFLW"):
//   magic[4] version:u32 width:u32 height:u32 cell:f64 origin_x:f64 origin_y:f64
//   direction:u8 unit:u8, then width*height (dx, dy) f32 pairs, row-major.
// BevFeatureMap ("BFEA"):
//   magic[4] version:u32 width:u32 height:u32 channels:u32 cell:f64 origin_x:f64
//   origin_y:f64 timestamp:f64, then width*height*channels f32, channel-interleaved.
// Estimator parameters ("BPRM"):
//   magic[4] version:u32 kind:u8 input_channels:u32 hidden:u32 kernel:u32
//   patch_radius:u32 search_radius:u32 count:u64, then count f64.

inline constexpr std::uint32_t kFlowFormatVersion = 1;
inline constexpr std::uint32_t kFeatureFormatVersion = 1;
inline constexpr std::uint32_t kParamsFormatVersion = 1;
inline constexpr int kSchemaVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_flow_field(std::ostream& os, const FlowField& f);
FlowField read_flow_field(std::istream& is);
void save_flow_field(const std::string& path, const FlowField& f);
FlowField load_flow_field(const std::string& path);

/// The ego pose is not part of the format; loaded maps carry the identity pose.
void write_feature_map(std::ostream& os, const BevFeatureMap& m);
BevFeatureMap read_feature_map(std::istream& is);
void save_feature_map(const std::string& path, const BevFeatureMap& m);
BevFeatureMap load_feature_map(const std::string& path);

void write_estimator(std::ostream& os, const FlowEstimatorSpec& spec);
FlowEstimatorSpec read_estimator(std::istream& is);
void save_estimator(const std::string& path, const FlowEstimatorSpec& spec);
FlowEstimatorSpec load_estimator(const std::string& path);

/// CSV with header epoch,total,b1,b2,b3.
void write_loss_curve_csv(std::ostream& os, const std::vector<LossCurvePoint>& curve);

nlohmann::json to_json(const BevGridSpec& g);
BevGridSpec grid_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SceneConfig& c);
SceneConfig scene_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Scene& s);
Scene scene_from_json(const nlohmann::json& j);
void save_scene(const std::string& path, const Scene& s);
Scene load_scene(const std::string& path);

/// Shortest round-trip decimal form, "nan" for NaN.
std::string format_number(double v);

}  // namespace bevsync
