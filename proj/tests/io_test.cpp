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

#include "bevsync/io.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

namespace bevsync {
namespace {

const BevGridSpec kGrid{-3.75, -1.25, 0.5, 8, 6};

// Little-endian bytes written out by hand.
void put(std::string& s, std::uint64_t v, int n) {
  for (int i = 0; i < n; ++i) s.push_back(char((v >> (8 * i)) & 0xff));
}
void put_f64(std::string& s, double v) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  put(s, u, 8);
}
void put_f32(std::string& s, float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, 4);
  put(s, u, 4);
}

FlowField random_flow(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-3, 3);
  FlowField f = FlowField::zeros(kGrid, FlowDirection::backward, FlowUnit::meters_per_second);
  for (Eigen::Index i = 0; i < f.data.size(); ++i) f.data.data()[i] = u(rng);
  return f;
}

TEST(FlowFormat, ExactBytesForOneCell) {
  const BevGridSpec g{1.5, -2.0, 0.25, 1, 1};
  FlowField f = FlowField::zeros(g, FlowDirection::forward);
  f.set({0, 0}, Vec2d(0.5, -1.25));
  std::ostringstream os;
  write_flow_field(os, f);
  std::string want = "BFLW";
  put(want, 1, 4);
  put(want, 1, 4);
  put(want, 1, 4);
  put_f64(want, 0.25);
  put_f64(want, 1.5);
  put_f64(want, -2.0);
  put(want, 0, 1);  // forward
  put(want, 0, 1);  // meters
  put_f32(want, 0.5f);
  put_f32(want, -1.25f);
  EXPECT_EQ(os.str(), want);
}

TEST(FlowFormat, RoundTripKeepsMetadataAndFloatValues) {
  const FlowField f = random_flow(1);
  std::stringstream ss;
  write_flow_field(ss, f);
  const FlowField g = read_flow_field(ss);
  EXPECT_TRUE(g.grid == f.grid);
  EXPECT_EQ(g.direction, f.direction);
  EXPECT_EQ(g.unit, f.unit);
  for (Eigen::Index i = 0; i < f.data.size(); ++i) ASSERT_EQ(g.data.data()[i], double(float(f.data.data()[i])));
}

TEST(FlowFormat, FloatRepresentableValuesAreBitExact) {
  FlowField f = FlowField::zeros(kGrid, FlowDirection::forward);
  for (Eigen::Index i = 0; i < f.data.size(); ++i) f.data.data()[i] = double(i) * 0.125 - 3.0;
  std::stringstream ss;
  write_flow_field(ss, f);
  EXPECT_TRUE(read_flow_field(ss).data == f.data);
}

TEST(FlowFormat, RejectsBadMagicVersionAndTruncation) {
  std::stringstream ss;
  write_flow_field(ss, random_flow(2));
  const std::string bytes = ss.str();

  std::string bad = bytes;
  bad[0] = 'X';
  std::istringstream a(bad);
  EXPECT_THROW(read_flow_field(a), FormatError);

  bad = bytes;
  bad[4] = 2;
  std::istringstream b(bad);
  EXPECT_THROW(read_flow_field(b), FormatError);

  std::istringstream c(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_flow_field(c), FormatError);

  std::istringstream d(std::string("BFEA") + bytes.substr(4));
  EXPECT_THROW(read_flow_field(d), FormatError);
}

TEST(FlowFormat, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "bevsync_io_test.bflw";
  const FlowField f = random_flow(3);
  save_flow_field(path.string(), f);
  EXPECT_EQ(std::filesystem::file_size(path), 4u + 4 * 3 + 8 * 3 + 2 + 8u * std::size_t(kGrid.cell_count()));
  EXPECT_TRUE(load_flow_field(path.string()).grid == kGrid);
  std::filesystem::remove(path);
  EXPECT_THROW(load_flow_field(path.string()), std::runtime_error);
}

TEST(FeatureFormat, RoundTrip) {
  BevFeatureMap m = BevFeatureMap::zeros(kGrid, 3, 1.75, Pose2d(1, 2, 0.3));
  for (Eigen::Index i = 0; i < m.data.size(); ++i) m.data.data()[i] = 0.25 * double(i % 13) - 1.0;
  std::stringstream ss;
  write_feature_map(ss, m);
  const BevFeatureMap g = read_feature_map(ss);
  EXPECT_TRUE(g.grid == m.grid);
  EXPECT_EQ(g.channels, 3);
  EXPECT_EQ(g.timestamp, 1.75);
  EXPECT_TRUE(g.data == m.data);
  EXPECT_EQ(g.ego_pose, Pose2d());
}

TEST(FeatureFormat, ChannelInterleavedLayout) {
  const BevGridSpec g{0, 0, 1.0, 2, 1};
  BevFeatureMap m = BevFeatureMap::zeros(g, 2, 0.0);
  m.at(0, 0, 0) = 1;
  m.at(0, 0, 1) = 2;
  m.at(0, 1, 0) = 3;
  m.at(0, 1, 1) = 4;
  std::ostringstream os;
  write_feature_map(os, m);
  const std::string s = os.str();
  std::string tail;
  for (float v : {1.0f, 2.0f, 3.0f, 4.0f}) put_f32(tail, v);
  ASSERT_GE(s.size(), tail.size());
  EXPECT_EQ(s.substr(s.size() - tail.size()), tail);
}

TEST(EstimatorFormat, RoundTripIsBitExact) {
  const auto spec = make_learned_spec(EstimatorKind::learned_motion, 4, 4, 17, 6, 3);
  std::stringstream ss;
  write_estimator(ss, spec);
  const FlowEstimatorSpec g = read_estimator(ss);
  EXPECT_EQ(g.kind, spec.kind);
  EXPECT_EQ(g.shape, spec.shape);
  EXPECT_TRUE(g.params == spec.params);

  FlowEstimatorSpec bm;
  bm.kind = EstimatorKind::block_matching;
  bm.patch_radius = 1;
  bm.search_radius = 5;
  std::stringstream tt;
  write_estimator(tt, bm);
  const FlowEstimatorSpec h = read_estimator(tt);
  EXPECT_EQ(h.patch_radius, 1);
  EXPECT_EQ(h.search_radius, 5);
  EXPECT_EQ(h.params.size(), 0);
}

TEST(EstimatorFormat, RejectsWrongParameterCount) {
  auto spec = make_learned_spec(EstimatorKind::learned_velocity, 4, 4, 1);
  spec.params.conservativeResize(spec.params.size() - 1);
  std::stringstream ss;
  EXPECT_THROW(
      {
        write_estimator(ss, spec);
        read_estimator(ss);
      },
      std::exception);
}

TEST(LossCurveCsv, HeaderAndRows) {
  LossCurvePoint p;
  p.epoch = 0;
  p.loss.bucket_mean = {0.5, 0.25, 1.0};
  p.loss.total = 1.75;
  LossCurvePoint q = p;
  q.epoch = 1;
  q.loss.total = 0.1;
  std::ostringstream os;
  write_loss_curve_csv(os, {p, q});
  EXPECT_EQ(os.str(), "epoch,total,b1,b2,b3\n0,1.75,0.5,0.25,1\n1,0.1,0.5,0.25,1\n");
}

TEST(FormatNumber, ShortestRoundTrip) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(1.0), "1");
  EXPECT_EQ(format_number(std::numeric_limits<double>::quiet_NaN()), "nan");
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1e3, 1e3);
  for (int i = 0; i < 1000; ++i) {
    const double v = u(rng);
    ASSERT_EQ(std::stod(format_number(v)), v);
  }
}

TEST(SceneJson, RoundTripReproducesRasterization) {
  SceneConfig cfg;
  cfg.yaw_rate_max_rps = 0.3;
  const Scene s = generate_scene(99, cfg);
  const Scene t = scene_from_json(nlohmann::json::parse(to_json(s).dump()));
  EXPECT_EQ(t.seed, s.seed);
  EXPECT_TRUE(t.config == s.config);
  ASSERT_EQ(t.tracks.size(), s.tracks.size());
  const BevGridSpec g{-15.75, -15.75, 0.5, 64, 64};
  for (double time : {0.0, 0.7, 3.1}) {
    EXPECT_TRUE(rasterize_bev(s, time, g, Modality::camera, 4).data == rasterize_bev(t, time, g, Modality::camera, 4).data);
  }
}

TEST(SceneJson, FileRoundTripAndSchemaVersion) {
  const auto path = std::filesystem::temp_directory_path() / "bevsync_io_test_scene.json";
  const Scene s = generate_scene(5, SceneConfig{});
  save_scene(path.string(), s);
  const Scene t = load_scene(path.string());
  EXPECT_EQ(t.ego.segments().size(), s.ego.segments().size());
  nlohmann::json j = to_json(s);
  EXPECT_EQ(j.at("schema_version"), kSchemaVersion);
  j["schema_version"] = kSchemaVersion + 1;
  EXPECT_THROW(scene_from_json(j), std::exception);
  std::filesystem::remove(path);
}

TEST(SceneConfigJson, MissingKeysKeepDefaults) {
  const SceneConfig c = scene_config_from_json(nlohmann::json::parse(R"({"object_count": 3, "speed_max_mps": 5.0})"));
  SceneConfig want;
  want.object_count = 3;
  want.speed_max_mps = 5.0;
  EXPECT_TRUE(c == want);
  EXPECT_TRUE(scene_config_from_json(to_json(want)) == want);
}

TEST(GridJson, RoundTrip) {
  EXPECT_TRUE(grid_from_json(to_json(kGrid)) == kGrid);
  EXPECT_EQ(to_json(kGrid).at("cell_m"), 0.5);
}

}  // namespace
}  // namespace bevsync
