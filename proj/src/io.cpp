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

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace bevsync {

namespace {

template <typename UInt>
void put_uint(std::ostream& os, UInt v) {
  char bytes[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = char((v >> (8 * i)) & 0xFF);
  os.write(bytes, sizeof(UInt));
}

template <typename UInt>
UInt get_uint(std::istream& is) {
  unsigned char bytes[sizeof(UInt)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(UInt))) throw FormatError("unexpected end of stream");
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= UInt(bytes[i]) << (8 * i);
  return v;
}

void put_f64(std::ostream& os, double v) { put_uint(os, std::bit_cast<std::uint64_t>(v)); }
double get_f64(std::istream& is) { return std::bit_cast<double>(get_uint<std::uint64_t>(is)); }
void put_f32(std::ostream& os, double v) { put_uint(os, std::bit_cast<std::uint32_t>(float(v))); }
double get_f32(std::istream& is) { return double(std::bit_cast<float>(get_uint<std::uint32_t>(is))); }

void put_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

void expect_magic(std::istream& is, const char (&magic)[5]) {
  char got[4];
  if (!is.read(got, 4) || std::memcmp(got, magic, 4) != 0) {
    throw FormatError(std::string("bad magic, expected ") + magic);
  }
}

void expect_version(std::istream& is, std::uint32_t supported, const char* what) {
  const auto v = get_uint<std::uint32_t>(is);
  if (v != supported) throw FormatError(std::string(what) + ": unsupported version " + std::to_string(v));
}

template <typename Write>
void to_file(const std::string& path, Write&& write) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  write(os);
  if (!os) throw std::runtime_error("write failed: " + path);
}

template <typename Read>
auto from_file(const std::string& path, Read&& read) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  return read(is);
}

BevGridSpec read_grid_dims(std::istream& is, std::uint32_t& channels, bool with_channels) {
  BevGridSpec g;
  g.width = int(get_uint<std::uint32_t>(is));
  g.height = int(get_uint<std::uint32_t>(is));
  if (with_channels) channels = get_uint<std::uint32_t>(is);
  g.cell = get_f64(is);
  g.origin_x = get_f64(is);
  g.origin_y = get_f64(is);
  try {
    g.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return g;
}

}  // namespace

void write_flow_field(std::ostream& os, const FlowField& f) {
  f.validate();
  put_magic(os, "BFLW");
  put_uint<std::uint32_t>(os, kFlowFormatVersion);
  put_uint<std::uint32_t>(os, std::uint32_t(f.grid.width));
  put_uint<std::uint32_t>(os, std::uint32_t(f.grid.height));
  put_f64(os, f.grid.cell);
  put_f64(os, f.grid.origin_x);
  put_f64(os, f.grid.origin_y);
  put_uint<std::uint8_t>(os, std::uint8_t(f.direction));
  put_uint<std::uint8_t>(os, std::uint8_t(f.unit));
  for (Eigen::Index i = 0; i < f.data.rows(); ++i) {
    put_f32(os, f.data(i, 0));
    put_f32(os, f.data(i, 1));
  }
}

FlowField read_flow_field(std::istream& is) {
  expect_magic(is, "BFLW");
  expect_version(is, kFlowFormatVersion, "flow field");
  std::uint32_t unused = 0;
  const BevGridSpec g = read_grid_dims(is, unused, false);
  const auto dir = get_uint<std::uint8_t>(is);
  const auto unit = get_uint<std::uint8_t>(is);
  if (dir > 1 || unit > 1) throw FormatError("flow field: bad direction or unit tag");
  FlowField f = FlowField::zeros(g, FlowDirection(dir), FlowUnit(unit));
  for (Eigen::Index i = 0; i < f.data.rows(); ++i) {
    f.data(i, 0) = get_f32(is);
    f.data(i, 1) = get_f32(is);
  }
  return f;
}

void save_flow_field(const std::string& path, const FlowField& f) {
  to_file(path, [&](std::ostream& os) { write_flow_field(os, f); });
}

FlowField load_flow_field(const std::string& path) {
  return from_file(path, [](std::istream& is) { return read_flow_field(is); });
}

void write_feature_map(std::ostream& os, const BevFeatureMap& m) {
  m.validate();
  put_magic(os, "BFEA");
  put_uint<std::uint32_t>(os, kFeatureFormatVersion);
  put_uint<std::uint32_t>(os, std::uint32_t(m.grid.width));
  put_uint<std::uint32_t>(os, std::uint32_t(m.grid.height));
  put_uint<std::uint32_t>(os, std::uint32_t(m.channels));
  put_f64(os, m.grid.cell);
  put_f64(os, m.grid.origin_x);
  put_f64(os, m.grid.origin_y);
  put_f64(os, m.timestamp);
  for (Eigen::Index i = 0; i < m.data.rows(); ++i) {
    for (Eigen::Index c = 0; c < m.data.cols(); ++c) put_f32(os, m.data(i, c));
  }
}

BevFeatureMap read_feature_map(std::istream& is) {
  expect_magic(is, "BFEA");
  expect_version(is, kFeatureFormatVersion, "feature map");
  std::uint32_t channels = 0;
  const BevGridSpec g = read_grid_dims(is, channels, true);
  if (channels < 1) throw FormatError("feature map: zero channels");
  const double ts = get_f64(is);
  BevFeatureMap m = BevFeatureMap::zeros(g, int(channels), ts);
  for (Eigen::Index i = 0; i < m.data.rows(); ++i) {
    for (Eigen::Index c = 0; c < m.data.cols(); ++c) m.data(i, c) = get_f32(is);
  }
  return m;
}

void save_feature_map(const std::string& path, const BevFeatureMap& m) {
  to_file(path, [&](std::ostream& os) { write_feature_map(os, m); });
}

BevFeatureMap load_feature_map(const std::string& path) {
  return from_file(path, [](std::istream& is) { return read_feature_map(is); });
}

void write_estimator(std::ostream& os, const FlowEstimatorSpec& spec) {
  spec.validate();
  put_magic(os, "BPRM");
  put_uint<std::uint32_t>(os, kParamsFormatVersion);
  put_uint<std::uint8_t>(os, std::uint8_t(spec.kind));
  put_uint<std::uint32_t>(os, std::uint32_t(spec.shape.input_channels));
  put_uint<std::uint32_t>(os, std::uint32_t(spec.shape.hidden));
  put_uint<std::uint32_t>(os, std::uint32_t(spec.shape.kernel));
  put_uint<std::uint32_t>(os, std::uint32_t(spec.patch_radius));
  put_uint<std::uint32_t>(os, std::uint32_t(spec.search_radius));
  put_uint<std::uint64_t>(os, std::uint64_t(spec.params.size()));
  for (Eigen::Index i = 0; i < spec.params.size(); ++i) put_f64(os, spec.params[i]);
}

FlowEstimatorSpec read_estimator(std::istream& is) {
  expect_magic(is, "BPRM");
  expect_version(is, kParamsFormatVersion, "estimator");
  FlowEstimatorSpec spec;
  const auto kind = get_uint<std::uint8_t>(is);
  if (kind > std::uint8_t(EstimatorKind::learned_velocity)) throw FormatError("estimator: bad kind");
  spec.kind = EstimatorKind(kind);
  spec.shape.input_channels = int(get_uint<std::uint32_t>(is));
  spec.shape.hidden = int(get_uint<std::uint32_t>(is));
  spec.shape.kernel = int(get_uint<std::uint32_t>(is));
  spec.patch_radius = int(get_uint<std::uint32_t>(is));
  spec.search_radius = int(get_uint<std::uint32_t>(is));
  const auto count = get_uint<std::uint64_t>(is);
  if (count > (std::uint64_t(1) << 28)) throw FormatError("estimator: parameter count too large");
  spec.params.resize(Eigen::Index(count));
  for (Eigen::Index i = 0; i < spec.params.size(); ++i) spec.params[i] = get_f64(is);
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return spec;
}

void save_estimator(const std::string& path, const FlowEstimatorSpec& spec) {
  to_file(path, [&](std::ostream& os) { write_estimator(os, spec); });
}

FlowEstimatorSpec load_estimator(const std::string& path) {
  return from_file(path, [](std::istream& is) { return read_estimator(is); });
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_loss_curve_csv(std::ostream& os, const std::vector<LossCurvePoint>& curve) {
  os << "epoch,total,b1,b2,b3\n";
  for (const auto& p : curve) {
    os << p.epoch << ',' << format_number(p.loss.total) << ',' << format_number(p.loss.bucket_mean[0]) << ','
       << format_number(p.loss.bucket_mean[1]) << ',' << format_number(p.loss.bucket_mean[2]) << '\n';
  }
}

nlohmann::json to_json(const BevGridSpec& g) {
  return {{"origin_x_m", g.origin_x}, {"origin_y_m", g.origin_y}, {"cell_m", g.cell},
          {"width_cells", g.width},   {"height_cells", g.height}};
}

BevGridSpec grid_from_json(const nlohmann::json& j) {
  BevGridSpec g;
  g.origin_x = j.at("origin_x_m").get<double>();
  g.origin_y = j.at("origin_y_m").get<double>();
  g.cell = j.at("cell_m").get<double>();
  g.width = j.at("width_cells").get<int>();
  g.height = j.at("height_cells").get<int>();
  g.validate();
  return g;
}

nlohmann::json to_json(const SceneConfig& c) {
  return {{"object_count", c.object_count},
          {"dynamic_fraction", c.dynamic_fraction},
          {"speed_min_mps", c.speed_min_mps},
          {"speed_max_mps", c.speed_max_mps},
          {"yaw_rate_max_rps", c.yaw_rate_max_rps},
          {"length_min_m", c.length_min_m},
          {"length_max_m", c.length_max_m},
          {"width_min_m", c.width_min_m},
          {"width_max_m", c.width_max_m},
          {"spawn_half_extent_m", c.spawn_half_extent_m},
          {"min_separation_m", c.min_separation_m},
          {"ego_speed_min_mps", c.ego_speed_min_mps},
          {"ego_speed_max_mps", c.ego_speed_max_mps},
          {"ego_yaw_rate_max_rps", c.ego_yaw_rate_max_rps},
          {"ego_segments", c.ego_segments},
          {"duration_s", c.duration_s}};
}

SceneConfig scene_config_from_json(const nlohmann::json& j) {
  SceneConfig c;
  auto opt = [&j](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  opt("object_count", c.object_count);
  opt("dynamic_fraction", c.dynamic_fraction);
  opt("speed_min_mps", c.speed_min_mps);
  opt("speed_max_mps", c.speed_max_mps);
  opt("yaw_rate_max_rps", c.yaw_rate_max_rps);
  opt("length_min_m", c.length_min_m);
  opt("length_max_m", c.length_max_m);
  opt("width_min_m", c.width_min_m);
  opt("width_max_m", c.width_max_m);
  opt("spawn_half_extent_m", c.spawn_half_extent_m);
  opt("min_separation_m", c.min_separation_m);
  opt("ego_speed_min_mps", c.ego_speed_min_mps);
  opt("ego_speed_max_mps", c.ego_speed_max_mps);
  opt("ego_yaw_rate_max_rps", c.ego_yaw_rate_max_rps);
  opt("ego_segments", c.ego_segments);
  opt("duration_s", c.duration_s);
  c.validate();
  return c;
}

namespace {

nlohmann::json pose_json(const Pose2d& p) { return {{"x_m", p.x}, {"y_m", p.y}, {"yaw_rad", p.yaw}}; }

Pose2d pose_from(const nlohmann::json& j) {
  return Pose2d(j.at("x_m").get<double>(), j.at("y_m").get<double>(), j.at("yaw_rad").get<double>());
}

}  // namespace

nlohmann::json to_json(const Scene& s) {
  nlohmann::json segments = nlohmann::json::array();
  for (const auto& seg : s.ego.segments()) {
    segments.push_back({{"duration_s", seg.duration_s}, {"speed_mps", seg.speed_mps}, {"yaw_rate_rps", seg.yaw_rate_rps}});
  }
  nlohmann::json tracks = nlohmann::json::array();
  for (const auto& t : s.tracks) {
    tracks.push_back({{"id", t.id},
                      {"length_m", t.length},
                      {"width_m", t.width},
                      {"initial", pose_json(t.initial)},
                      {"speed_mps", t.speed_mps},
                      {"yaw_rate_rps", t.yaw_rate_rps}});
  }
  return {{"schema_version", kSchemaVersion},
          {"seed", s.seed},
          {"config", to_json(s.config)},
          {"ego", {{"initial", pose_json(s.ego.initial())}, {"segments", segments}}},
          {"tracks", tracks}};
}

Scene scene_from_json(const nlohmann::json& j) {
  if (j.at("schema_version").get<int>() != kSchemaVersion) throw FormatError("scene: unsupported schema_version");
  Scene s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.config = scene_config_from_json(j.at("config"));
  std::vector<MotionSegment> segments;
  for (const auto& seg : j.at("ego").at("segments")) {
    segments.push_back({seg.at("duration_s").get<double>(), seg.at("speed_mps").get<double>(),
                        seg.at("yaw_rate_rps").get<double>()});
  }
  s.ego = EgoTrajectory(pose_from(j.at("ego").at("initial")), std::move(segments));
  for (const auto& t : j.at("tracks")) {
    BoxTrack tr;
    tr.id = t.at("id").get<int>();
    tr.length = t.at("length_m").get<double>();
    tr.width = t.at("width_m").get<double>();
    tr.initial = pose_from(t.at("initial"));
    tr.speed_mps = t.at("speed_mps").get<double>();
    tr.yaw_rate_rps = t.at("yaw_rate_rps").get<double>();
    s.tracks.push_back(tr);
  }
  return s;
}

void save_scene(const std::string& path, const Scene& s) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << to_json(s).dump(2) << '\n';
}

Scene load_scene(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  return scene_from_json(nlohmann::json::parse(is));
}

}  // namespace bevsync
