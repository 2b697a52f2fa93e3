// Copyright 2026 The TrajLLM Authors.
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

#include "trajllm/scene.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace trajllm {

using nlohmann::json;

bool SceneSample::operator==(const SceneSample& o) const {
  if (scene_id != o.scene_id || seed != o.seed) return false;
  if (agents != o.agents || agent_mask != o.agent_mask) return false;
  if (lanes != o.lanes || lane_mask != o.lane_mask) return false;
  if (gt_future.rows() != o.gt_future.rows() || gt_future.cols() != o.gt_future.cols())
    return false;
  if (gt_future.size() && !(gt_future.array() == o.gt_future.array()).all()) return false;
  return lane_labels == o.lane_labels;
}

NormalizedScene normalize_scene(const std::vector<Mat>& agent_positions,
                                const std::vector<Mat>& lane_polylines, int target_index) {
  if (target_index < 0 || target_index >= static_cast<int>(agent_positions.size()))
    throw SceneError("normalize_scene: target index out of range");
  const Mat& target = agent_positions[static_cast<std::size_t>(target_index)];
  if (target.rows() < kHistorySteps)
    throw SceneError("normalize_scene: target has " + std::to_string(target.rows()) +
                     " observed positions, needs at least " + std::to_string(kHistorySteps));
  NormalizedScene out;
  out.offset = target.row(target.rows() - 1).transpose();
  out.agent_positions.reserve(agent_positions.size());
  for (const Mat& p : agent_positions)
    out.agent_positions.push_back(p.rowwise() - out.offset.transpose());
  out.lane_polylines.reserve(lane_polylines.size());
  for (const Mat& p : lane_polylines)
    out.lane_polylines.push_back(p.rowwise() - out.offset.transpose());
  return out;
}

std::vector<TrajectoryVector> vectorize_trajectory(const Mat& positions,
                                                   const std::vector<double>& type_one_hot) {
  const Eigen::Index t = positions.rows();
  if (t < 2) throw SceneError("vectorize_trajectory: needs at least 2 positions");
  std::vector<TrajectoryVector> out;
  out.reserve(static_cast<std::size_t>(t - 1));
  for (Eigen::Index j = 0; j + 1 < t; ++j) {
    TrajectoryVector v;
    v.start = positions.row(j).transpose();
    v.end = positions.row(j + 1).transpose();
    v.attrs = type_one_hot;
    // timestamp index of the vector endpoint, normalized into (-1, 0]
    const double ts_index = static_cast<double>(j + 1) - static_cast<double>(t - 1);
    v.attrs.push_back(ts_index / static_cast<double>(t - 1));
    out.push_back(std::move(v));
  }
  return out;
}

SegmentResult segment_lanes(const std::vector<Mat>& polylines,
                            const std::vector<int>& lane_types, int max_vectors) {
  if (lane_types.size() != polylines.size())
    throw SceneError("segment_lanes: lane_types size mismatch");
  SegmentResult result;
  for (std::size_t li = 0; li < polylines.size(); ++li) {
    const Mat& poly = polylines[li];
    if (poly.rows() < 2) throw SceneError("segment_lanes: polyline needs >= 2 points");
    std::vector<double> attrs(kLaneAttrDim, 0.0);
    if (lane_types[li] >= 0 && lane_types[li] < kLaneTypes)
      attrs[static_cast<std::size_t>(lane_types[li])] = 1.0;

    // Drop repeated points so degenerate segments never appear.
    std::vector<Vec2> pts;
    pts.emplace_back(poly.row(0).transpose());
    for (Eigen::Index i = 1; i < poly.rows(); ++i) {
      Vec2 p = poly.row(i).transpose();
      if ((p - pts.back()).norm() == 0.0) {
        ++result.dropped_zero_length;
        continue;
      }
      pts.push_back(p);
    }
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
      LaneVector v;
      v.start = pts[i];
      v.end = pts[i + 1];
      v.predecessor = (i == 0) ? pts[i] : pts[i - 1];
      v.attrs = attrs;
      result.vectors.push_back(std::move(v));
    }
  }
  if (static_cast<int>(result.vectors.size()) > max_vectors) {
    const std::size_t n = result.vectors.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto dist = [&](std::size_t i) {
      return std::min(result.vectors[i].start.norm(), result.vectors[i].end.norm());
    };
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return dist(a) < dist(b); });
    std::vector<char> keep(n, 0);
    for (int i = 0; i < max_vectors; ++i) keep[order[static_cast<std::size_t>(i)]] = 1;
    std::vector<LaneVector> kept;
    kept.reserve(static_cast<std::size_t>(max_vectors));
    for (std::size_t i = 0; i < n; ++i)
      if (keep[i]) kept.push_back(std::move(result.vectors[i]));
    result.truncated = static_cast<int>(n) - max_vectors;
    result.vectors = std::move(kept);
  }
  return result;
}

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 == 0.0) return (p - a).norm();
  double t = (p - a).dot(ab) / len2;
  t = std::clamp(t, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

std::vector<std::vector<int>> label_closest_lane(const std::vector<LaneVector>& lanes,
                                                 const std::vector<int>& lane_mask,
                                                 const Mat& gt_future) {
  if (lane_mask.size() != lanes.size())
    throw SceneError("label_closest_lane: mask size mismatch");
  bool any_valid = false;
  for (int m : lane_mask) any_valid |= (m != 0);
  if (!any_valid) throw SceneError("label_closest_lane: no valid lanes");

  std::vector<std::vector<int>> labels(static_cast<std::size_t>(gt_future.rows()),
                                       std::vector<int>(lanes.size(), 0));
  for (Eigen::Index t = 0; t < gt_future.rows(); ++t) {
    const Vec2 p = gt_future.row(t).transpose();
    int best = -1;
    double best_d = 0.0;
    for (std::size_t l = 0; l < lanes.size(); ++l) {
      if (!lane_mask[l]) continue;
      const double d = point_segment_distance(p, lanes[l].start, lanes[l].end);
      if (best < 0 || d < best_d) {
        best = static_cast<int>(l);
        best_d = d;
      }
    }
    labels[static_cast<std::size_t>(t)][static_cast<std::size_t>(best)] = 1;
  }
  return labels;
}

SceneTemplate parse_scene_template(const std::string& name) {
  if (name == "straight") return SceneTemplate::straight;
  if (name == "left_turn") return SceneTemplate::left_turn;
  if (name == "right_turn") return SceneTemplate::right_turn;
  if (name == "intersection") return SceneTemplate::intersection;
  throw SceneError("unknown scene template: " + name);
}

std::string to_string(SceneTemplate t) {
  switch (t) {
    case SceneTemplate::straight: return "straight";
    case SceneTemplate::left_turn: return "left_turn";
    case SceneTemplate::right_turn: return "right_turn";
    case SceneTemplate::intersection: return "intersection";
  }
  return "?";
}

namespace {

// Piecewise straight/arc centerline with arc-length parameterization.
class LanePath {
 public:
  LanePath(Vec2 start, double heading) : pos_(start), heading_(heading) {}

  void add(double length, double curvature) {
    pieces_.push_back({length, curvature, pos_, heading_});
    pos_ = piece_point(pieces_.back(), length);
    heading_ += curvature * length;
    total_ += length;
  }

  double length() const { return total_; }

  Vec2 point_at(double s) const {
    s = std::clamp(s, 0.0, total_);
    double acc = 0.0;
    for (const auto& pc : pieces_) {
      if (s <= acc + pc.length || &pc == &pieces_.back())
        return piece_point(pc, s - acc);
      acc += pc.length;
    }
    return pos_;
  }

  double heading_at(double s) const {
    s = std::clamp(s, 0.0, total_);
    double acc = 0.0;
    for (const auto& pc : pieces_) {
      if (s <= acc + pc.length || &pc == &pieces_.back())
        return pc.h0 + pc.curvature * (s - acc);
      acc += pc.length;
    }
    return heading_;
  }

  Mat polyline(double ds) const {
    const int n = std::max(2, static_cast<int>(std::ceil(total_ / ds)) + 1);
    Mat out(n, 2);
    for (int i = 0; i < n; ++i) {
      const double s = total_ * static_cast<double>(i) / static_cast<double>(n - 1);
      out.row(i) = point_at(s).transpose();
    }
    return out;
  }

 private:
  struct Piece {
    double length;
    double curvature;
    Vec2 p0;
    double h0;
  };

  static Vec2 piece_point(const Piece& pc, double s) {
    if (pc.curvature == 0.0)
      return pc.p0 + s * Vec2(std::cos(pc.h0), std::sin(pc.h0));
    const double r = 1.0 / pc.curvature;
    const Vec2 center = pc.p0 + r * Vec2(-std::sin(pc.h0), std::cos(pc.h0));
    const double h = pc.h0 + pc.curvature * s;
    return center + r * Vec2(std::sin(h), -std::cos(h));
  }

  std::vector<Piece> pieces_;
  Vec2 pos_;
  double heading_;
  double total_ = 0.0;
};

Vec2 rotate(const Vec2& p, double theta) {
  return {p.x() * std::cos(theta) - p.y() * std::sin(theta),
          p.x() * std::sin(theta) + p.y() * std::cos(theta)};
}

struct TemplateScene {
  std::vector<LanePath> lanes;
  std::vector<int> lane_types;
  std::size_t target_lane = 0;
  double target_s0 = 0.0;
};

TemplateScene build_template(SceneTemplate tmpl, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  TemplateScene ts;
  switch (tmpl) {
    case SceneTemplate::straight: {
      const int n_lanes = 2 + (uni(rng) < 0.5 ? 1 : 0);
      for (int i = 0; i < n_lanes; ++i) {
        const double offset = 3.5 * (i - (n_lanes - 1) / 2.0);
        LanePath lane({-30.0, offset}, 0.0);
        lane.add(90.0, 0.0);
        ts.lanes.push_back(lane);
        ts.lane_types.push_back(0);
      }
      ts.target_lane = static_cast<std::size_t>(uni(rng) * n_lanes) % n_lanes;
      ts.target_s0 = 14.0 + uni(rng) * 22.0;
      break;
    }
    case SceneTemplate::left_turn:
    case SceneTemplate::right_turn: {
      const double sign = (tmpl == SceneTemplate::left_turn) ? 1.0 : -1.0;
      const double radius = 12.0 + uni(rng) * 6.0;
      LanePath turn({-30.0, 0.0}, 0.0);
      turn.add(30.0, 0.0);
      turn.add(radius * M_PI / 2.0, sign / radius);
      turn.add(15.0, 0.0);
      LanePath straight({-30.0, 0.0}, 0.0);
      straight.add(80.0, 0.0);
      ts.lanes.push_back(turn);
      ts.lane_types.push_back(sign > 0 ? 1 : 2);
      ts.lanes.push_back(straight);
      ts.lane_types.push_back(0);
      if (uni(rng) < 0.4) {
        LanePath other({-30.0, -3.5 * sign}, 0.0);
        other.add(80.0, 0.0);
        ts.lanes.push_back(other);
        ts.lane_types.push_back(0);
      }
      ts.target_lane = 0;
      ts.target_s0 = 14.0 + uni(rng) * 10.0;
      break;
    }
    case SceneTemplate::intersection: {
      const double r_left = 12.0 + uni(rng) * 4.0;
      const double r_right = 10.0 + uni(rng) * 4.0;
      LanePath left({-30.0, 0.0}, 0.0);
      left.add(30.0, 0.0);
      left.add(r_left * M_PI / 2.0, 1.0 / r_left);
      left.add(12.0, 0.0);
      LanePath mid({-30.0, 0.0}, 0.0);
      mid.add(80.0, 0.0);
      LanePath right({-30.0, 0.0}, 0.0);
      right.add(30.0, 0.0);
      right.add(r_right * M_PI / 2.0, -1.0 / r_right);
      right.add(12.0, 0.0);
      LanePath crossing({12.0, -30.0}, M_PI / 2.0);
      crossing.add(60.0, 0.0);
      ts.lanes = {left, mid, right, crossing};
      ts.lane_types = {1, 0, 2, 0};
      ts.target_lane = static_cast<std::size_t>(uni(rng) * 3.0) % 3;
      ts.target_s0 = 14.0 + uni(rng) * 10.0;
      break;
    }
  }
  return ts;
}

}  // namespace

SceneSample generate_synthetic_scene(SceneTemplate tmpl, double noise_scale,
                                     std::uint64_t seed) {
  if (noise_scale < 0.0) throw SceneError("generate_synthetic_scene: noise_scale < 0");
  std::mt19937_64 rng(mix_seed(seed, fnv1a64(to_string(tmpl))));
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  TemplateScene ts = build_template(tmpl, rng);
  const double theta = (uni(rng) - 0.5) * 1.0;  // mild global rotation
  const Vec2 world_offset(80.0 * (uni(rng) - 0.5), 80.0 * (uni(rng) - 0.5));
  const double speed = 4.5 + uni(rng) * 4.0;
  const double step = speed * kStepSeconds;

  const LanePath& target_lane = ts.lanes[ts.target_lane];
  const double s0 = ts.target_s0;

  auto to_world = [&](const Vec2& p) -> Vec2 { return rotate(p, theta) + world_offset; };

  // Target history and future along the followed centerline.
  Mat target_hist(kHistorySteps, 2);
  for (int j = 0; j < kHistorySteps; ++j) {
    Vec2 p = target_lane.point_at(s0 - step * (kHistorySteps - 1 - j));
    p = to_world(p);
    if (noise_scale > 0.0) p += Vec2(gauss(rng), gauss(rng)) * noise_scale;
    target_hist.row(j) = p.transpose();
  }
  Mat future(kFutureSteps, 2);
  for (int t = 0; t < kFutureSteps; ++t) {
    const double s = s0 + step * (t + 1);
    Vec2 p = target_lane.point_at(s);
    if (noise_scale > 0.0) {
      const double h = target_lane.heading_at(s);
      const double lateral =
          std::clamp(gauss(rng) * noise_scale, -0.45, 0.45);  // stay near the centerline
      p += lateral * Vec2(-std::sin(h), std::cos(h));
    }
    future.row(t) = to_world(p).transpose();
  }

  // Neighbors ride other positions of the network.
  const int n_neighbors = static_cast<int>(uni(rng) * 5.0) % 5;
  std::vector<Mat> agent_positions;
  agent_positions.push_back(target_hist);
  std::vector<int> agent_types;
  agent_types.push_back(0);
  for (int k = 0; k < n_neighbors; ++k) {
    const std::size_t li = static_cast<std::size_t>(uni(rng) * ts.lanes.size()) % ts.lanes.size();
    const LanePath& lane = ts.lanes[li];
    const double sn = 5.0 + uni(rng) * std::max(1.0, lane.length() - 10.0);
    const double vn = 3.0 + uni(rng) * 6.0;
    Mat hist(kHistorySteps, 2);
    for (int j = 0; j < kHistorySteps; ++j) {
      const double s = std::max(0.5, sn - vn * kStepSeconds * (kHistorySteps - 1 - j));
      Vec2 p = to_world(lane.point_at(s));
      if (noise_scale > 0.0) p += Vec2(gauss(rng), gauss(rng)) * noise_scale;
      hist.row(j) = p.transpose();
    }
    agent_positions.push_back(hist);
    agent_types.push_back(static_cast<int>(uni(rng) * kAgentTypes) % kAgentTypes);
  }

  std::vector<Mat> polylines;
  polylines.reserve(ts.lanes.size());
  const double ds = (tmpl == SceneTemplate::straight) ? 5.0 : 4.0;
  for (const auto& lane : ts.lanes) {
    Mat poly = lane.polyline(ds);
    for (Eigen::Index i = 0; i < poly.rows(); ++i)
      poly.row(i) = to_world(poly.row(i).transpose()).transpose();
    polylines.push_back(std::move(poly));
  }

  NormalizedScene norm = normalize_scene(agent_positions, polylines, 0);

  SceneSample sample;
  sample.scene_id = to_string(tmpl) + "-" + std::to_string(seed);
  sample.seed = seed;
  for (std::size_t i = 0; i < norm.agent_positions.size(); ++i) {
    std::vector<double> one_hot(kAgentTypes, 0.0);
    one_hot[static_cast<std::size_t>(agent_types[i])] = 1.0;
    sample.agents.push_back(vectorize_trajectory(norm.agent_positions[i], one_hot));
    sample.agent_mask.emplace_back(kHistorySteps - 1, 1);
  }
  SegmentResult seg = segment_lanes(norm.lane_polylines, ts.lane_types, kMaxLaneVectors);
  sample.lanes = std::move(seg.vectors);
  sample.lane_mask.assign(sample.lanes.size(), 1);
  sample.gt_future = future.rowwise() - norm.offset.transpose();
  sample.lane_labels = label_closest_lane(sample.lanes, sample.lane_mask, sample.gt_future);
  return sample;
}

namespace {

json vec2_to_json(const Vec2& v) { return json::array({v.x(), v.y()}); }

Vec2 vec2_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) throw SceneIoError("expected [x, y] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

std::string scene_to_json_line(const SceneSample& s) {
  json rec;
  rec["schema_version"] = kSceneSchemaVersion;
  rec["scene_id"] = s.scene_id;
  rec["seed"] = s.seed;
  json agents = json::array();
  for (const auto& agent : s.agents) {
    json vectors = json::array();
    for (const auto& v : agent)
      vectors.push_back({{"start", vec2_to_json(v.start)},
                         {"end", vec2_to_json(v.end)},
                         {"attrs", v.attrs}});
    agents.push_back(std::move(vectors));
  }
  rec["agents"] = std::move(agents);
  rec["agent_mask"] = s.agent_mask;
  json lanes = json::array();
  for (const auto& v : s.lanes)
    lanes.push_back({{"start", vec2_to_json(v.start)},
                     {"end", vec2_to_json(v.end)},
                     {"predecessor", vec2_to_json(v.predecessor)},
                     {"attrs", v.attrs}});
  rec["lanes"] = std::move(lanes);
  rec["lane_mask"] = s.lane_mask;
  json gt = json::array();
  for (Eigen::Index t = 0; t < s.gt_future.rows(); ++t)
    gt.push_back(json::array({s.gt_future(t, 0), s.gt_future(t, 1)}));
  rec["gt_future"] = std::move(gt);
  rec["lane_labels"] = s.lane_labels;
  return rec.dump();
}

SceneSample scene_from_json_line(const std::string& line) {
  json rec = json::parse(line);
  const std::string version = rec.at("schema_version").get<std::string>();
  if (version != kSceneSchemaVersion)
    throw SceneIoError("schema_version mismatch: got \"" + version + "\", expected \"" +
                       kSceneSchemaVersion + "\"");
  SceneSample s;
  s.scene_id = rec.at("scene_id").get<std::string>();
  s.seed = rec.at("seed").get<std::uint64_t>();
  for (const auto& agent : rec.at("agents")) {
    std::vector<TrajectoryVector> vectors;
    for (const auto& v : agent) {
      TrajectoryVector tv;
      tv.start = vec2_from_json(v.at("start"));
      tv.end = vec2_from_json(v.at("end"));
      tv.attrs = v.at("attrs").get<std::vector<double>>();
      vectors.push_back(std::move(tv));
    }
    s.agents.push_back(std::move(vectors));
  }
  s.agent_mask = rec.at("agent_mask").get<std::vector<std::vector<int>>>();
  for (const auto& v : rec.at("lanes")) {
    LaneVector lv;
    lv.start = vec2_from_json(v.at("start"));
    lv.end = vec2_from_json(v.at("end"));
    lv.predecessor = vec2_from_json(v.at("predecessor"));
    lv.attrs = v.at("attrs").get<std::vector<double>>();
    s.lanes.push_back(std::move(lv));
  }
  s.lane_mask = rec.at("lane_mask").get<std::vector<int>>();
  const auto& gt = rec.at("gt_future");
  s.gt_future = Mat(gt.size(), 2);
  for (std::size_t t = 0; t < gt.size(); ++t) {
    s.gt_future(static_cast<Eigen::Index>(t), 0) = gt[t][0].get<double>();
    s.gt_future(static_cast<Eigen::Index>(t), 1) = gt[t][1].get<double>();
  }
  s.lane_labels = rec.at("lane_labels").get<std::vector<std::vector<int>>>();
  if (s.agent_mask.size() != s.agents.size())
    throw SceneIoError("agent_mask size does not match agents");
  if (s.lane_mask.size() != s.lanes.size())
    throw SceneIoError("lane_mask size does not match lanes");
  return s;
}

void save_scenes(const std::vector<SceneSample>& samples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw SceneIoError("cannot open for writing: " + path);
  for (const auto& s : samples) out << scene_to_json_line(s) << "\n";
  if (!out) throw SceneIoError("write failed: " + path);
}

std::vector<SceneSample> load_scenes(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SceneIoError("cannot open for reading: " + path);
  std::vector<SceneSample> out;
  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) {
      ++index;
      continue;
    }
    try {
      out.push_back(scene_from_json_line(line));
    } catch (const json::exception& e) {
      throw SceneIoError("record " + std::to_string(index) + ": " + e.what());
    } catch (const SceneIoError& e) {
      throw SceneIoError("record " + std::to_string(index) + ": " + e.what());
    }
    ++index;
  }
  return out;
}

}  // namespace trajllm
