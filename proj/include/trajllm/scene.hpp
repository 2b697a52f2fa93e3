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

#pragma once

#include "trajllm/mat.hpp"

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace trajllm {

// Vectorized scene schema. Time grid is 2 Hz: t_h = 4 observed positions
// (3 trajectory vectors per agent) and t_f = 12 future positions.
constexpr int kHistorySteps = 4;
constexpr int kFutureSteps = 12;
constexpr int kMaxLaneVectors = 64;
constexpr int kMaxNeighbors = 8;
constexpr int kAgentTypes = 4;   // car, truck, cyclist, pedestrian
constexpr int kLaneTypes = 3;    // straight, left turn, right turn
constexpr int kAgentAttrDim = kAgentTypes + 1;  // type one-hot + normalized timestamp
constexpr int kLaneAttrDim = kLaneTypes;
constexpr double kStepSeconds = 0.5;

inline const char* kSceneSchemaVersion = "1.0";

struct TrajectoryVector {
  Vec2 start{0, 0};
  Vec2 end{0, 0};
  std::vector<double> attrs;  // agent-type one-hot + normalized timestamp

  bool operator==(const TrajectoryVector& o) const {
    return start == o.start && end == o.end && attrs == o.attrs;
  }
};

struct LaneVector {
  Vec2 start{0, 0};
  Vec2 end{0, 0};
  Vec2 predecessor{0, 0};
  std::vector<double> attrs;  // lane-type one-hot

  bool operator==(const LaneVector& o) const {
    return start == o.start && end == o.end && predecessor == o.predecessor && attrs == o.attrs;
  }
};

struct SceneSample {
  std::string scene_id;
  std::uint64_t seed = 0;
  // agents[0] is the target; each agent holds t_h - 1 trajectory vectors.
  std::vector<std::vector<TrajectoryVector>> agents;
  std::vector<std::vector<int>> agent_mask;  // per agent, per vector validity
  std::vector<LaneVector> lanes;
  std::vector<int> lane_mask;
  Mat gt_future;                          // t_f x 2, target-centered meters
  std::vector<std::vector<int>> lane_labels;  // t_f rows, one-hot over lanes

  bool agent_valid(std::size_t i) const {
    for (int m : agent_mask[i])
      if (m) return true;
    return false;
  }
  bool operator==(const SceneSample& o) const;
};

class SceneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raw world-frame inputs prior to vectorization.
struct NormalizedScene {
  std::vector<Mat> agent_positions;  // each t x 2, oldest first
  std::vector<Mat> lane_polylines;   // each p x 2
  Vec2 offset{0, 0};                 // translation that was subtracted
};

// Translates every coordinate so the target agent's most recent observed
// position becomes the origin. No rotation is applied.
NormalizedScene normalize_scene(const std::vector<Mat>& agent_positions,
                                const std::vector<Mat>& lane_polylines, int target_index);

// Consecutive positions become displacement vectors (oldest -> newest).
// type_one_hot has kAgentTypes entries; a normalized timestamp is appended
// per vector.
std::vector<TrajectoryVector> vectorize_trajectory(const Mat& positions,
                                                   const std::vector<double>& type_one_hot);

struct SegmentResult {
  std::vector<LaneVector> vectors;
  int dropped_zero_length = 0;
  int truncated = 0;
};

// Splits polylines into lane vectors with predecessor links. When the total
// exceeds max_vectors, vectors farthest from the origin (by the nearer of
// their two endpoints) are dropped first; surviving vectors keep their
// original order.
SegmentResult segment_lanes(const std::vector<Mat>& polylines,
                            const std::vector<int>& lane_types, int max_vectors);

double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b);

// One-hot rows: for each future step the valid lane vector with minimum
// point-to-segment distance gets 1 (ties break to the lowest lane index).
std::vector<std::vector<int>> label_closest_lane(const std::vector<LaneVector>& lanes,
                                                 const std::vector<int>& lane_mask,
                                                 const Mat& gt_future);

enum class SceneTemplate { straight, left_turn, right_turn, intersection };

SceneTemplate parse_scene_template(const std::string& name);
std::string to_string(SceneTemplate t);

// Deterministic synthetic scene: target follows one lane among >= 2
// candidates, 0-4 neighbors, zero-noise futures lie on the followed
// centerline.
SceneSample generate_synthetic_scene(SceneTemplate tmpl, double noise_scale,
                                     std::uint64_t seed);

class SceneIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_scenes(const std::vector<SceneSample>& samples, const std::string& path);
std::vector<SceneSample> load_scenes(const std::string& path);

std::string scene_to_json_line(const SceneSample& s);
SceneSample scene_from_json_line(const std::string& line);

}  // namespace trajllm
