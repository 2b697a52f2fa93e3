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

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

using namespace trajllm;

namespace {

Mat circle_positions(int n) {
  Mat p(n, 2);
  for (int i = 0; i < n; ++i) {
    const double a = 2.0 * M_PI * i / n;
    p(i, 0) = 10.0 * std::cos(a);
    p(i, 1) = 10.0 * std::sin(a);
  }
  return p;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("normalize_scene centers the target's last observed position") {
  Mat target(4, 2);
  target << 2, 1, 3, 2, 4, 2.5, 5, 3;
  Mat neighbor(4, 2);
  neighbor << 6, 3, 6.5, 3, 7, 3, 7, 3;
  Mat lane(3, 2);
  lane << 0, 0, 5, 0, 10, 0;

  auto norm = normalize_scene({target, neighbor}, {lane}, 0);
  CHECK(norm.agent_positions[0](3, 0) == 0.0);
  CHECK(norm.agent_positions[0](3, 1) == 0.0);
  // neighbor at (7,3) with target last at (5,3) -> (2,0)
  CHECK(norm.agent_positions[1](3, 0) == doctest::Approx(2.0));
  CHECK(norm.agent_positions[1](3, 1) == doctest::Approx(0.0));

  // elementwise subtraction oracle over every point
  for (std::size_t a = 0; a < 2; ++a) {
    const Mat& before = (a == 0) ? target : neighbor;
    for (Eigen::Index i = 0; i < before.rows(); ++i)
      for (Eigen::Index j = 0; j < 2; ++j)
        CHECK(norm.agent_positions[a](i, j) ==
              doctest::Approx(before(i, j) - target(3, j)));
  }
  for (Eigen::Index i = 0; i < lane.rows(); ++i)
    for (Eigen::Index j = 0; j < 2; ++j)
      CHECK(norm.lane_polylines[0](i, j) == doctest::Approx(lane(i, j) - target(3, j)));
}

TEST_CASE("normalize_scene is the identity on an already-centered scene") {
  Mat target(4, 2);
  target << -3, 0, -2, 0, -1, 0, 0, 0;
  auto norm = normalize_scene({target}, {}, 0);
  CHECK((norm.agent_positions[0].array() == target.array()).all());
}

TEST_CASE("normalize_scene rejects short target history") {
  Mat target(2, 2);
  target << 0, 0, 1, 1;
  CHECK_THROWS_AS(normalize_scene({target}, {}, 0), SceneError);
}

TEST_CASE("vectorize_trajectory produces t-1 ordered vectors") {
  Mat p(4, 2);
  p << 0, 0, 1, 0, 2, 0, 3, 0;
  auto vecs = vectorize_trajectory(p, {1, 0, 0, 0});
  CHECK(vecs.size() == 3);

  Mat two(2, 2);
  two << 0, 0, 1, 0;
  auto one = vectorize_trajectory(two, {1, 0, 0, 0});
  CHECK(one.size() == 1);
  CHECK(one[0].start == Vec2(0, 0));
  CHECK(one[0].end == Vec2(1, 0));

  // index-pairing oracle on a circle
  Mat circ = circle_positions(4);
  auto cv = vectorize_trajectory(circ, {0, 1, 0, 0});
  for (std::size_t j = 0; j < cv.size(); ++j) {
    CHECK(cv[j].start == Vec2(circ.row(static_cast<Eigen::Index>(j)).transpose()));
    CHECK(cv[j].end == Vec2(circ.row(static_cast<Eigen::Index>(j + 1)).transpose()));
  }

  Mat single(1, 2);
  single << 0, 0;
  CHECK_THROWS_AS(vectorize_trajectory(single, {1, 0, 0, 0}), SceneError);
}

TEST_CASE("segment_lanes splits polylines with predecessor links") {
  Mat poly(3, 2);
  poly << 0, 0, 1, 0, 2, 0;
  auto res = segment_lanes({poly}, {0}, 64);
  CHECK(res.vectors.size() == 2);
  CHECK(res.vectors[0].predecessor == res.vectors[0].start);
  CHECK(res.vectors[1].predecessor == res.vectors[0].start);

  Mat two(2, 2);
  two << 3, 1, 4, 1;
  auto one = segment_lanes({two}, {1}, 64);
  CHECK(one.vectors.size() == 1);
  CHECK(one.vectors[0].predecessor == one.vectors[0].start);
}

TEST_CASE("segment_lanes drops zero-length segments") {
  Mat poly(4, 2);
  poly << 0, 0, 1, 0, 1, 0, 2, 0;  // repeated point
  auto res = segment_lanes({poly}, {0}, 64);
  CHECK(res.dropped_zero_length == 1);
  CHECK(res.vectors.size() == 2);
  for (const auto& v : res.vectors) CHECK((v.end - v.start).norm() > 0.0);
}

TEST_CASE("segment_lanes truncates farthest-from-origin vectors first") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uni(-40.0, 40.0);
  std::vector<Mat> polys;
  std::vector<int> types;
  for (int l = 0; l < 5; ++l) {
    Mat poly(10, 2);
    double x = uni(rng), y = uni(rng);
    for (int i = 0; i < 10; ++i) {
      poly(i, 0) = x + 3.0 * i;
      poly(i, 1) = y;
    }
    polys.push_back(poly);
    types.push_back(0);
  }
  auto res = segment_lanes(polys, types, 32);
  CHECK(res.vectors.size() == 32);
  CHECK(res.truncated == 45 - 32);

  // distance-sort oracle: recompute the full set and keep the 32 nearest
  auto full = segment_lanes(polys, types, 1000);
  std::vector<double> dist;
  for (const auto& v : full.vectors)
    dist.push_back(std::min(v.start.norm(), v.end.norm()));
  std::vector<std::size_t> order(full.vectors.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
  std::vector<LaneVector> expect;
  std::vector<char> keep(full.vectors.size(), 0);
  for (int i = 0; i < 32; ++i) keep[order[static_cast<std::size_t>(i)]] = 1;
  for (std::size_t i = 0; i < full.vectors.size(); ++i)
    if (keep[i]) expect.push_back(full.vectors[i]);
  CHECK(res.vectors == expect);
}

TEST_CASE("label_closest_lane assigns one-hot rows with tie-break") {
  std::vector<LaneVector> lanes(5);
  for (int i = 0; i < 5; ++i) {
    lanes[static_cast<std::size_t>(i)].start = Vec2(i * 10.0, 5.0);
    lanes[static_cast<std::size_t>(i)].end = Vec2(i * 10.0 + 5.0, 5.0);
  }
  std::vector<int> mask(5, 1);
  Mat gt(1, 2);
  gt << 30.0, 5.0;  // coincides with lane 3's start
  auto labels = label_closest_lane(lanes, mask, gt);
  CHECK(labels[0][3] == 1);
  CHECK(std::accumulate(labels[0].begin(), labels[0].end(), 0) == 1);

  // two lanes exactly equidistant -> lower index wins
  std::vector<LaneVector> pair(2);
  pair[0].start = Vec2(0, 1);
  pair[0].end = Vec2(5, 1);
  pair[1].start = Vec2(0, -1);
  pair[1].end = Vec2(5, -1);
  Mat mid(1, 2);
  mid << 2.5, 0.0;
  auto tie = label_closest_lane(pair, {1, 1}, mid);
  CHECK(tie[0][0] == 1);
  CHECK(tie[0][1] == 0);

  CHECK_THROWS_AS(label_closest_lane(pair, {0, 0}, mid), SceneError);
}

TEST_CASE("label_closest_lane matches a brute-force distance scan") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> uni(-20.0, 20.0);
  std::vector<LaneVector> lanes(8);
  for (auto& l : lanes) {
    l.start = Vec2(uni(rng), uni(rng));
    l.end = l.start + Vec2(uni(rng) * 0.2 + 1.0, uni(rng) * 0.2);
  }
  std::vector<int> mask(8, 1);
  mask[5] = 0;
  Mat gt(12, 2);
  for (Eigen::Index t = 0; t < 12; ++t) {
    gt(t, 0) = uni(rng);
    gt(t, 1) = uni(rng);
  }
  auto labels = label_closest_lane(lanes, mask, gt);
  for (Eigen::Index t = 0; t < 12; ++t) {
    int best = -1;
    double best_d = 1e300;
    for (int l = 0; l < 8; ++l) {
      if (!mask[static_cast<std::size_t>(l)]) continue;
      const double d = point_segment_distance(gt.row(t).transpose(),
                                              lanes[static_cast<std::size_t>(l)].start,
                                              lanes[static_cast<std::size_t>(l)].end);
      if (d < best_d) {
        best_d = d;
        best = l;
      }
    }
    for (int l = 0; l < 8; ++l)
      CHECK(labels[static_cast<std::size_t>(t)][static_cast<std::size_t>(l)] ==
            ((l == best) ? 1 : 0));
  }
}

TEST_CASE("label_closest_lane is permutation-consistent") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> uni(-20.0, 20.0);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<LaneVector> lanes(6);
    for (auto& l : lanes) {
      l.start = Vec2(uni(rng), uni(rng));
      l.end = l.start + Vec2(1.0 + std::abs(uni(rng)) * 0.1, uni(rng) * 0.1);
    }
    std::vector<int> mask(6, 1);
    Mat gt(4, 2);
    for (Eigen::Index t = 0; t < 4; ++t) {
      gt(t, 0) = uni(rng);
      gt(t, 1) = uni(rng);
    }
    auto base = label_closest_lane(lanes, mask, gt);

    // random-ish ties are measure zero here; permute and compare columns
    std::vector<std::size_t> perm = {3, 1, 5, 0, 4, 2};
    std::vector<LaneVector> permuted(6);
    for (std::size_t i = 0; i < 6; ++i) permuted[i] = lanes[perm[i]];
    auto shuffled = label_closest_lane(permuted, mask, gt);
    for (std::size_t t = 0; t < 4; ++t)
      for (std::size_t i = 0; i < 6; ++i)
        CHECK(shuffled[t][i] == base[t][perm[i]]);
  }
}

TEST_CASE("generate_synthetic_scene is deterministic") {
  auto a = generate_synthetic_scene(SceneTemplate::straight, 0.0, 7);
  auto b = generate_synthetic_scene(SceneTemplate::straight, 0.0, 7);
  CHECK(a == b);
  CHECK(a.scene_id == "straight-7");
  CHECK(a.agents.size() >= 1);
  CHECK(a.lanes.size() >= 2);
  CHECK(a.lanes.size() <= kMaxLaneVectors);
}

TEST_CASE("zero-noise straight scenes have collinear futures") {
  for (std::uint64_t seed : {1ULL, 7ULL, 23ULL, 99ULL}) {
    auto s = generate_synthetic_scene(SceneTemplate::straight, 0.0, seed);
    // target's last observed position is the origin
    CHECK(s.agents[0].back().end.norm() == 0.0);
    // future lies on the followed straight lane: all cross products vanish
    const Vec2 d0 = (s.gt_future.row(1) - s.gt_future.row(0)).transpose();
    for (Eigen::Index t = 2; t < s.gt_future.rows(); ++t) {
      const Vec2 dt = (s.gt_future.row(t) - s.gt_future.row(0)).transpose();
      CHECK(std::abs(d0.x() * dt.y() - d0.y() * dt.x()) / dt.norm() < 1e-9);
    }
  }
}

TEST_CASE("synthetic futures stay within half a meter of some lane") {
  for (auto tmpl : {SceneTemplate::straight, SceneTemplate::left_turn,
                    SceneTemplate::right_turn, SceneTemplate::intersection}) {
    for (std::uint64_t seed : {3ULL, 11ULL, 42ULL}) {
      auto s = generate_synthetic_scene(tmpl, 0.1, seed);
      for (Eigen::Index t = 0; t < s.gt_future.rows(); ++t) {
        double best = 1e300;
        for (const auto& l : s.lanes)
          best = std::min(best, point_segment_distance(s.gt_future.row(t).transpose(),
                                                       l.start, l.end));
        CHECK(best < 0.5);
      }
    }
  }
}

TEST_CASE("generator labels agree with label_closest_lane recomputation") {
  auto s = generate_synthetic_scene(SceneTemplate::left_turn, 0.1, 3);
  auto relabeled = label_closest_lane(s.lanes, s.lane_mask, s.gt_future);
  CHECK(relabeled == s.lane_labels);
}

TEST_CASE("scene file round-trip is the identity") {
  std::vector<SceneSample> samples;
  for (std::uint64_t i = 0; i < 10; ++i)
    samples.push_back(generate_synthetic_scene(SceneTemplate::intersection, 0.05, i));
  const std::string path = temp_path("trajllm_scene_roundtrip.jsonl");
  save_scenes(samples, path);
  auto loaded = load_scenes(path);
  REQUIRE(loaded.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) CHECK(loaded[i] == samples[i]);

  // rerun produces a byte-identical file
  std::ifstream f1(path);
  std::string before((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  save_scenes(samples, path);
  std::ifstream f2(path);
  std::string after((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(before == after);
  std::remove(path.c_str());
}

TEST_CASE("scene file loader rejects version mismatches and malformed records") {
  auto sample = generate_synthetic_scene(SceneTemplate::straight, 0.0, 1);
  std::string line = scene_to_json_line(sample);
  const std::string path = temp_path("trajllm_scene_bad.jsonl");
  {
    std::ofstream out(path);
    std::string old_version = line;
    const auto pos = old_version.find("\"1.0\"");
    REQUIRE(pos != std::string::npos);
    old_version.replace(pos, 5, "\"0.0\"");
    out << line << "\n" << old_version << "\n";
  }
  CHECK_THROWS_WITH_AS(static_cast<void>(load_scenes(path)),
                       doctest::Contains("record 1"), SceneIoError);
  {
    std::ofstream out(path);
    out << line << "\n{not json\n";
  }
  CHECK_THROWS_WITH_AS(static_cast<void>(load_scenes(path)),
                       doctest::Contains("record 1"), SceneIoError);
  std::remove(path.c_str());
}

TEST_CASE("large scene files load with correct counts") {
  std::vector<SceneSample> samples;
  samples.reserve(1000);
  for (std::uint64_t i = 0; i < 1000; ++i)
    samples.push_back(generate_synthetic_scene(
        static_cast<SceneTemplate>(i % 4), 0.02, i));
  const std::string path = temp_path("trajllm_scene_1000.jsonl");
  save_scenes(samples, path);
  auto loaded = load_scenes(path);
  REQUIRE(loaded.size() == 1000);
  for (std::size_t i : {0UL, 217UL, 512UL, 711UL, 999UL}) CHECK(loaded[i] == samples[i]);
  std::remove(path.c_str());
}

TEST_CASE("unknown template names are rejected") {
  CHECK_THROWS_AS(parse_scene_template("zigzag"), SceneError);
  CHECK(parse_scene_template("left_turn") == SceneTemplate::left_turn);
}
