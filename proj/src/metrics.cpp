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

#include "trajllm/metrics.hpp"

#include "json.hpp"

#include <cmath>
#include <stdexcept>

namespace trajllm {

double min_ade(const TrajectoryMixture& mixture, const Mat& gt_future) {
  const Eigen::Index t_f = gt_future.rows();
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < mixture.modes(); ++k) {
    double sum = 0.0;
    for (Eigen::Index t = 0; t < t_f; ++t)
      sum += (mixture.location(k, static_cast<int>(t)) -
              Vec2(gt_future.row(t).transpose()))
                 .norm();
    best = std::min(best, sum / static_cast<double>(t_f));
  }
  return best;
}

double min_fde(const TrajectoryMixture& mixture, const Mat& gt_future) {
  const int last = static_cast<int>(gt_future.rows()) - 1;
  double best = std::numeric_limits<double>::infinity();
  for (int k = 0; k < mixture.modes(); ++k)
    best = std::min(best, (mixture.location(k, last) -
                           Vec2(gt_future.row(last).transpose()))
                              .norm());
  return best;
}

double miss_rate(const std::vector<TrajectoryMixture>& mixtures,
                 const std::vector<Mat>& gt_futures) {
  if (mixtures.empty()) throw std::invalid_argument("miss_rate: empty sample set");
  if (mixtures.size() != gt_futures.size())
    throw std::invalid_argument("miss_rate: size mismatch");
  std::size_t misses = 0;
  for (std::size_t i = 0; i < mixtures.size(); ++i)
    if (min_fde(mixtures[i], gt_futures[i]) > kMissThresholdMeters) ++misses;
  return static_cast<double>(misses) / static_cast<double>(mixtures.size());
}

MetricsReport aggregate_metrics(const std::vector<TrajectoryMixture>& mixtures,
                                const std::vector<Mat>& gt_futures, int k_modes) {
  MetricsReport rep;
  rep.sample_count = mixtures.size();
  rep.k_modes = k_modes;
  if (mixtures.empty()) throw std::invalid_argument("aggregate_metrics: empty sample set");
  double ade = 0.0, fde = 0.0;
  for (std::size_t i = 0; i < mixtures.size(); ++i) {
    ade += min_ade(mixtures[i], gt_futures[i]);
    fde += min_fde(mixtures[i], gt_futures[i]);
  }
  rep.min_ade = ade / static_cast<double>(mixtures.size());
  rep.min_fde = fde / static_cast<double>(mixtures.size());
  rep.miss_rate = miss_rate(mixtures, gt_futures);
  return rep;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["min_ade"] = min_ade;
  j["min_fde"] = min_fde;
  j["miss_rate"] = miss_rate;
  j["sample_count"] = sample_count;
  j["k_modes"] = k_modes;
  return j.dump();
}

}  // namespace trajllm
