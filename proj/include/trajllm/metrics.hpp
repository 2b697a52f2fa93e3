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

#include "trajllm/decoder.hpp"

#include <string>
#include <vector>

namespace trajllm {

struct MetricsReport {
  double min_ade = 0.0;
  double min_fde = 0.0;
  double miss_rate = 0.0;
  std::size_t sample_count = 0;
  int k_modes = 0;

  std::string to_json() const;
};

// Best mode by mean-over-time L2 distance.
double min_ade(const TrajectoryMixture& mixture, const Mat& gt_future);

// Best mode by final-position L2 distance.
double min_fde(const TrajectoryMixture& mixture, const Mat& gt_future);

// Fraction of samples whose best endpoint error strictly exceeds 2.0 m.
double miss_rate(const std::vector<TrajectoryMixture>& mixtures,
                 const std::vector<Mat>& gt_futures);

constexpr double kMissThresholdMeters = 2.0;

MetricsReport aggregate_metrics(const std::vector<TrajectoryMixture>& mixtures,
                                const std::vector<Mat>& gt_futures, int k_modes);

}  // namespace trajllm
