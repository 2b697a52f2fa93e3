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

#include "trajllm/nn.hpp"
#include "trajllm/scene.hpp"

#include <vector>

namespace trajllm {

struct LaneConfig {
  int dim = 128;
  int layers = 3;       // stacked mamba layers
  int state_dim = 16;   // D' in the state recurrence
  int expand = 2;       // inner width multiplier E
  int conv_width = 4;
  int ffn_mult = 2;
  double dropout = 0.1;
};

// Input-dependent diagonal SSM with a gated output branch.
struct MambaBlock {
  Linear in_m, in_n;            // D -> E*D
  Parameter* conv_kernel = nullptr;  // conv_width x E*D
  Parameter* conv_bias = nullptr;    // 1 x E*D
  Linear b_proj, c_proj;        // E*D -> state_dim
  Parameter* delta_w = nullptr;      // E*D x 1, broadcast across channels
  Parameter* delta_bias = nullptr;   // 1 x E*D
  Parameter* a_log = nullptr;        // E*D x state_dim; A = -exp(a_log)
  Linear out_proj;              // E*D -> D

  MambaBlock() = default;
  MambaBlock(ParamStore& ps, const std::string& prefix, const LaneConfig& cfg,
             std::mt19937_64& rng);
  ad::Var forward(const ad::Var& f_normalized, const std::vector<char>& valid) const;
};

struct MambaLayer {
  MambaBlock block;
  Linear ffn_fc, ffn_out;
  double dropout_rate = 0.1;

  MambaLayer() = default;
  MambaLayer(ParamStore& ps, const std::string& prefix, const LaneConfig& cfg,
             std::mt19937_64& rng);
  ad::Var forward(const ad::Var& f, const std::vector<char>& valid, std::mt19937_64& rng,
                  bool training) const;
};

struct CandidateLaneSet {
  std::vector<int> indices;     // distinct valid lane ids, best first
  std::vector<double> scores;   // matching time-averaged probabilities
  ad::Var features;             // c x D rows in rank order
};

class LaneProbability {
 public:
  LaneProbability(ParamStore& ps, const LaneConfig& cfg, std::mt19937_64& rng);

  // F_l = proj([s_target ; f_tilde_l]); broadcast + concat + 2D->D projection.
  ad::Var build_stream(const ad::Var& s_target, const ad::Var& f_tilde,
                       const std::vector<char>& valid) const;

  // Runs the mamba stack; bumps *layer_calls per layer executed.
  ad::Var forward_states(const ad::Var& stream, const std::vector<char>& valid,
                         std::mt19937_64& rng, bool training,
                         long* layer_calls = nullptr) const;

  // Per-lane head emitting t_f logits (L x t_f).
  ad::Var score_logits(const ad::Var& states) const;

  // Masked softmax across valid lanes, per timestep column.
  static ad::Var scores_to_probs(const ad::Var& logits, const std::vector<char>& valid);

  int layer_count() const { return static_cast<int>(layers_.size()); }

 private:
  LaneConfig cfg_;
  Linear stream_proj_;  // 2D -> D, zero-initialized bias
  std::vector<MambaLayer> layers_;
  Mlp score_head_;      // D -> D -> t_f
};

// Ranks lanes by time-averaged probability (ties to the lower index) and
// gathers the top-c rows of lane_features. c larger than the valid count is
// clamped with a warning flag.
CandidateLaneSet select_top_c(const Mat& probs, const ad::Var& lane_features,
                              const std::vector<char>& valid, int c,
                              bool* clamped = nullptr);

// Sum over timesteps of cross-entropy against one-hot labels over valid
// lanes; probabilities are clamped to [1e-7, 1 - 1e-7].
ad::Var lane_loss(const ad::Var& probs, const std::vector<std::vector<int>>& labels,
                  const std::vector<char>& valid);

}  // namespace trajllm
