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

// Feature layout per trajectory vector: [start, end, attrs] (2+2+5).
// Feature layout per lane vector: [start, end, predecessor, attrs] (2+2+2+3).
constexpr int kAgentFeatureDim = 4 + kAgentAttrDim;
constexpr int kLaneFeatureDim = 6 + kLaneAttrDim;

// Coordinates are divided by this before entering the embedders; scenes span
// tens of meters and the recurrent cells saturate on raw inputs.
constexpr double kCoordScale = 0.1;

struct EncoderConfig {
  int dim = 128;
  int heads = 8;
  bool glu_residual = true;
};

struct AgentFeatures {
  // One matrix per history step, rows are agents; step_valid marks which
  // agents have a valid vector at that step.
  std::vector<Mat> steps;
  std::vector<std::vector<char>> step_valid;
  std::vector<char> agent_valid;
};

AgentFeatures build_agent_features(const SceneSample& s);
Mat build_lane_features(const SceneSample& s);
std::vector<char> lane_valid_mask(const SceneSample& s);

struct FusionOut {
  ad::Var h_tilde;  // (N+1) x D
  ad::Var f_tilde;  // L x D
  ad::Var joint;    // (N+1+L) x D, agent tokens first
  std::vector<char> token_mask;
};

class ContextEncoder {
 public:
  ContextEncoder(ParamStore& ps, const EncoderConfig& cfg, std::mt19937_64& rng);

  // GRU over each agent's vector sequence followed by an MLP; masked agents
  // produce zero rows.
  ad::Var embed_agents(const AgentFeatures& feats) const;

  // Same embedding family with separate weights; each lane vector is a
  // length-one sequence.
  ad::Var embed_lanes(const ad::Var& lane_feats, const std::vector<char>& valid) const;

  FusionOut fuse(const ad::Var& h, const ad::Var& f, const std::vector<char>& agent_valid,
                 const std::vector<char>& lane_valid) const;

  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  GruCell agent_gru_;
  Mlp agent_mlp_;
  GruCell lane_gru_;
  Mlp lane_mlp_;
  MultiheadAttention self_attn_;
  MultiheadAttention lane_cross_;
  MultiheadAttention agent_cross_;
  Linear glu_value_;  // 2D -> D
  Linear glu_gate_;   // 2D -> D
};

}  // namespace trajllm
