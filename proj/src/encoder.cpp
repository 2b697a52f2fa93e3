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

#include "trajllm/encoder.hpp"

#include <stdexcept>

namespace trajllm {

AgentFeatures build_agent_features(const SceneSample& s) {
  const std::size_t n_agents = s.agents.size();
  const std::size_t n_steps = n_agents ? s.agents[0].size() : 0;
  AgentFeatures out;
  out.steps.assign(n_steps, Mat::Zero(static_cast<Eigen::Index>(n_agents), kAgentFeatureDim));
  out.step_valid.assign(n_steps, std::vector<char>(n_agents, 0));
  out.agent_valid.assign(n_agents, 0);
  for (std::size_t a = 0; a < n_agents; ++a) {
    if (s.agents[a].size() != n_steps)
      throw SceneError("build_agent_features: ragged agent history");
    for (std::size_t j = 0; j < n_steps; ++j) {
      const TrajectoryVector& v = s.agents[a][j];
      if (!v.start.allFinite() || !v.end.allFinite())
        throw SceneError("build_agent_features: non-finite input");
      const bool valid = s.agent_mask[a][j] != 0;
      out.step_valid[j][a] = valid;
      out.agent_valid[a] |= valid;
      Mat& row_holder = out.steps[j];
      row_holder(static_cast<Eigen::Index>(a), 0) = v.start.x() * kCoordScale;
      row_holder(static_cast<Eigen::Index>(a), 1) = v.start.y() * kCoordScale;
      row_holder(static_cast<Eigen::Index>(a), 2) = v.end.x() * kCoordScale;
      row_holder(static_cast<Eigen::Index>(a), 3) = v.end.y() * kCoordScale;
      for (std::size_t k = 0; k < v.attrs.size() && k < kAgentAttrDim; ++k)
        row_holder(static_cast<Eigen::Index>(a), 4 + static_cast<Eigen::Index>(k)) =
            v.attrs[k];
    }
  }
  return out;
}

Mat build_lane_features(const SceneSample& s) {
  Mat out = Mat::Zero(static_cast<Eigen::Index>(s.lanes.size()), kLaneFeatureDim);
  for (std::size_t l = 0; l < s.lanes.size(); ++l) {
    const LaneVector& v = s.lanes[l];
    if (!v.start.allFinite() || !v.end.allFinite() || !v.predecessor.allFinite())
      throw SceneError("build_lane_features: non-finite input");
    const Eigen::Index i = static_cast<Eigen::Index>(l);
    out(i, 0) = v.start.x() * kCoordScale;
    out(i, 1) = v.start.y() * kCoordScale;
    out(i, 2) = v.end.x() * kCoordScale;
    out(i, 3) = v.end.y() * kCoordScale;
    out(i, 4) = v.predecessor.x() * kCoordScale;
    out(i, 5) = v.predecessor.y() * kCoordScale;
    for (std::size_t k = 0; k < v.attrs.size() && k < kLaneAttrDim; ++k)
      out(i, 6 + static_cast<Eigen::Index>(k)) = v.attrs[k];
  }
  return out;
}

std::vector<char> lane_valid_mask(const SceneSample& s) {
  std::vector<char> valid(s.lane_mask.size());
  for (std::size_t i = 0; i < s.lane_mask.size(); ++i) valid[i] = s.lane_mask[i] != 0;
  return valid;
}

ContextEncoder::ContextEncoder(ParamStore& ps, const EncoderConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg),
      agent_gru_(ps, "encoder.agent_gru", kAgentFeatureDim, cfg.dim, rng),
      agent_mlp_(ps, "encoder.agent_mlp", cfg.dim, cfg.dim, cfg.dim, rng),
      lane_gru_(ps, "encoder.lane_gru", kLaneFeatureDim, cfg.dim, rng),
      lane_mlp_(ps, "encoder.lane_mlp", cfg.dim, cfg.dim, cfg.dim, rng),
      self_attn_(ps, "encoder.self_attn", cfg.dim, cfg.heads, rng),
      lane_cross_(ps, "encoder.lane_cross", cfg.dim, cfg.heads, rng),
      agent_cross_(ps, "encoder.agent_cross", cfg.dim, cfg.heads, rng),
      glu_value_(ps, "encoder.glu_value", 2 * cfg.dim, cfg.dim, rng),
      glu_gate_(ps, "encoder.glu_gate", 2 * cfg.dim, cfg.dim, rng) {}

ad::Var ContextEncoder::embed_agents(const AgentFeatures& feats) const {
  using namespace ad;
  const Eigen::Index n = feats.steps.empty() ? 0 : feats.steps[0].rows();
  Var h = constant(Mat::Zero(n, cfg_.dim));
  for (std::size_t j = 0; j < feats.steps.size(); ++j) {
    if (!all_finite(feats.steps[j]))
      throw std::invalid_argument("embed_agents: non-finite input");
    Var x = constant(feats.steps[j]);
    Var next = agent_gru_.step(x, h);
    // carry the previous hidden state where this step's vector is invalid
    Mat m = Mat::Zero(n, cfg_.dim);
    for (Eigen::Index a = 0; a < n; ++a)
      if (feats.step_valid[j][static_cast<std::size_t>(a)]) m.row(a).setOnes();
    Var mask = constant(m);
    Var inv = constant(Mat::Ones(n, cfg_.dim) - m);
    h = add(mul(mask, next), mul(inv, h));
  }
  Var out = agent_mlp_.forward(h);
  return zero_masked_rows(out, feats.agent_valid);
}

ad::Var ContextEncoder::embed_lanes(const ad::Var& lane_feats,
                                    const std::vector<char>& valid) const {
  if (!all_finite(lane_feats->val))
    throw std::invalid_argument("embed_lanes: non-finite input");
  ad::Var h0 = ad::constant(Mat::Zero(lane_feats->val.rows(), cfg_.dim));
  ad::Var h = lane_gru_.step(lane_feats, h0);
  return ad::zero_masked_rows(lane_mlp_.forward(h), valid);
}

FusionOut ContextEncoder::fuse(const ad::Var& h, const ad::Var& f,
                               const std::vector<char>& agent_valid,
                               const std::vector<char>& lane_valid) const {
  using namespace ad;
  if (!all_finite(h->val) || !all_finite(f->val))
    throw std::invalid_argument("fuse: non-finite input");
  bool any_agent = false;
  for (char v : agent_valid) any_agent |= (v != 0);
  if (!any_agent) throw std::invalid_argument("fuse: needs at least one valid agent");

  // agent-agent self-attention then gated fusion
  Var h_self = self_attn_.forward(h, h, agent_valid);
  Var cat = concat_cols({h, h_self});
  Var gated = mul(glu_value_.forward(cat), sigmoid(glu_gate_.forward(cat)));
  Var h_tilde = cfg_.glu_residual ? add(gated, h) : gated;
  h_tilde = zero_masked_rows(h_tilde, agent_valid);

  // lane update from agents, then agent update from lanes
  Var f_tilde = add(f, lane_cross_.forward(f, h_tilde, agent_valid));
  f_tilde = zero_masked_rows(f_tilde, lane_valid);
  h_tilde = add(h_tilde, agent_cross_.forward(h_tilde, f_tilde, lane_valid));
  h_tilde = zero_masked_rows(h_tilde, agent_valid);

  FusionOut out;
  out.h_tilde = h_tilde;
  out.f_tilde = f_tilde;
  out.joint = concat_rows({h_tilde, f_tilde});
  out.token_mask = agent_valid;
  out.token_mask.insert(out.token_mask.end(), lane_valid.begin(), lane_valid.end());
  return out;
}

}  // namespace trajllm
