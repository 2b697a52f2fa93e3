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

#include "trajllm/lane.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace trajllm {

MambaBlock::MambaBlock(ParamStore& ps, const std::string& prefix, const LaneConfig& cfg,
                       std::mt19937_64& rng)
    : in_m(ps, prefix + ".in_m", cfg.dim, cfg.expand * cfg.dim, rng),
      in_n(ps, prefix + ".in_n", cfg.dim, cfg.expand * cfg.dim, rng),
      b_proj(ps, prefix + ".b_proj", cfg.expand * cfg.dim, cfg.state_dim, rng),
      c_proj(ps, prefix + ".c_proj", cfg.expand * cfg.dim, cfg.state_dim, rng),
      out_proj(ps, prefix + ".out_proj", cfg.expand * cfg.dim, cfg.dim, rng) {
  const Eigen::Index inner = cfg.expand * cfg.dim;
  conv_kernel = ps.create(prefix + ".conv_kernel", cfg.conv_width, inner);
  conv_bias = ps.create(prefix + ".conv_bias", 1, inner);
  conv_kernel->value = rand_uniform(rng, cfg.conv_width, inner,
                                    1.0 / std::sqrt(static_cast<double>(cfg.conv_width)));
  delta_w = ps.create(prefix + ".delta_w", inner, 1);
  delta_w->value = rand_uniform(rng, inner, 1, 1.0 / std::sqrt(static_cast<double>(inner)));
  delta_bias = ps.create(prefix + ".delta_bias", 1, inner);
  // softplus(bias) lands in [1e-3, 1e-1]
  std::uniform_real_distribution<double> dt(std::log(1e-3), std::log(1e-1));
  for (Eigen::Index i = 0; i < inner; ++i) {
    const double target = std::exp(dt(rng));
    delta_bias->value(0, i) = std::log(std::expm1(target));
  }
  a_log = ps.create(prefix + ".a_log", inner, cfg.state_dim);
  for (Eigen::Index i = 0; i < inner; ++i)
    for (Eigen::Index s = 0; s < cfg.state_dim; ++s)
      a_log->value(i, s) = std::log(static_cast<double>(s + 1));
}

ad::Var MambaBlock::forward(const ad::Var& f_normalized,
                            const std::vector<char>& valid) const {
  using namespace ad;
  Var m = zero_masked_rows(in_m.forward(f_normalized), valid);
  Var n = zero_masked_rows(in_n.forward(f_normalized), valid);
  Var m_conv = silu(causal_depthwise_conv1d(m, leaf(*conv_kernel), leaf(*conv_bias)));
  Var b_in = b_proj.forward(m_conv);
  Var c_in = c_proj.forward(m_conv);
  Var d_lin = repeat_cols(matmul(m_conv, leaf(*delta_w)), conv_bias->value.cols());
  Var delta = softplus(add_rowvec(d_lin, leaf(*delta_bias)));
  Var a_mat = neg(exp_op(leaf(*a_log)));
  Var q = selective_ssm_scan(m_conv, delta, b_in, c_in, a_mat);
  Var gated = mul(q, silu(n));
  return zero_masked_rows(out_proj.forward(gated), valid);
}

MambaLayer::MambaLayer(ParamStore& ps, const std::string& prefix, const LaneConfig& cfg,
                       std::mt19937_64& rng)
    : block(ps, prefix + ".block", cfg, rng),
      ffn_fc(ps, prefix + ".ffn_fc", cfg.dim, cfg.ffn_mult * cfg.dim, rng),
      ffn_out(ps, prefix + ".ffn_out", cfg.ffn_mult * cfg.dim, cfg.dim, rng),
      dropout_rate(cfg.dropout) {}

ad::Var MambaLayer::forward(const ad::Var& f, const std::vector<char>& valid,
                            std::mt19937_64& rng, bool training) const {
  using namespace ad;
  Var q = block.forward(instance_norm(f, valid), valid);
  Var q_tilde = add(instance_norm(dropout(q, dropout_rate, rng, training), valid), f);
  Var ffn = ffn_out.forward(relu(ffn_fc.forward(q_tilde)));
  ffn = zero_masked_rows(ffn, valid);
  return add(instance_norm(dropout(ffn, dropout_rate, rng, training), valid), q_tilde);
}

LaneProbability::LaneProbability(ParamStore& ps, const LaneConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg),
      stream_proj_(ps, "lane.stream_proj", 2 * cfg.dim, cfg.dim, rng),
      score_head_(ps, "lane.score_head", cfg.dim, cfg.dim, kFutureSteps, rng) {
  layers_.reserve(static_cast<std::size_t>(cfg.layers));
  for (int i = 0; i < cfg.layers; ++i)
    layers_.emplace_back(ps, "lane.layer." + std::to_string(i), cfg, rng);
}

ad::Var LaneProbability::build_stream(const ad::Var& s_target, const ad::Var& f_tilde,
                                      const std::vector<char>& valid) const {
  using namespace ad;
  if (!all_finite(s_target->val) || !all_finite(f_tilde->val))
    throw std::invalid_argument("build_stream: non-finite input");
  Var broadcast = repeat_rows(s_target, f_tilde->val.rows());
  Var stream = stream_proj_.forward(concat_cols({broadcast, f_tilde}));
  return zero_masked_rows(stream, valid);
}

ad::Var LaneProbability::forward_states(const ad::Var& stream,
                                        const std::vector<char>& valid,
                                        std::mt19937_64& rng, bool training,
                                        long* layer_calls) const {
  ad::Var s = stream;
  for (const auto& layer : layers_) {
    s = layer.forward(s, valid, rng, training);
    if (layer_calls != nullptr) ++(*layer_calls);
  }
  return s;
}

ad::Var LaneProbability::score_logits(const ad::Var& states) const {
  return score_head_.forward(states);
}

ad::Var LaneProbability::scores_to_probs(const ad::Var& logits,
                                         const std::vector<char>& valid) {
  bool any = false;
  for (char v : valid) any |= (v != 0);
  if (!any) throw std::invalid_argument("lane scores: all lanes masked");
  // softmax across lanes for each timestep column
  ad::Var by_time = ad::transpose(logits);  // t_f x L
  Mat allow = Mat::Zero(by_time->val.rows(), by_time->val.cols());
  for (Eigen::Index t = 0; t < allow.rows(); ++t)
    for (Eigen::Index l = 0; l < allow.cols(); ++l)
      if (valid[static_cast<std::size_t>(l)]) allow(t, l) = 1.0;
  return ad::transpose(ad::masked_softmax_rows(by_time, allow));
}

CandidateLaneSet select_top_c(const Mat& probs, const ad::Var& lane_features,
                              const std::vector<char>& valid, int c, bool* clamped) {
  if (c < 1) throw std::invalid_argument("select_top_c: c must be positive");
  std::vector<int> candidates;
  for (std::size_t l = 0; l < valid.size(); ++l)
    if (valid[l]) candidates.push_back(static_cast<int>(l));
  if (candidates.empty()) throw std::invalid_argument("select_top_c: no valid lanes");
  if (clamped != nullptr) *clamped = c > static_cast<int>(candidates.size());
  c = std::min(c, static_cast<int>(candidates.size()));

  std::vector<double> mean_score(valid.size(), 0.0);
  for (int l : candidates)
    mean_score[static_cast<std::size_t>(l)] = probs.row(l).mean();
  std::stable_sort(candidates.begin(), candidates.end(), [&](int a, int b) {
    return mean_score[static_cast<std::size_t>(a)] > mean_score[static_cast<std::size_t>(b)];
  });

  CandidateLaneSet out;
  std::vector<ad::Var> rows;
  for (int i = 0; i < c; ++i) {
    const int l = candidates[static_cast<std::size_t>(i)];
    out.indices.push_back(l);
    out.scores.push_back(mean_score[static_cast<std::size_t>(l)]);
    rows.push_back(ad::slice_rows(lane_features, l, 1));
  }
  out.features = ad::concat_rows(rows);
  return out;
}

ad::Var lane_loss(const ad::Var& probs, const std::vector<std::vector<int>>& labels,
                  const std::vector<char>& valid) {
  const Eigen::Index t_f = probs->val.cols();
  if (static_cast<Eigen::Index>(labels.size()) != t_f)
    throw std::invalid_argument("lane_loss: label row count mismatch");
  std::vector<int> target(static_cast<std::size_t>(t_f), -1);
  for (std::size_t t = 0; t < labels.size(); ++t) {
    for (std::size_t l = 0; l < labels[t].size(); ++l) {
      if (labels[t][l] != 1) continue;
      if (!valid[l]) throw std::invalid_argument("lane_loss: label on masked lane");
      target[t] = static_cast<int>(l);
    }
    if (target[t] < 0) throw std::invalid_argument("lane_loss: missing label");
  }
  ad::Var picked = ad::gather_rows_per_col(probs, target);
  return ad::neg(ad::sum_all(ad::log_op(ad::clamp(picked, 1e-7, 1.0 - 1e-7))));
}

}  // namespace trajllm
