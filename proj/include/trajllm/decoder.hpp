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

// K-mode Laplace mixture over future positions. mu and b are stored as
// K x (t_f * 2) with (x, y) interleaved per timestep.
struct TrajectoryMixture {
  Eigen::VectorXd pi;
  Mat mu;
  Mat b;

  int modes() const { return static_cast<int>(pi.size()); }
  Vec2 location(int k, int t) const { return {mu(k, 2 * t), mu(k, 2 * t + 1)}; }
  Vec2 scale(int k, int t) const { return {b(k, 2 * t), b(k, 2 * t + 1)}; }
};

struct DecoderConfig {
  int dim = 128;
  int heads = 8;
  int k_modes = 5;
  int latent_dim = 16;
  int mode_embed_dim = 32;
  int head_hidden = 128;
};

struct DecoderOut {
  ad::Var pi;  // 1 x K
  ad::Var mu;  // K x (t_f*2)
  ad::Var b;   // K x (t_f*2)
};

class LaplaceDecoder {
 public:
  LaplaceDecoder(ParamStore& ps, const DecoderConfig& cfg, std::mt19937_64& rng);

  // Target token attends over the candidate lane features, residual added.
  ad::Var lane_guided_attention(const ad::Var& s_target, const ad::Var& candidates) const;

  // Rows: [g_target ; s_tilde ; latent ; mode_embedding_k] for each mode.
  ad::Var assemble_input(const ad::Var& g_target, const ad::Var& s_tilde,
                         const Mat& latent) const;

  DecoderOut decode(const ad::Var& e) const;

  // Standard normal latent draw; zeroed when sampling is disabled.
  Mat sample_latent(std::mt19937_64& rng, bool stochastic) const;

  const DecoderConfig& config() const { return cfg_; }

 private:
  DecoderConfig cfg_;
  MultiheadAttention guide_;
  Parameter* mode_embeddings_ = nullptr;  // K x mode_embed_dim
  Mlp pi_head_;   // e -> 1 logit per mode
  Mlp mu_head_;   // e -> t_f*2
  Mlp b_head_;    // e -> t_f*2, softplus + 1e-3 floor applied outside the MLP
};

// Mean-over-time Laplace negative log likelihood, summed over both axes:
// (1/t_f) * sum_t sum_axis [ log(2 b) + |y - mu| / b ].
ad::Var laplace_nll(const ad::Var& mu_row, const ad::Var& b_row, const Mat& gt_row);

struct WtaResult {
  ad::Var loss;
  int k_star = 0;
};

// k* minimizes the summed per-step L2 error (ties to the lowest index);
// gradients flow only through mode k*.
WtaResult wta_regression_loss(const DecoderOut& out, const Mat& gt_future);

int wta_best_mode(const Mat& mu, const Mat& gt_future);

ad::Var mode_classification_loss(const ad::Var& pi, int k_star);

ad::Var total_loss(const ad::Var& lane, const ad::Var& reg, const ad::Var& cls,
                   double lambda_lane);
double total_loss(double lane, double reg, double cls, double lambda_lane);

// Flattens gt (t_f x 2) into the interleaved row layout used by mu/b.
Mat flatten_future(const Mat& gt_future);

TrajectoryMixture extract_mixture(const DecoderOut& out);

}  // namespace trajllm
