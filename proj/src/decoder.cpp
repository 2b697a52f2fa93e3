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

#include "trajllm/decoder.hpp"

#include <cmath>
#include <stdexcept>

namespace trajllm {

LaplaceDecoder::LaplaceDecoder(ParamStore& ps, const DecoderConfig& cfg,
                               std::mt19937_64& rng)
    : cfg_(cfg), guide_(ps, "decoder.guide", cfg.dim, cfg.heads, rng) {
  mode_embeddings_ = ps.create("decoder.mode_embeddings", cfg.k_modes, cfg.mode_embed_dim);
  mode_embeddings_->value = rand_normal(rng, cfg.k_modes, cfg.mode_embed_dim, 1.0);
  const Eigen::Index e_dim = 2 * cfg.dim + cfg.latent_dim + cfg.mode_embed_dim;
  pi_head_ = Mlp(ps, "decoder.pi_head", e_dim, cfg.head_hidden, 1, rng);
  mu_head_ = Mlp(ps, "decoder.mu_head", e_dim, cfg.head_hidden, kFutureSteps * 2, rng);
  b_head_ = Mlp(ps, "decoder.b_head", e_dim, cfg.head_hidden, kFutureSteps * 2, rng);
}

ad::Var LaplaceDecoder::lane_guided_attention(const ad::Var& s_target,
                                              const ad::Var& candidates) const {
  if (candidates->val.rows() < 1)
    throw std::invalid_argument("lane_guided_attention: empty candidate set");
  std::vector<char> all_valid(static_cast<std::size_t>(candidates->val.rows()), 1);
  return ad::add(s_target, guide_.forward(s_target, candidates, all_valid));
}

ad::Var LaplaceDecoder::assemble_input(const ad::Var& g_target, const ad::Var& s_tilde,
                                       const Mat& latent) const {
  using namespace ad;
  if (latent.rows() != 1 || latent.cols() != cfg_.latent_dim)
    throw std::invalid_argument("assemble_input: latent shape mismatch");
  Var shared = concat_cols({g_target, s_tilde, constant(latent)});
  return concat_cols({repeat_rows(shared, cfg_.k_modes), leaf(*mode_embeddings_)});
}

DecoderOut LaplaceDecoder::decode(const ad::Var& e) const {
  using namespace ad;
  if (!all_finite(e->val)) throw std::invalid_argument("decode: non-finite input");
  DecoderOut out;
  Var logits = transpose(pi_head_.forward(e));  // 1 x K
  out.pi = masked_softmax_rows(logits, Mat::Ones(1, logits->val.cols()));
  out.mu = mu_head_.forward(e);
  out.b = add_scalar(softplus(b_head_.forward(e)), 1e-3);
  return out;
}

Mat LaplaceDecoder::sample_latent(std::mt19937_64& rng, bool stochastic) const {
  if (!stochastic) return Mat::Zero(1, cfg_.latent_dim);
  return rand_normal(rng, 1, cfg_.latent_dim, 1.0);
}

Mat flatten_future(const Mat& gt_future) {
  Mat flat(1, gt_future.rows() * 2);
  for (Eigen::Index t = 0; t < gt_future.rows(); ++t) {
    flat(0, 2 * t) = gt_future(t, 0);
    flat(0, 2 * t + 1) = gt_future(t, 1);
  }
  return flat;
}

ad::Var laplace_nll(const ad::Var& mu_row, const ad::Var& b_row, const Mat& gt_row) {
  using namespace ad;
  if ((b_row->val.array() <= 0.0).any())
    throw std::logic_error("laplace_nll: scale must be positive");
  const double t_f = static_cast<double>(gt_row.cols()) / 2.0;
  Var residual = abs_op(sub(constant(gt_row), mu_row));
  Var terms = add(log_op(mul_scalar(b_row, 2.0)), div(residual, b_row));
  return mul_scalar(sum_all(terms), 1.0 / t_f);
}

int wta_best_mode(const Mat& mu, const Mat& gt_future) {
  const int k_modes = static_cast<int>(mu.rows());
  const Eigen::Index t_f = gt_future.rows();
  int best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (int k = 0; k < k_modes; ++k) {
    double err = 0.0;
    for (Eigen::Index t = 0; t < t_f; ++t) {
      const double dx = mu(k, 2 * t) - gt_future(t, 0);
      const double dy = mu(k, 2 * t + 1) - gt_future(t, 1);
      err += std::sqrt(dx * dx + dy * dy);
    }
    if (err < best_err) {
      best_err = err;
      best = k;
    }
  }
  return best;
}

WtaResult wta_regression_loss(const DecoderOut& out, const Mat& gt_future) {
  WtaResult res;
  res.k_star = wta_best_mode(out.mu->val, gt_future);
  ad::Var mu_k = ad::slice_rows(out.mu, res.k_star, 1);
  ad::Var b_k = ad::slice_rows(out.b, res.k_star, 1);
  res.loss = laplace_nll(mu_k, b_k, flatten_future(gt_future));
  return res;
}

ad::Var mode_classification_loss(const ad::Var& pi, int k_star) {
  if (k_star < 0 || k_star >= pi->val.cols())
    throw std::invalid_argument("mode_classification_loss: k_star out of range");
  ad::Var picked = ad::slice_cols(pi, k_star, 1);
  return ad::neg(ad::log_op(ad::clamp(picked, 1e-7, 1.0)));
}

ad::Var total_loss(const ad::Var& lane, const ad::Var& reg, const ad::Var& cls,
                   double lambda_lane) {
  return ad::add(ad::mul_scalar(lane, lambda_lane), ad::add(reg, cls));
}

double total_loss(double lane, double reg, double cls, double lambda_lane) {
  return lambda_lane * lane + reg + cls;
}

TrajectoryMixture extract_mixture(const DecoderOut& out) {
  TrajectoryMixture mix;
  mix.pi = out.pi->val.row(0).transpose();
  mix.mu = out.mu->val;
  mix.b = out.b->val;
  return mix;
}

}  // namespace trajllm
