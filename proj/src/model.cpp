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

#include "trajllm/model.hpp"

#include <stdexcept>

namespace trajllm {

Ablation parse_ablation(const std::string& name) {
  if (name == "full") return Ablation::full;
  if (name == "no_llm") return Ablation::no_llm;
  if (name == "no_lora") return Ablation::no_lora;
  if (name == "no_lane") return Ablation::no_lane;
  throw std::invalid_argument("unknown ablation: " + name);
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::full: return "full";
    case Ablation::no_llm: return "no_llm";
    case Ablation::no_lora: return "no_lora";
    case Ablation::no_lane: return "no_lane";
  }
  return "?";
}

namespace detail {
ContextEncoder make_encoder(ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng) {
  EncoderConfig ec;
  ec.dim = cfg.hidden_dim;
  ec.heads = cfg.heads;
  ec.glu_residual = cfg.glu_residual;
  return ContextEncoder(ps, ec, rng);
}
}  // namespace detail

namespace {

std::mt19937_64 init_rng(const ModelConfig& cfg) {
  return std::mt19937_64(mix_seed(cfg.seed, fnv1a64(std::string("model-init"))));
}

LaneConfig lane_config(const ModelConfig& cfg) {
  LaneConfig lc;
  lc.dim = cfg.hidden_dim;
  lc.layers = cfg.lane_layers;
  lc.state_dim = cfg.ssm_state_dim;
  lc.expand = cfg.ssm_expand;
  lc.conv_width = cfg.conv_width;
  lc.ffn_mult = cfg.ffn_mult;
  lc.dropout = cfg.dropout;
  return lc;
}

DecoderConfig decoder_config(const ModelConfig& cfg) {
  DecoderConfig dc;
  dc.dim = cfg.hidden_dim;
  dc.heads = cfg.heads;
  dc.k_modes = cfg.k_modes;
  dc.latent_dim = cfg.latent_dim;
  dc.mode_embed_dim = cfg.mode_embed_dim;
  dc.head_hidden = cfg.hidden_dim;
  return dc;
}

struct ModelBuilder {
  ModelConfig cfg;
  std::mt19937_64 rng;
  explicit ModelBuilder(const ModelConfig& c) : cfg(c), rng(init_rng(c)) {}
};

}  // namespace

TrajLlmModel::TrajLlmModel(const ModelConfig& cfg)
    : cfg_(cfg),
      encoder_([&]() -> ContextEncoder {
        auto rng = init_rng(cfg);
        return detail::make_encoder(params_, cfg, rng);
      }()),
      decoder_([&]() -> LaplaceDecoder {
        // dedicated stream so decoder init does not depend on ablations
        auto rng = std::mt19937_64(mix_seed(cfg.seed, fnv1a64(std::string("decoder-init"))));
        return LaplaceDecoder(params_, decoder_config(cfg), rng);
      }()) {
  if (cfg_.hidden_dim < 1 || cfg_.k_modes < 1 || cfg_.top_c < 1)
    throw std::invalid_argument("model config: dimensions must be positive");
  if (cfg_.ablation != Ablation::no_llm) {
    BackboneConfig bc = cfg_.backbone;
    if (cfg_.ablation == Ablation::no_lora) bc.lora_trainable = false;
    auto rng = std::mt19937_64(mix_seed(cfg_.seed, fnv1a64(std::string("backbone-init"))));
    backbone_.emplace(params_, bc, cfg_.hidden_dim, rng);
  }
  if (cfg_.ablation != Ablation::no_lane) {
    auto rng = std::mt19937_64(mix_seed(cfg_.seed, fnv1a64(std::string("lane-init"))));
    lane_.emplace(params_, lane_config(cfg_), rng);
  }
}

ModelOutput TrajLlmModel::run(const SceneSample& sample, const RunOptions& opts) const {
  using namespace ad;
  if (!all_finite(sample.gt_future))
    throw std::invalid_argument("model run: non-finite ground truth");

  AgentFeatures agent_feats = build_agent_features(sample);
  Mat lane_feats = build_lane_features(sample);
  std::vector<char> lanes_valid = lane_valid_mask(sample);

  Var h = encoder_.embed_agents(agent_feats);
  Var f = encoder_.embed_lanes(constant(lane_feats), lanes_valid);
  FusionOut fused = encoder_.fuse(h, f, agent_feats.agent_valid, lanes_valid);

  Var s;
  if (cfg_.ablation == Ablation::no_llm) {
    s = fused.joint;
  } else {
    Var z = backbone_->forward_interaction(fused.joint, fused.token_mask);
    s = backbone_->project_interaction(z);
    ++backbone_calls_;
  }
  Var s_target = slice_rows(s, 0, 1);
  Var g_target = slice_rows(fused.joint, 0, 1);

  std::mt19937_64 dropout_rng(mix_seed(opts.rng_seed, 0x9d));
  std::mt19937_64 latent_rng(mix_seed(opts.rng_seed, 0x1a));

  ModelOutput out;
  Var s_tilde = s_target;
  Var lane_probs_var;
  if (lane_) {
    long layer_calls = 0;
    Var stream = lane_->build_stream(s_target, fused.f_tilde, lanes_valid);
    Var states =
        lane_->forward_states(stream, lanes_valid, dropout_rng, opts.training, &layer_calls);
    mamba_layer_calls_ += layer_calls;
    lane_probs_var = LaneProbability::scores_to_probs(lane_->score_logits(states),
                                                      lanes_valid);
    out.lane_probs = lane_probs_var->val;
    CandidateLaneSet cands =
        select_top_c(out.lane_probs, states, lanes_valid, cfg_.top_c);
    out.candidate_indices = cands.indices;
    out.candidate_scores = cands.scores;
    s_tilde = decoder_.lane_guided_attention(s_target, cands.features);
  }

  const bool stochastic = opts.training || opts.stochastic_latent;
  Mat latent = decoder_.sample_latent(latent_rng, stochastic);
  Var e = decoder_.assemble_input(g_target, s_tilde, latent);
  DecoderOut decoded = decoder_.decode(e);
  out.mixture = extract_mixture(decoded);

  if (opts.with_loss) {
    Var lane_term = lane_ ? lane_loss(lane_probs_var, sample.lane_labels, lanes_valid)
                          : constant(Mat::Zero(1, 1));
    WtaResult wta = wta_regression_loss(decoded, sample.gt_future);
    Var cls = mode_classification_loss(decoded.pi, wta.k_star);
    const double lambda = lane_ ? cfg_.lambda_lane : 0.0;
    out.total = total_loss(lane_term, wta.loss, cls, lambda);
    out.k_star = wta.k_star;
    out.loss_lane = lane_ ? lane_term->val(0, 0) : 0.0;
    out.loss_reg = wta.loss->val(0, 0);
    out.loss_cls = cls->val(0, 0);
    out.loss_total = out.total->val(0, 0);
  }
  return out;
}

}  // namespace trajllm
