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

#include "trajllm/backbone.hpp"
#include "trajllm/decoder.hpp"
#include "trajllm/encoder.hpp"
#include "trajllm/lane.hpp"

#include <atomic>
#include <optional>

namespace trajllm {

enum class Ablation { full, no_llm, no_lora, no_lane };

Ablation parse_ablation(const std::string& name);
std::string to_string(Ablation a);

struct ModelConfig {
  int hidden_dim = 128;
  int heads = 8;
  int k_modes = 5;
  int top_c = 2;
  int latent_dim = 16;
  int mode_embed_dim = 32;
  int lane_layers = 3;
  int ssm_state_dim = 16;
  int ssm_expand = 2;
  int conv_width = 4;
  int ffn_mult = 2;
  double dropout = 0.1;
  double lambda_lane = 1.0;
  bool glu_residual = true;
  Ablation ablation = Ablation::full;
  BackboneConfig backbone;
  std::uint64_t seed = 1;
};

struct RunOptions {
  bool training = false;
  bool with_loss = true;
  std::uint64_t rng_seed = 0;
  bool stochastic_latent = false;  // eval-time latent sampling; training always samples
};

struct ModelOutput {
  TrajectoryMixture mixture;
  Mat lane_probs;  // L x t_f, empty when the lane module is ablated
  std::vector<int> candidate_indices;
  std::vector<double> candidate_scores;
  int k_star = -1;
  double loss_lane = 0.0;
  double loss_reg = 0.0;
  double loss_cls = 0.0;
  double loss_total = 0.0;
  ad::Var total;  // scalar graph root, set when with_loss
};

class TrajLlmModel {
 public:
  explicit TrajLlmModel(const ModelConfig& cfg);

  ModelOutput run(const SceneSample& sample, const RunOptions& opts) const;

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }

  // Adapter matrices plus every non-backbone module parameter; base backbone
  // tensors are excluded.
  std::vector<Parameter*> trainable_parameters() { return params_.trainable(); }

  std::uint64_t backbone_fingerprint() const {
    return backbone_ ? backbone_->fingerprint() : 0;
  }
  const Backbone* backbone() const { return backbone_ ? &*backbone_ : nullptr; }
  const ContextEncoder& encoder() const { return encoder_; }
  const LaplaceDecoder& decoder() const { return decoder_; }
  const LaneProbability* lane_module() const { return lane_ ? &*lane_ : nullptr; }

  long backbone_calls() const { return backbone_calls_.load(); }
  long mamba_layer_calls() const { return mamba_layer_calls_.load(); }
  void reset_counters() const {
    backbone_calls_ = 0;
    mamba_layer_calls_ = 0;
  }

 private:
  ModelConfig cfg_;
  ParamStore params_;
  ContextEncoder encoder_;
  std::optional<Backbone> backbone_;
  std::optional<LaneProbability> lane_;
  LaplaceDecoder decoder_;
  mutable std::atomic<long> backbone_calls_{0};
  mutable std::atomic<long> mamba_layer_calls_{0};
};

namespace detail {
ContextEncoder make_encoder(ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng);
}  // namespace detail

}  // namespace trajllm
