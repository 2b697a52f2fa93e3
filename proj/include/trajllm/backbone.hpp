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

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace trajllm {

class BackboneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Rank decomposition attached to a frozen weight W (d x k): the effective
// update is scale * B * A with A (r x k) Gaussian-initialized and B (d x r)
// zero-initialized.
struct LoraAdapter {
  Mat a;  // r x k
  Mat b;  // d x r
  int rank = 0;
  double scale = 1.0;
};

LoraAdapter make_lora_adapter(Eigen::Index d, Eigen::Index k, int rank, double scale,
                              std::mt19937_64& rng);

// y = W x + scale * B (A x); x may be a single column or a batch of columns.
Mat lora_forward(const Mat& w, const LoraAdapter& adapter, const Mat& x);

enum class BackboneKind { surrogate, pretrained };

struct BackboneConfig {
  BackboneKind kind = BackboneKind::surrogate;
  int n_layers = 2;
  int width = 128;
  int n_heads = 4;
  int max_positions = 128;
  std::uint64_t seed = 1;
  std::string weight_path;  // pretrained mode; TRAJLLM_BACKBONE_PATH overrides
  bool use_positional = true;
  int lora_rank = 4;
  double lora_scale = 1.0;
  bool lora_trainable = true;
};

// Published GPT-2 small variant used when no explicit sizes are configured.
BackboneConfig pretrained_gpt2_small_config();

// Name of the environment variable that overrides the weight path.
inline const char* kBackbonePathEnv = "TRAJLLM_BACKBONE_PATH";

// Frozen weight matrix with an optional trainable low-rank adapter on top.
// Token rows convention: forward(x) = x*W + bias (+ scale * (x*A^T)*B^T).
struct LoraLinear {
  Parameter* w = nullptr;       // in x out, frozen
  Parameter* bias = nullptr;    // 1 x out, frozen
  Parameter* lora_a = nullptr;  // r x in
  Parameter* lora_b = nullptr;  // out x r
  double scale = 1.0;

  ad::Var forward(const ad::Var& x) const;
  bool has_adapter() const { return lora_a != nullptr && lora_b != nullptr; }
};

struct TransformerBlock {
  LayerNormParams ln1, ln2;
  LoraLinear attn_q, attn_k;
  Linear attn_v, attn_out;
  Linear mlp_fc, mlp_proj;
  int heads = 1;

  ad::Var forward(const ad::Var& x, const std::vector<char>& token_valid) const;
};

// Frozen causal-transformer backbone adapted through Q/K low-rank adapters,
// plus the trainable width alignment in and interaction projection out.
class Backbone {
 public:
  Backbone(ParamStore& ps, const BackboneConfig& cfg, int pipeline_dim,
           std::mt19937_64& rng);

  // g (tokens x D) -> interaction representation z (tokens x width).
  ad::Var forward_interaction(const ad::Var& g, const std::vector<char>& token_valid) const;

  // z (tokens x width) -> s (tokens x D), a single linear projection.
  ad::Var project_interaction(const ad::Var& z) const;

  std::uint64_t fingerprint() const;  // over frozen base tensors
  const BackboneConfig& config() const { return cfg_; }
  const std::vector<TransformerBlock>& blocks() const { return blocks_; }

 private:
  void init_surrogate(ParamStore& ps);
  void load_pretrained(ParamStore& ps, const std::string& path);
  void create_params(ParamStore& ps, std::mt19937_64& rng);

  BackboneConfig cfg_;
  int pipeline_dim_;
  Parameter* wpe_ = nullptr;
  std::vector<TransformerBlock> blocks_;
  LayerNormParams ln_f_;
  Linear align_;    // D -> width, trainable
  Linear project_;  // width -> D, trainable
  std::vector<const Parameter*> frozen_;  // fingerprint order
};

// Resolves the weight path, honoring the environment override.
std::string resolve_backbone_path(const BackboneConfig& cfg);

struct ParamCensus {
  std::size_t trainable = 0;
  std::size_t frozen = 0;
  std::size_t lora = 0;
  std::size_t total() const { return trainable + frozen; }
};

ParamCensus census(const ParamStore& ps);

}  // namespace trajllm
