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

#include "trajllm/metrics.hpp"
#include "trajllm/model.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace trajllm {

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int hidden_dim = 128;
  int batch_size = 132;
  double lr = 0.001;
  int k_modes = 5;
  double lambda_lane = 1.0;
  int top_c = 2;
  int lora_rank = 4;
  double lora_scale = 1.0;
  std::string backbone = "surrogate";  // or "pretrained"
  int backbone_layers = 2;
  int backbone_width = 128;
  int backbone_heads = 4;
  std::uint64_t backbone_seed = 1;
  std::string backbone_path;
  bool use_positional = true;
  int latent_dim = 16;
  int mode_embed_dim = 32;
  double dropout = 0.1;
  int epochs = 100;
  int max_steps = 0;  // overrides epochs when > 0
  std::uint64_t seed = 1;
  std::string ablation = "full";
  double few_shot_ratio = 1.0;
  int heads = 8;
  int lane_layers = 3;
  int ssm_state_dim = 16;
  int ssm_expand = 2;
  int conv_width = 4;
  int ffn_mult = 2;
  bool glu_residual = true;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  std::string lr_schedule = "cosine";  // or "constant"
  int eval_every = 100;
  int threads = 2;
  double target_train_ade = 0.0;  // early stop when > 0 and reached

  void validate() const;
  std::string to_json() const;
  ModelConfig to_model_config() const;
};

// Strict parse: unknown keys are errors.
TrainConfig parse_train_config(const std::string& json_text);
TrainConfig load_train_config(const std::string& path);

struct HistoryRow {
  long step = 0;
  double lane = 0.0;
  double reg = 0.0;
  double cls = 0.0;
  double total = 0.0;
};

struct TrainResult {
  std::vector<HistoryRow> history;
  std::optional<MetricsReport> best_val;
  std::optional<MetricsReport> final_train;
  long steps_run = 0;
  // trainable tensors at the best validation point (or final state)
  std::map<std::string, Mat> best_state;
};

class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, double weight_decay);
  void step(double lr);
  void zero_grad();
  const std::vector<Parameter*>& params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Mat> m_, v_;
  double weight_decay_;
  long t_ = 0;
};

double clip_global_norm(const std::vector<Parameter*>& params, double max_norm);

// Seeded shuffle; first floor(ratio * n) samples, at least one.
std::vector<SceneSample> few_shot_subset(const std::vector<SceneSample>& samples,
                                         double ratio, std::uint64_t seed);

TrainResult train(const TrainConfig& cfg, TrajLlmModel& model,
                  const std::vector<SceneSample>& train_scenes,
                  const std::vector<SceneSample>& val_scenes);

struct EvalOptions {
  int threads = 2;
  bool debug_perfect = false;  // copy ground truth into every mode
};

MetricsReport evaluate(const TrajLlmModel& model, const std::vector<SceneSample>& scenes,
                       int k_modes, const EvalOptions& opts = {});

// Per-scene deterministic predictions (latent zeroed, dropout off).
std::vector<TrajectoryMixture> predict(const TrajLlmModel& model,
                                       const std::vector<SceneSample>& scenes,
                                       int threads = 2);

// Checkpoints hold the config, a backbone fingerprint, and every trainable
// tensor; frozen base tensors are rebuilt from the config on load.
void save_checkpoint(const std::string& path, const TrainConfig& cfg,
                     const TrajLlmModel& model,
                     const std::map<std::string, Mat>* state_override = nullptr);

struct LoadedCheckpoint {
  TrainConfig config;
  std::unique_ptr<TrajLlmModel> model;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

void write_history_csv(const std::string& path, const std::vector<HistoryRow>& history);

}  // namespace trajllm
