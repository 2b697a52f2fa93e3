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

#include "trajllm/autodiff.hpp"
#include "trajllm/mat.hpp"

#include <deque>
#include <random>
#include <string>
#include <vector>

namespace trajllm {

struct Parameter {
  std::string name;
  Mat value;
  Mat grad;
  bool trainable = true;

  void zero_grad() {
    if (grad.size() != 0) grad.setZero();
  }
};

// Owns all parameters of a model; deque keeps pointers stable. Creation order
// is deterministic and doubles as the checkpoint / fingerprint order.
class ParamStore {
 public:
  Parameter* create(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                    bool trainable = true);
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::vector<Parameter*> all();
  std::vector<Parameter*> trainable();
  std::vector<const Parameter*> all() const;

  std::size_t count(bool trainable_only) const;
  void zero_grads();

 private:
  std::deque<Parameter> store_;
};

// Token features as rows: forward(x) = x * W + b with W (in x out), b (1 x out).
struct Linear {
  Parameter* w = nullptr;
  Parameter* b = nullptr;

  Linear() = default;
  Linear(ParamStore& ps, const std::string& prefix, Eigen::Index in, Eigen::Index out,
         std::mt19937_64& rng, bool trainable = true);
  ad::Var forward(const ad::Var& x) const;
};

struct Mlp {
  Linear l1, l2;

  Mlp() = default;
  Mlp(ParamStore& ps, const std::string& prefix, Eigen::Index in, Eigen::Index hidden,
      Eigen::Index out, std::mt19937_64& rng, bool trainable = true);
  ad::Var forward(const ad::Var& x) const;  // l2(relu(l1(x)))
};

// Batched GRU cell; rows are independent sequences at one timestep.
// Gate layout in the fused weight matrices: [reset | update | candidate].
struct GruCell {
  Parameter* w_ih = nullptr;  // in x 3H
  Parameter* w_hh = nullptr;  // H x 3H
  Parameter* b_ih = nullptr;  // 1 x 3H
  Parameter* b_hh = nullptr;  // 1 x 3H
  Eigen::Index hidden = 0;

  GruCell() = default;
  GruCell(ParamStore& ps, const std::string& prefix, Eigen::Index in, Eigen::Index hidden,
          std::mt19937_64& rng);
  ad::Var step(const ad::Var& x, const ad::Var& h) const;
};

struct LayerNormParams {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;

  LayerNormParams() = default;
  LayerNormParams(ParamStore& ps, const std::string& prefix, Eigen::Index dim,
                  bool trainable = true);
  ad::Var forward(const ad::Var& x) const;
};

// Scaled dot-product attention over pre-projected q/k/v, split into heads.
// allow is (Tq x Tk); outputs concatenated head results (Tq x dim).
ad::Var attention_core(const ad::Var& q, const ad::Var& k, const ad::Var& v,
                       const Mat& allow, int heads);

// Builds the (Tq x Tk) allow matrix from key validity and an optional causal
// constraint (query i may attend key j only if j <= i).
Mat attention_allow(Eigen::Index tq, const std::vector<char>& key_valid, bool causal);

struct MultiheadAttention {
  Linear q, k, v, out;
  int heads = 1;

  MultiheadAttention() = default;
  MultiheadAttention(ParamStore& ps, const std::string& prefix, Eigen::Index dim, int heads,
                     std::mt19937_64& rng);
  ad::Var forward(const ad::Var& query_in, const ad::Var& kv_in,
                  const std::vector<char>& key_valid, bool causal = false) const;
};

// Inverted dropout; identity when not training or rate <= 0.
ad::Var dropout(const ad::Var& x, double rate, std::mt19937_64& rng, bool training);

}  // namespace trajllm
