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

#include "trajllm/backbone.hpp"

#include "trajllm/safetensors.hpp"

#include <cstdlib>
#include <sstream>

namespace trajllm {

LoraAdapter make_lora_adapter(Eigen::Index d, Eigen::Index k, int rank, double scale,
                              std::mt19937_64& rng) {
  LoraAdapter ad;
  ad.rank = rank;
  ad.scale = scale;
  ad.a = rand_normal(rng, rank, k, 0.02);
  ad.b = Mat::Zero(d, rank);
  return ad;
}

Mat lora_forward(const Mat& w, const LoraAdapter& adapter, const Mat& x) {
  if (w.cols() != x.rows())
    throw BackboneError("lora_forward: W/x shape mismatch");
  if (adapter.a.cols() != w.cols() || adapter.b.rows() != w.rows() ||
      adapter.a.rows() != adapter.b.cols())
    throw BackboneError("lora_forward: adapter shape mismatch");
  return w * x + adapter.scale * (adapter.b * (adapter.a * x));
}

BackboneConfig pretrained_gpt2_small_config() {
  BackboneConfig cfg;
  cfg.kind = BackboneKind::pretrained;
  cfg.n_layers = 12;
  cfg.width = 768;
  cfg.n_heads = 12;
  cfg.max_positions = 1024;
  return cfg;
}

std::string resolve_backbone_path(const BackboneConfig& cfg) {
  if (const char* env = std::getenv(kBackbonePathEnv); env != nullptr && env[0] != '\0')
    return env;
  return cfg.weight_path;
}

ad::Var LoraLinear::forward(const ad::Var& x) const {
  using namespace ad;
  Var base = add_rowvec(matmul(x, leaf(*w)), leaf(*bias));
  if (!has_adapter()) return base;
  Var down = matmul(x, transpose(leaf(*lora_a)));
  Var up = matmul(down, transpose(leaf(*lora_b)));
  return add(base, mul_scalar(up, scale));
}

ad::Var TransformerBlock::forward(const ad::Var& x,
                                  const std::vector<char>& token_valid) const {
  using namespace ad;
  Var a = ln1.forward(x);
  Mat allow = attention_allow(x->val.rows(), token_valid, /*causal=*/true);
  Var att = attention_core(attn_q.forward(a), attn_k.forward(a), attn_v.forward(a), allow,
                           heads);
  Var h = add(x, attn_out.forward(att));
  Var m = ln2.forward(h);
  return add(h, mlp_proj.forward(gelu(mlp_fc.forward(m))));
}

Backbone::Backbone(ParamStore& ps, const BackboneConfig& cfg, int pipeline_dim,
                   std::mt19937_64& rng)
    : cfg_(cfg), pipeline_dim_(pipeline_dim) {
  if (cfg_.n_layers < 1) throw BackboneError("backbone needs at least one layer");
  if (cfg_.width % cfg_.n_heads != 0)
    throw BackboneError("backbone width must divide evenly into heads");
  create_params(ps, rng);
  if (cfg_.kind == BackboneKind::surrogate) {
    init_surrogate(ps);
  } else {
    const std::string path = resolve_backbone_path(cfg_);
    if (path.empty()) throw BackboneError("pretrained backbone needs a weight path");
    load_pretrained(ps, path);
  }
}

void Backbone::create_params(ParamStore& ps, std::mt19937_64& rng) {
  const int w = cfg_.width;
  align_ = Linear(ps, "backbone.align", pipeline_dim_, w, rng);
  wpe_ = ps.create("backbone.wpe", cfg_.max_positions, w, false);
  frozen_.push_back(wpe_);
  blocks_.reserve(static_cast<std::size_t>(cfg_.n_layers));
  for (int i = 0; i < cfg_.n_layers; ++i) {
    const std::string prefix = "backbone.h." + std::to_string(i);
    TransformerBlock blk;
    blk.heads = cfg_.n_heads;
    blk.ln1 = LayerNormParams(ps, prefix + ".ln_1", w, false);
    blk.attn_q.w = ps.create(prefix + ".attn.q.weight", w, w, false);
    blk.attn_q.bias = ps.create(prefix + ".attn.q.bias", 1, w, false);
    blk.attn_k.w = ps.create(prefix + ".attn.k.weight", w, w, false);
    blk.attn_k.bias = ps.create(prefix + ".attn.k.bias", 1, w, false);
    if (cfg_.lora_rank > 0) {
      blk.attn_q.lora_a =
          ps.create(prefix + ".attn.q.lora_a", cfg_.lora_rank, w, cfg_.lora_trainable);
      blk.attn_q.lora_b =
          ps.create(prefix + ".attn.q.lora_b", w, cfg_.lora_rank, cfg_.lora_trainable);
      blk.attn_k.lora_a =
          ps.create(prefix + ".attn.k.lora_a", cfg_.lora_rank, w, cfg_.lora_trainable);
      blk.attn_k.lora_b =
          ps.create(prefix + ".attn.k.lora_b", w, cfg_.lora_rank, cfg_.lora_trainable);
      blk.attn_q.lora_a->value = rand_normal(rng, cfg_.lora_rank, w, 0.02);
      blk.attn_k.lora_a->value = rand_normal(rng, cfg_.lora_rank, w, 0.02);
      blk.attn_q.scale = cfg_.lora_scale;
      blk.attn_k.scale = cfg_.lora_scale;
    }
    blk.attn_v.w = ps.create(prefix + ".attn.v.weight", w, w, false);
    blk.attn_v.b = ps.create(prefix + ".attn.v.bias", 1, w, false);
    blk.attn_out.w = ps.create(prefix + ".attn.c_proj.weight", w, w, false);
    blk.attn_out.b = ps.create(prefix + ".attn.c_proj.bias", 1, w, false);
    blk.ln2 = LayerNormParams(ps, prefix + ".ln_2", w, false);
    blk.mlp_fc.w = ps.create(prefix + ".mlp.c_fc.weight", w, 4 * w, false);
    blk.mlp_fc.b = ps.create(prefix + ".mlp.c_fc.bias", 1, 4 * w, false);
    blk.mlp_proj.w = ps.create(prefix + ".mlp.c_proj.weight", 4 * w, w, false);
    blk.mlp_proj.b = ps.create(prefix + ".mlp.c_proj.bias", 1, w, false);
    for (const char* n :
         {".ln_1.weight", ".ln_1.bias", ".attn.q.weight", ".attn.q.bias", ".attn.k.weight",
          ".attn.k.bias", ".attn.v.weight", ".attn.v.bias", ".attn.c_proj.weight",
          ".attn.c_proj.bias", ".ln_2.weight", ".ln_2.bias", ".mlp.c_fc.weight",
          ".mlp.c_fc.bias", ".mlp.c_proj.weight", ".mlp.c_proj.bias"})
      frozen_.push_back(ps.find(prefix + n));
    blocks_.push_back(blk);
  }
  ln_f_ = LayerNormParams(ps, "backbone.ln_f", w, false);
  frozen_.push_back(ps.find("backbone.ln_f.weight"));
  frozen_.push_back(ps.find("backbone.ln_f.bias"));
  project_ = Linear(ps, "backbone.project", w, pipeline_dim_, rng);
}

void Backbone::init_surrogate(ParamStore& ps) {
  // deterministic in the backbone seed alone
  std::mt19937_64 rng(mix_seed(cfg_.seed, fnv1a64(std::string("surrogate-backbone"))));
  for (const Parameter* cp : frozen_) {
    Parameter* p = ps.find(cp->name);
    if (p->name.ends_with("ln_1.weight") || p->name.ends_with("ln_2.weight") ||
        p->name.ends_with("ln_f.weight"))
      continue;  // keep ones
    if (p->name.ends_with(".bias")) continue;  // keep zeros
    p->value = rand_normal(rng, p->value.rows(), p->value.cols(), 0.02);
  }
}

void Backbone::load_pretrained(ParamStore& ps, const std::string& path) {
  const auto tensors = read_safetensors(path);
  const int w = cfg_.width;
  std::vector<std::string> problems;

  auto fetch = [&](const std::string& name, Eigen::Index rows,
                   Eigen::Index cols) -> const TensorEntry* {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      problems.push_back("missing tensor: " + name);
      return nullptr;
    }
    const auto& shape = it->second.shape;
    const std::size_t want_r = static_cast<std::size_t>(rows);
    const std::size_t want_c = static_cast<std::size_t>(cols);
    const bool ok = (rows == 1)
                        ? (shape == std::vector<std::size_t>{want_c} ||
                           shape == std::vector<std::size_t>{1, want_c})
                        : (shape == std::vector<std::size_t>{want_r, want_c});
    if (!ok) {
      std::ostringstream os;
      os << "shape mismatch for " << name << ": got [";
      for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
      os << "], want [" << rows << "," << cols << "]";
      problems.push_back(os.str());
      return nullptr;
    }
    return &it->second;
  };

  auto assign = [&](Parameter* p, const std::string& name) {
    const TensorEntry* e = fetch(name, p->value.rows(), p->value.cols());
    if (!e) return;
    for (Eigen::Index i = 0; i < p->value.rows(); ++i)
      for (Eigen::Index j = 0; j < p->value.cols(); ++j)
        p->value(i, j) = e->data[static_cast<std::size_t>(i * p->value.cols() + j)];
  };

  // c_attn holds Q|K|V fused along the output axis; split on load.
  auto assign_qkv = [&](int layer) {
    const std::string prefix = "h." + std::to_string(layer) + ".attn.c_attn";
    const TensorEntry* we = fetch(prefix + ".weight", w, 3 * w);
    const TensorEntry* be = fetch(prefix + ".bias", 1, 3 * w);
    if (!we || !be) return;
    const std::string own = "backbone.h." + std::to_string(layer) + ".attn.";
    Parameter* parts[3] = {ps.find(own + "q.weight"), ps.find(own + "k.weight"),
                           ps.find(own + "v.weight")};
    Parameter* biases[3] = {ps.find(own + "q.bias"), ps.find(own + "k.bias"),
                            ps.find(own + "v.bias")};
    for (int s = 0; s < 3; ++s) {
      for (Eigen::Index i = 0; i < w; ++i)
        for (Eigen::Index j = 0; j < w; ++j)
          parts[s]->value(i, j) =
              we->data[static_cast<std::size_t>(i * 3 * w + s * w + j)];
      for (Eigen::Index j = 0; j < w; ++j)
        biases[s]->value(0, j) = be->data[static_cast<std::size_t>(s * w + j)];
    }
  };

  assign(wpe_, "wpe.weight");
  for (int i = 0; i < cfg_.n_layers; ++i) {
    const std::string hf = "h." + std::to_string(i);
    const std::string own = "backbone.h." + std::to_string(i);
    assign(ps.find(own + ".ln_1.weight"), hf + ".ln_1.weight");
    assign(ps.find(own + ".ln_1.bias"), hf + ".ln_1.bias");
    assign_qkv(i);
    assign(ps.find(own + ".attn.c_proj.weight"), hf + ".attn.c_proj.weight");
    assign(ps.find(own + ".attn.c_proj.bias"), hf + ".attn.c_proj.bias");
    assign(ps.find(own + ".ln_2.weight"), hf + ".ln_2.weight");
    assign(ps.find(own + ".ln_2.bias"), hf + ".ln_2.bias");
    assign(ps.find(own + ".mlp.c_fc.weight"), hf + ".mlp.c_fc.weight");
    assign(ps.find(own + ".mlp.c_fc.bias"), hf + ".mlp.c_fc.bias");
    assign(ps.find(own + ".mlp.c_proj.weight"), hf + ".mlp.c_proj.weight");
    assign(ps.find(own + ".mlp.c_proj.bias"), hf + ".mlp.c_proj.bias");
  }
  assign(ps.find("backbone.ln_f.weight"), "ln_f.weight");
  assign(ps.find("backbone.ln_f.bias"), "ln_f.bias");

  if (!problems.empty()) {
    std::ostringstream os;
    os << "pretrained backbone load failed (" << problems.size() << " issue(s)):";
    for (const auto& p : problems) os << "\n  " << p;
    throw BackboneError(os.str());
  }
}

ad::Var Backbone::forward_interaction(const ad::Var& g,
                                      const std::vector<char>& token_valid) const {
  using namespace ad;
  if (cfg_.lora_rank > 0) {
    for (const auto& blk : blocks_)
      if (!blk.attn_q.has_adapter() || !blk.attn_k.has_adapter())
        throw BackboneError("missing adapter for an active layer");
  } else {
    throw BackboneError("missing adapter for an active layer (lora_rank is 0)");
  }
  const Eigen::Index tokens = g->val.rows();
  if (tokens > wpe_->value.rows())
    throw BackboneError("token count exceeds backbone position table");
  Var x = align_.forward(g);
  if (cfg_.use_positional)
    x = add(x, constant(wpe_->value.topRows(tokens)));
  for (const auto& blk : blocks_) x = blk.forward(x, token_valid);
  return ln_f_.forward(x);
}

ad::Var Backbone::project_interaction(const ad::Var& z) const {
  if (!all_finite(z->val)) throw BackboneError("project_interaction: non-finite input");
  return project_.forward(z);
}

std::uint64_t Backbone::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Parameter* p : frozen_) {
    h = fnv1a64(p->name, h);
    h = fnv1a64(p->value, h);
  }
  return h;
}

ParamCensus census(const ParamStore& ps) {
  ParamCensus c;
  for (const Parameter* p : ps.all()) {
    const auto n = static_cast<std::size_t>(p->value.size());
    if (p->trainable)
      c.trainable += n;
    else
      c.frozen += n;
    if (p->name.find(".lora_") != std::string::npos) c.lora += n;
  }
  return c;
}

}  // namespace trajllm
