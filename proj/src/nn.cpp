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

#include "trajllm/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace trajllm {

Parameter* ParamStore::create(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                              bool trainable) {
  if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter: " + name);
  store_.push_back(Parameter{name, Mat::Zero(rows, cols), Mat(), trainable});
  return &store_.back();
}

Parameter* ParamStore::find(const std::string& name) {
  for (auto& p : store_)
    if (p.name == name) return &p;
  return nullptr;
}

const Parameter* ParamStore::find(const std::string& name) const {
  for (const auto& p : store_)
    if (p.name == name) return &p;
  return nullptr;
}

std::vector<Parameter*> ParamStore::all() {
  std::vector<Parameter*> out;
  out.reserve(store_.size());
  for (auto& p : store_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParamStore::all() const {
  std::vector<const Parameter*> out;
  out.reserve(store_.size());
  for (const auto& p : store_) out.push_back(&p);
  return out;
}

std::vector<Parameter*> ParamStore::trainable() {
  std::vector<Parameter*> out;
  for (auto& p : store_)
    if (p.trainable) out.push_back(&p);
  return out;
}

std::size_t ParamStore::count(bool trainable_only) const {
  std::size_t n = 0;
  for (const auto& p : store_)
    if (!trainable_only || p.trainable) n += static_cast<std::size_t>(p.value.size());
  return n;
}

void ParamStore::zero_grads() {
  for (auto& p : store_) p.zero_grad();
}

Linear::Linear(ParamStore& ps, const std::string& prefix, Eigen::Index in, Eigen::Index out,
               std::mt19937_64& rng, bool trainable) {
  w = ps.create(prefix + ".weight", in, out, trainable);
  b = ps.create(prefix + ".bias", 1, out, trainable);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  w->value = rand_uniform(rng, in, out, bound);
}

ad::Var Linear::forward(const ad::Var& x) const {
  return ad::add_rowvec(ad::matmul(x, ad::leaf(*w)), ad::leaf(*b));
}

Mlp::Mlp(ParamStore& ps, const std::string& prefix, Eigen::Index in, Eigen::Index hidden,
         Eigen::Index out, std::mt19937_64& rng, bool trainable)
    : l1(ps, prefix + ".fc1", in, hidden, rng, trainable),
      l2(ps, prefix + ".fc2", hidden, out, rng, trainable) {}

ad::Var Mlp::forward(const ad::Var& x) const { return l2.forward(ad::relu(l1.forward(x))); }

GruCell::GruCell(ParamStore& ps, const std::string& prefix, Eigen::Index in,
                 Eigen::Index hidden_dim, std::mt19937_64& rng)
    : hidden(hidden_dim) {
  w_ih = ps.create(prefix + ".w_ih", in, 3 * hidden);
  w_hh = ps.create(prefix + ".w_hh", hidden, 3 * hidden);
  b_ih = ps.create(prefix + ".b_ih", 1, 3 * hidden);
  b_hh = ps.create(prefix + ".b_hh", 1, 3 * hidden);
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_ih->value = rand_uniform(rng, in, 3 * hidden, bound);
  w_hh->value = rand_uniform(rng, hidden, 3 * hidden, bound);
}

ad::Var GruCell::step(const ad::Var& x, const ad::Var& h) const {
  using namespace ad;
  const Eigen::Index H = hidden;
  Var gi = add_rowvec(matmul(x, leaf(*w_ih)), leaf(*b_ih));
  Var gh = add_rowvec(matmul(h, leaf(*w_hh)), leaf(*b_hh));
  Var r = sigmoid(add(slice_cols(gi, 0, H), slice_cols(gh, 0, H)));
  Var z = sigmoid(add(slice_cols(gi, H, H), slice_cols(gh, H, H)));
  Var n = tanh_op(add(slice_cols(gi, 2 * H, H), mul(r, slice_cols(gh, 2 * H, H))));
  Var ones = constant(Mat::Ones(z->val.rows(), z->val.cols()));
  return add(mul(sub(ones, z), n), mul(z, h));
}

LayerNormParams::LayerNormParams(ParamStore& ps, const std::string& prefix, Eigen::Index dim,
                                 bool trainable) {
  gamma = ps.create(prefix + ".weight", 1, dim, trainable);
  beta = ps.create(prefix + ".bias", 1, dim, trainable);
  gamma->value.setOnes();
}

ad::Var LayerNormParams::forward(const ad::Var& x) const {
  return ad::layer_norm(x, ad::leaf(*gamma), ad::leaf(*beta));
}

Mat attention_allow(Eigen::Index tq, const std::vector<char>& key_valid, bool causal) {
  const Eigen::Index tk = static_cast<Eigen::Index>(key_valid.size());
  Mat allow = Mat::Zero(tq, tk);
  for (Eigen::Index i = 0; i < tq; ++i)
    for (Eigen::Index j = 0; j < tk; ++j)
      if (key_valid[static_cast<std::size_t>(j)] && (!causal || j <= i)) allow(i, j) = 1.0;
  return allow;
}

ad::Var attention_core(const ad::Var& q, const ad::Var& k, const ad::Var& v,
                       const Mat& allow, int heads) {
  using namespace ad;
  const Eigen::Index dim = q->val.cols();
  if (dim % heads != 0) throw std::invalid_argument("attention_core: dim % heads != 0");
  const Eigen::Index dh = dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dh, dh);
    Var kh = slice_cols(k, h * dh, dh);
    Var vh = slice_cols(v, h * dh, dh);
    Var logits = mul_scalar(matmul(qh, transpose(kh)), scale);
    Var p = masked_softmax_rows(logits, allow);
    outs.push_back(matmul(p, vh));
  }
  return heads == 1 ? outs[0] : concat_cols(outs);
}

MultiheadAttention::MultiheadAttention(ParamStore& ps, const std::string& prefix,
                                       Eigen::Index dim, int n_heads, std::mt19937_64& rng)
    : q(ps, prefix + ".q", dim, dim, rng),
      k(ps, prefix + ".k", dim, dim, rng),
      v(ps, prefix + ".v", dim, dim, rng),
      out(ps, prefix + ".out", dim, dim, rng),
      heads(n_heads) {}

ad::Var MultiheadAttention::forward(const ad::Var& query_in, const ad::Var& kv_in,
                                    const std::vector<char>& key_valid, bool causal) const {
  Mat allow = attention_allow(query_in->val.rows(), key_valid, causal);
  ad::Var attended = attention_core(q.forward(query_in), k.forward(kv_in), v.forward(kv_in),
                                    allow, heads);
  return out.forward(attended);
}

ad::Var dropout(const ad::Var& x, double rate, std::mt19937_64& rng, bool training) {
  if (!training || rate <= 0.0) return x;
  if (rate >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
  std::bernoulli_distribution keep(1.0 - rate);
  Mat mask(x->val.rows(), x->val.cols());
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    for (Eigen::Index j = 0; j < mask.cols(); ++j) mask(i, j) = keep(rng) ? scale : 0.0;
  return ad::mul(x, ad::constant(std::move(mask)));
}

}  // namespace trajllm
