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

#include "trajllm/autodiff.hpp"
#include "trajllm/nn.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <random>

using namespace trajllm;
using oracles::max_grad_error;

namespace {

Mat randn(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
  return rand_normal(rng, r, c, sd);
}

ad::Var weighted_sum(const ad::Var& x, const Mat& w) {
  return ad::sum_all(ad::mul(x, ad::constant(w)));
}

}  // namespace

TEST_CASE("elementwise and matmul gradients match finite differences") {
  std::mt19937_64 rng(11);
  Mat a = randn(rng, 3, 4);
  Mat b = randn(rng, 3, 4);
  Mat c = randn(rng, 4, 5);
  Mat w1 = randn(rng, 3, 4);
  Mat w2 = randn(rng, 3, 5);

  CHECK(max_grad_error({a, b}, [&](const auto& in) {
          return weighted_sum(ad::mul(ad::add(in[0], in[1]), ad::sub(in[0], in[1])), w1);
        }) < 1e-7);
  CHECK(max_grad_error({a, c}, [&](const auto& in) {
          return weighted_sum(ad::matmul(in[0], in[1]), w2);
        }) < 1e-7);
  Mat bpos = b.array().abs() + 0.5;
  CHECK(max_grad_error({a, bpos}, [&](const auto& in) {
          return weighted_sum(ad::div(in[0], in[1]), w1);
        }) < 1e-7);
}

TEST_CASE("activation gradients match finite differences") {
  std::mt19937_64 rng(12);
  Mat x = randn(rng, 4, 6);
  Mat w = randn(rng, 4, 6);
  auto check_unary = [&](ad::Var (*op)(const ad::Var&)) {
    return max_grad_error({x, w}, [&, op](const auto& in) {
      return ad::sum_all(ad::mul(op(in[0]), in[1]));
    });
  };
  CHECK(check_unary(&ad::sigmoid) < 1e-7);
  CHECK(check_unary(&ad::tanh_op) < 1e-7);
  CHECK(check_unary(&ad::silu) < 1e-7);
  CHECK(check_unary(&ad::gelu) < 1e-7);
  CHECK(check_unary(&ad::softplus) < 1e-7);
  CHECK(check_unary(&ad::exp_op) < 1e-6);

  Mat xpos = x.array().abs() + 0.2;
  CHECK(max_grad_error({xpos, w}, [&](const auto& in) {
          return ad::sum_all(ad::mul(ad::log_op(in[0]), in[1]));
        }) < 1e-6);
  CHECK(max_grad_error({x, w}, [&](const auto& in) {
          return ad::sum_all(ad::mul(ad::abs_op(in[0]), in[1]));
        }) < 1e-6);
}

TEST_CASE("shape ops route gradients correctly") {
  std::mt19937_64 rng(13);
  Mat a = randn(rng, 2, 3);
  Mat b = randn(rng, 4, 3);
  Mat w = randn(rng, 6, 3);
  CHECK(max_grad_error({a, b}, [&](const auto& in) {
          return weighted_sum(ad::concat_rows({in[0], in[1]}), w);
        }) < 1e-7);
  Mat w2 = randn(rng, 3, 2);
  CHECK(max_grad_error({a}, [&](const auto& in) {
          return weighted_sum(ad::slice_cols(ad::transpose(in[0]), 0, 2), w2);
        }) < 1e-7);
  Mat row = randn(rng, 1, 5);
  Mat w3 = randn(rng, 4, 5);
  CHECK(max_grad_error({row}, [&](const auto& in) {
          return weighted_sum(ad::repeat_rows(in[0], 4), w3);
        }) < 1e-7);
  Mat col = randn(rng, 5, 1);
  Mat w4 = randn(rng, 5, 3);
  CHECK(max_grad_error({col}, [&](const auto& in) {
          return weighted_sum(ad::repeat_cols(in[0], 3), w4);
        }) < 1e-7);
}

TEST_CASE("masked softmax: rows, masking, gradient") {
  std::mt19937_64 rng(14);
  Mat logits = randn(rng, 3, 5);
  Mat allow = Mat::Ones(3, 5);
  allow(0, 2) = 0.0;
  allow.row(2).setZero();  // fully masked row

  auto p = ad::masked_softmax_rows(ad::constant(logits), allow);
  CHECK(p->val.row(0).sum() == doctest::Approx(1.0));
  CHECK(p->val(0, 2) == 0.0);
  CHECK(p->val.row(2).cwiseAbs().maxCoeff() == 0.0);

  Mat w = randn(rng, 3, 5);
  CHECK(max_grad_error({logits}, [&](const auto& in) {
          return weighted_sum(ad::masked_softmax_rows(in[0], allow), w);
        }) < 1e-6);
}

TEST_CASE("layer norm and instance norm gradients") {
  std::mt19937_64 rng(15);
  Mat x = randn(rng, 4, 6);
  Mat gamma = randn(rng, 1, 6).array() + 1.5;
  Mat beta = randn(rng, 1, 6);
  Mat w = randn(rng, 4, 6);
  CHECK(max_grad_error({x, gamma, beta}, [&](const auto& in) {
          return weighted_sum(ad::layer_norm(in[0], in[1], in[2]), w);
        }) < 1e-6);

  std::vector<char> valid = {1, 1, 0, 1};
  CHECK(max_grad_error({x}, [&](const auto& in) {
          return weighted_sum(ad::instance_norm(in[0], valid), w);
        }) < 1e-6);

  // invalid rows are zeroed and constant channels stay finite
  Mat xc = Mat::Ones(4, 2) * 3.0;
  auto y = ad::instance_norm(ad::constant(xc), valid);
  CHECK(y->val.allFinite());
  CHECK(y->val.row(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(y->val.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("causal depthwise conv matches direct sum and finite differences") {
  std::mt19937_64 rng(16);
  Mat x = randn(rng, 7, 3);
  Mat k = randn(rng, 4, 3);
  Mat b = randn(rng, 1, 3);
  auto y = ad::causal_depthwise_conv1d(ad::constant(x), ad::constant(k), ad::constant(b));
  // direct evaluation at t=5, channel 1
  double want = b(0, 1);
  for (int j = 0; j < 4; ++j) want += k(j, 1) * x(5 - 3 + j, 1);
  CHECK(y->val(5, 1) == doctest::Approx(want));
  // causal: first row only sees x[0]
  CHECK(y->val(0, 0) == doctest::Approx(b(0, 0) + k(3, 0) * x(0, 0)));

  Mat w = randn(rng, 7, 3);
  CHECK(max_grad_error({x, k, b}, [&](const auto& in) {
          return weighted_sum(ad::causal_depthwise_conv1d(in[0], in[1], in[2]), w);
        }) < 1e-6);
}

TEST_CASE("selective ssm scan equals reference recurrence and differentiates") {
  std::mt19937_64 rng(17);
  const Eigen::Index L = 9, C = 5, S = 3;
  Mat x = randn(rng, L, C);
  Mat delta = randn(rng, L, C).array().abs() + 0.05;
  Mat b_in = randn(rng, L, S);
  Mat c_in = randn(rng, L, S);
  Mat a = -(randn(rng, C, S).array().abs() + 0.1);

  auto y = ad::selective_ssm_scan(ad::constant(x), ad::constant(delta), ad::constant(b_in),
                                  ad::constant(c_in), ad::constant(a));
  Mat ref = oracles::ssm_reference(x, delta, b_in, c_in, a);
  CHECK((y->val - ref).cwiseAbs().maxCoeff() < 1e-12);

  Mat w = randn(rng, L, C);
  CHECK(max_grad_error({x, delta, b_in, c_in, a}, [&](const auto& in) {
          return weighted_sum(
              ad::selective_ssm_scan(in[0], in[1], in[2], in[3], in[4]), w);
        }) < 1e-5);
}

TEST_CASE("gather, clamp and zero_masked_rows") {
  std::mt19937_64 rng(18);
  Mat p = randn(rng, 5, 4);
  std::vector<int> idx = {3, 0, 2, 2};
  auto g = ad::gather_rows_per_col(ad::constant(p), idx);
  CHECK(g->val(0, 0) == p(3, 0));
  CHECK(g->val(0, 3) == p(2, 3));

  Mat w = randn(rng, 1, 4);
  CHECK(max_grad_error({p}, [&](const auto& in) {
          return weighted_sum(ad::gather_rows_per_col(in[0], idx), w);
        }) < 1e-7);

  Mat x = randn(rng, 3, 2);
  auto z = ad::zero_masked_rows(ad::constant(x), {1, 0, 1});
  CHECK(z->val.row(1).cwiseAbs().maxCoeff() == 0.0);
  CHECK(z->val.row(0) == x.row(0));
}

TEST_CASE("gru cell and attention core gradients flow end to end") {
  std::mt19937_64 rng(19);
  ParamStore ps;
  GruCell cell(ps, "gru", 4, 6, rng);
  Mat x0 = randn(rng, 3, 4), x1 = randn(rng, 3, 4);
  Mat w = randn(rng, 3, 6);

  // gradient of the final hidden state w.r.t. the first input step
  CHECK(max_grad_error({x0, x1}, [&](const auto& in) {
          auto h0 = ad::constant(Mat::Zero(3, 6));
          auto h1 = cell.step(in[0], h0);
          auto h2 = cell.step(in[1], h1);
          return weighted_sum(h2, w);
        }) < 1e-6);

  Mat q = randn(rng, 3, 8), k = randn(rng, 5, 8), v = randn(rng, 5, 8);
  Mat allow = Mat::Ones(3, 5);
  allow(1, 4) = 0.0;
  Mat wv = randn(rng, 3, 8);
  CHECK(max_grad_error({q, k, v}, [&](const auto& in) {
          return weighted_sum(attention_core(in[0], in[1], in[2], allow, 2), wv);
        }) < 1e-6);

  // single-head path matches the dense reference
  auto out = attention_core(ad::constant(q), ad::constant(k), ad::constant(v), allow, 1);
  Mat ref = oracles::attention_reference(q, k, v, allow);
  CHECK((out->val - ref).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("parameter leaves accumulate into grad sinks") {
  std::mt19937_64 rng(20);
  ParamStore ps;
  Parameter* w = ps.create("w", 2, 2);
  w->value = randn(rng, 2, 2);
  Parameter* frozen = ps.create("f", 2, 2, false);
  frozen->value = randn(rng, 2, 2);

  auto x = ad::constant(randn(rng, 1, 2));
  auto y = ad::matmul(ad::matmul(x, ad::leaf(*w)), ad::leaf(*frozen));
  auto loss = ad::sum_all(y);
  ad::GradBuffer buf;
  ad::backward(loss, &buf);
  CHECK(buf.entries().count(w) == 1);
  CHECK(buf.entries().count(frozen) == 0);
  buf.add_into_params();
  CHECK(w->grad.size() == 4);
  CHECK(frozen->grad.size() == 0);
}
