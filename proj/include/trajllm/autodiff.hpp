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

#include "trajllm/mat.hpp"

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

namespace trajllm {
struct Parameter;
}

namespace trajllm::ad {

// Reverse-mode tape over dense double matrices. Graphs are built per sample,
// parameters are shared leaves; backward() pushes leaf gradients into a
// GradSink so batches can run on several threads with private buffers.

class Node;
using Var = std::shared_ptr<Node>;

class Node {
 public:
  Mat val;
  std::vector<Var> inputs;
  std::function<void(Node&)> backward_fn;
  Parameter* param = nullptr;
  bool requires_grad = false;

  explicit Node(Mat v) : val(std::move(v)) {}

  Mat& grad() {
    if (grad_.rows() != val.rows() || grad_.cols() != val.cols())
      grad_ = Mat::Zero(val.rows(), val.cols());
    return grad_;
  }
  bool has_grad() const { return grad_.size() != 0; }
  const Mat& grad_value() const { return grad_; }

 private:
  Mat grad_;
};

class GradSink {
 public:
  virtual ~GradSink() = default;
  virtual void accumulate(Parameter& p, const Mat& g) = 0;
};

// Per-thread gradient buffer; flushed into Parameter::grad in a fixed order.
class GradBuffer final : public GradSink {
 public:
  void accumulate(Parameter& p, const Mat& g) override;
  void add_into_params();
  void clear() { grads_.clear(); }
  const std::unordered_map<Parameter*, Mat>& entries() const { return grads_; }

 private:
  std::unordered_map<Parameter*, Mat> grads_;
};

Var constant(Mat v);
Var input(Mat v);             // differentiable non-parameter leaf
Var leaf(Parameter& p);

// Runs reverse topological traversal from a scalar (1x1) root.
void backward(const Var& root, GradSink* sink = nullptr);

Var add(const Var& a, const Var& b);
Var add_rowvec(const Var& a, const Var& v);  // v is 1xC, broadcast over rows
Var sub(const Var& a, const Var& b);
Var neg(const Var& a);
Var mul(const Var& a, const Var& b);         // elementwise
Var div(const Var& a, const Var& b);         // elementwise
Var mul_scalar(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
Var slice_rows(const Var& a, Eigen::Index row0, Eigen::Index n);
Var slice_cols(const Var& a, Eigen::Index col0, Eigen::Index n);
Var repeat_rows(const Var& a, Eigen::Index n);  // a is 1xC
Var repeat_cols(const Var& a, Eigen::Index n);  // a is Rx1

Var relu(const Var& a);
Var silu(const Var& a);
Var gelu(const Var& a);  // tanh approximation
Var sigmoid(const Var& a);
Var tanh_op(const Var& a);
Var exp_op(const Var& a);
Var log_op(const Var& a);
Var abs_op(const Var& a);
Var softplus(const Var& a);
Var clamp(const Var& a, double lo, double hi);

Var sum_all(const Var& a);  // -> 1x1

// Row-wise softmax restricted to entries where allow != 0. Disallowed entries
// get probability 0; a fully disallowed row yields an all-zero row.
Var masked_softmax_rows(const Var& logits, const Mat& allow);

// Per-row normalization with affine parameters (gamma, beta are 1xC).
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Per-column normalization with statistics over valid rows only; invalid rows
// are forced to zero. No affine parameters.
Var instance_norm(const Var& x, const std::vector<char>& row_valid, double eps = 1e-5);

// Depthwise causal convolution along the row axis: kernel is (width x C),
// bias (1 x C); y[t,c] = bias[c] + sum_j kernel[j,c] * x[t-width+1+j, c].
Var causal_depthwise_conv1d(const Var& x, const Var& kernel, const Var& bias);

// Diagonal selective state-space scan. x, delta: (L x C); b_in, c_in: (L x S);
// a_mat: (C x S). For each step t:
//   Abar[c,s] = exp(delta[t,c] * a_mat[c,s])
//   h[c,s]    = Abar[c,s] * h[c,s] + delta[t,c] * b_in[t,s] * x[t,c]
//   y[t,c]    = sum_s c_in[t,s] * h[c,s]
Var selective_ssm_scan(const Var& x, const Var& delta, const Var& b_in, const Var& c_in,
                       const Var& a_mat);

// y[0,t] = p(idx[t], t) for each column t.
Var gather_rows_per_col(const Var& p, const std::vector<int>& idx);

// Multiplies rows by 1/0 according to row_valid (constant mask).
Var zero_masked_rows(const Var& x, const std::vector<char>& row_valid);

}  // namespace trajllm::ad
