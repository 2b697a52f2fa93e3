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

// Test-only reference computations, kept independent of the library paths
// they are checking.

#pragma once

#include "trajllm/autodiff.hpp"
#include "trajllm/mat.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace oracles {

using trajllm::Mat;

// Central finite differences on a scalar function of several matrices,
// compared against tape gradients. Returns the worst scaled error
// |analytic - fd| / max(1, |analytic|, |fd|).
inline double max_grad_error(
    std::vector<Mat> inputs,
    const std::function<trajllm::ad::Var(const std::vector<trajllm::ad::Var>&)>& build,
    double h = 1e-5) {
  using namespace trajllm;
  std::vector<ad::Var> leaves;
  leaves.reserve(inputs.size());
  for (const Mat& m : inputs) leaves.push_back(ad::input(m));
  ad::Var root = build(leaves);
  ad::backward(root);

  auto value_at = [&](const std::vector<Mat>& xs) {
    std::vector<ad::Var> cs;
    cs.reserve(xs.size());
    for (const Mat& m : xs) cs.push_back(ad::constant(m));
    return build(cs)->val(0, 0);
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (Eigen::Index r = 0; r < inputs[i].rows(); ++r) {
      for (Eigen::Index c = 0; c < inputs[i].cols(); ++c) {
        std::vector<Mat> xs = inputs;
        xs[i](r, c) += h;
        const double fp = value_at(xs);
        xs[i](r, c) -= 2 * h;
        const double fm = value_at(xs);
        const double fd = (fp - fm) / (2 * h);
        const double an = leaves[i]->grad_value()(r, c);
        const double err = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
        worst = std::max(worst, err);
      }
    }
  }
  return worst;
}

// Scalar per-step recurrence for the selective state-space scan; the
// normative reference the production scan must match.
inline Mat ssm_reference(const Mat& x, const Mat& delta, const Mat& b_in, const Mat& c_in,
                         const Mat& a) {
  const Eigen::Index steps = x.rows();
  const Eigen::Index channels = x.cols();
  const Eigen::Index states = a.cols();
  Mat y = Mat::Zero(steps, channels);
  for (Eigen::Index ch = 0; ch < channels; ++ch) {
    std::vector<double> h(static_cast<std::size_t>(states), 0.0);
    for (Eigen::Index t = 0; t < steps; ++t) {
      double out = 0.0;
      for (Eigen::Index s = 0; s < states; ++s) {
        const double abar = std::exp(delta(t, ch) * a(ch, s));
        const double bbar = delta(t, ch) * b_in(t, s);
        h[static_cast<std::size_t>(s)] = abar * h[static_cast<std::size_t>(s)] + bbar * x(t, ch);
        out += c_in(t, s) * h[static_cast<std::size_t>(s)];
      }
      y(t, ch) = out;
    }
  }
  return y;
}

// Dense single-head attention, for checking the fused/blocked path.
inline Mat attention_reference(const Mat& q, const Mat& k, const Mat& v,
                               const Mat& allow) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Mat out = Mat::Zero(q.rows(), v.cols());
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < k.rows(); ++j)
      if (allow(i, j) != 0.0) m = std::max(m, q.row(i).dot(k.row(j)) * scale);
    if (!std::isfinite(m)) continue;
    double z = 0.0;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(k.rows());
    for (Eigen::Index j = 0; j < k.rows(); ++j)
      if (allow(i, j) != 0.0) {
        w(j) = std::exp(q.row(i).dot(k.row(j)) * scale - m);
        z += w(j);
      }
    for (Eigen::Index j = 0; j < k.rows(); ++j) out.row(i) += (w(j) / z) * v.row(j);
  }
  return out;
}

}  // namespace oracles
