// Copyright 2026 The vilas Authors
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

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "vilas/numerics/ops.hpp"

namespace vilas {

// Mean over steps of -sum_v q(v) logp(v), q = (1 - eps) onehot + eps / V.
template <class T>
Tensor<T> ce_label_smoothed(const Tensor<T>& logprobs, const std::vector<int>& target, double eps) {
  if (logprobs.rank() != 2) throw ShapeError("ce_label_smoothed: logprobs must be [I, V], got " + shape_str(logprobs.shape()));
  const std::size_t I = logprobs.dim(0), V = logprobs.dim(1);
  if (target.size() != I) {
    throw ShapeError("ce_label_smoothed: " + std::to_string(I) + " rows vs target length " + std::to_string(target.size()));
  }
  if (I == 0) throw ShapeError("ce_label_smoothed: empty target");
  if (!(eps >= 0 && eps < 1)) throw NumericError("ce_label_smoothed: epsilon must be in [0, 1)");
  std::vector<T> q(I * V, static_cast<T>(eps / static_cast<double>(V)));
  for (std::size_t i = 0; i < I; ++i) {
    if (target[i] < 0 || static_cast<std::size_t>(target[i]) >= V) {
      throw ShapeError("ce_label_smoothed: token id " + std::to_string(target[i]) + " outside vocabulary");
    }
    q[i * V + target[i]] += static_cast<T>(1.0 - eps);
  }
  return scale(sum(mul(logprobs, Tensor<T>(Shape{I, V}, std::move(q)))), static_cast<T>(-1.0 / static_cast<double>(I)));
}

template <class T>
struct CtcResult {
  Tensor<T> loss;
  bool feasible = true;
};

inline constexpr double kCtcInfeasibleLoss = 1e30;

namespace detail {

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace detail

// -log P(target | logprobs) summed over all blank-augmented alignments.
// logprobs [U, V+1] with blank = V. Forward/backward in log space (double);
// the gradient w.r.t. logprobs is formed during the forward call. Infeasible
// inputs (U shorter than the target plus its repeats) return the sentinel
// kCtcInfeasibleLoss with zero gradient and feasible = false.
template <class T>
CtcResult<T> ctc_loss(const Tensor<T>& logprobs, const std::vector<int>& target) {
  if (logprobs.rank() != 2 || logprobs.dim(1) < 2) {
    throw ShapeError("ctc_loss: logprobs must be [U, V+1], got " + shape_str(logprobs.shape()));
  }
  const std::size_t U = logprobs.dim(0), K = logprobs.dim(1);
  const int blank = static_cast<int>(K - 1);
  for (int t : target) {
    if (t < 0 || t >= blank) throw ShapeError("ctc_loss: label " + std::to_string(t) + " outside [0, blank)");
  }
  const double ninf = -std::numeric_limits<double>::infinity();
  const std::size_t L = 2 * target.size() + 1;
  std::vector<int> ext(L, blank);
  for (std::size_t s = 0; s < target.size(); ++s) ext[2 * s + 1] = target[s];
  const auto& lpv = logprobs.values();
  auto lp = [&](std::size_t t, std::size_t s) { return static_cast<double>(lpv[t * K + ext[s]]); };
  auto skip_ok = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(U * L, ninf), beta(U * L, ninf);
  if (U > 0) {
    alpha[0] = lp(0, 0);
    if (L > 1) alpha[1] = lp(0, 1);
  }
  for (std::size_t t = 1; t < U; ++t)
    for (std::size_t s = 0; s < L; ++s) {
      double a = alpha[(t - 1) * L + s];
      if (s >= 1) a = detail::log_add(a, alpha[(t - 1) * L + s - 1]);
      if (skip_ok(s)) a = detail::log_add(a, alpha[(t - 1) * L + s - 2]);
      if (a != ninf) alpha[t * L + s] = a + lp(t, s);
    }
  double log_p = ninf;
  if (U > 0) {
    log_p = alpha[(U - 1) * L + L - 1];
    if (L > 1) log_p = detail::log_add(log_p, alpha[(U - 1) * L + L - 2]);
  }
  if (log_p == ninf) {
    return {Tensor<T>::scalar(static_cast<T>(kCtcInfeasibleLoss)), false};
  }

  // beta excludes the emission at its own frame.
  beta[(U - 1) * L + L - 1] = 0.0;
  if (L > 1) beta[(U - 1) * L + L - 2] = 0.0;
  for (std::size_t t = U - 1; t-- > 0;)
    for (std::size_t s = 0; s < L; ++s) {
      double b = beta[(t + 1) * L + s] + lp(t + 1, s);
      if (s + 1 < L) b = detail::log_add(b, beta[(t + 1) * L + s + 1] + lp(t + 1, s + 1));
      if (s + 2 < L && skip_ok(s + 2)) b = detail::log_add(b, beta[(t + 1) * L + s + 2] + lp(t + 1, s + 2));
      beta[t * L + s] = b;
    }

  std::vector<T> grad(U * K, T(0));
  for (std::size_t t = 0; t < U; ++t) {
    std::vector<double> occ(K, ninf);
    for (std::size_t s = 0; s < L; ++s) {
      occ[ext[s]] = detail::log_add(occ[ext[s]], alpha[t * L + s] + beta[t * L + s]);
    }
    for (std::size_t k = 0; k < K; ++k) {
      if (occ[k] != ninf) grad[t * K + k] = static_cast<T>(-std::exp(occ[k] - log_p));
    }
  }
  auto loss = detail::make_result<T>("ctc_loss", Shape{}, {static_cast<T>(-log_p)}, {&logprobs},
                                     [grad = std::move(grad)](detail::Node<T>& self) {
                                       if (auto* g = detail::parent_grad(self, 0)) {
                                         const T up = self.grad[0];
                                         for (std::size_t i = 0; i < grad.size(); ++i) (*g)[i] += up * grad[i];
                                       }
                                     });
  return {loss, true};
}

}  // namespace vilas
