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
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "vilas/numerics/param_store.hpp"
#include "vilas/numerics/tensor.hpp"

namespace vilas {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_leaf;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
  bool passed = true;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
// gradient is ~0 from turning finite-difference truncation noise into a
// huge relative error.
inline double grad_rel_err(double analytic, double numeric, double floor = 1e-3) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Compares reverse-mode gradients of the scalar `f()` with respect to every
// coordinate of `leaves` against central differences with step h. `f` must
// rebuild its graph on each call (leaf values are perturbed in place).
inline GradCheckReport grad_check(
    const std::function<Tensor<double>()>& f,
    std::vector<std::pair<std::string, Tensor<double>>> leaves, double tol,
    double h = 1e-4) {
  for (auto& [_, t] : leaves) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  f().backward();
  GradCheckReport rep;
  for (auto& [name, t] : leaves) {
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      double fp, fm;
      {
        NoGradGuard ng;
        data[i] = orig + h;
        fp = f().item();
        data[i] = orig - h;
        fm = f().item();
        data[i] = orig;
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double err = grad_rel_err(analytic[i], numeric);
      ++rep.coords_checked;
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.worst_leaf = name;
        rep.worst_index = i;
        rep.worst_analytic = analytic[i];
        rep.worst_numeric = numeric;
      }
    }
  }
  rep.passed = rep.max_rel_err <= tol;
  return rep;
}

// Single-input form: checks d f(point) / d point.
inline GradCheckReport grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                  Tensor<double> point, double tol, double h = 1e-4) {
  return grad_check([&] { return f(point); }, {{"point", point}}, tol, h);
}

// Every parameter of a store, in name order.
inline std::vector<std::pair<std::string, Tensor<double>>> leaves_of(
    ParamStore<double>& params, const std::string& prefix = "") {
  std::vector<std::pair<std::string, Tensor<double>>> out;
  for (auto& [name, t] : params)
    if (name.rfind(prefix, 0) == 0) out.emplace_back(name, t);
  return out;
}

}  // namespace vilas
