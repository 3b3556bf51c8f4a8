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
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "vilas/encoder.hpp"
#include "vilas/nn.hpp"

namespace vilas {

struct CifConfig {
  std::size_t channels = 256;  // weight-predictor conv width
  std::size_t kernel = 3;
  double threshold = 1.0;      // beta
  double tail_threshold = 0.5;
  std::size_t firing_cap_factor = 4;  // cap = factor * U

  std::vector<std::string> problems() const {
    std::vector<std::string> out;
    if (channels == 0) out.push_back("cif: channels must be positive");
    if (kernel == 0 || kernel % 2 == 0) out.push_back("cif: kernel must be odd");
    if (!(threshold > 0)) out.push_back("cif: threshold must be positive");
    if (!(tail_threshold >= 0 && tail_threshold <= threshold)) {
      out.push_back("cif: tail_threshold must be in [0, threshold]");
    }
    return out;
  }
};

template <class T>
struct FiringWeights {
  Tensor<T> alpha;                    // [U], each in (0, 1)
  std::optional<Tensor<T>> alpha_scaled;  // [U], sums to the target length
  double threshold = 1.0;
};

// One contribution of a frame to a fired step.
struct Attribution {
  std::size_t frame;
  double weight;
};

template <class T>
struct FiredSequence {
  Tensor<T> integrated;  // C, [I, d]
  // Half-open [first, last + 1) frame intervals over [0, U).
  std::vector<std::pair<std::size_t, std::size_t>> boundaries;
  std::vector<std::vector<Attribution>> attributions;
  bool tail_fired = false;

  std::size_t length() const { return boundaries.size(); }
};

template <class T>
void create_cif_params(ParamStore<T>& p, const CifConfig& cfg, std::size_t d_model, std::uint64_t seed) {
  p.create("cif.conv.w", {cfg.channels, d_model, cfg.kernel}, Init::kXavier, seed);
  p.create("cif.conv.b", {cfg.channels}, Init::kZeros, seed);
  nn::make_linear(p, "cif.fc", cfg.channels, 1, seed);
}

// conv1d -> relu -> fc -> sigmoid, one weight per encoder frame.
template <class T>
FiringWeights<T> predict_weights(const AcousticStates<T>& h, const ParamStore<T>& p,
                                 const CifConfig& cfg) {
  const auto& w = p.get("cif.conv.w");
  auto x = relu(conv1d(h.states, w, p.get("cif.conv.b"), 1, w.dim(2) / 2));
  auto a = sigmoid(nn::apply_linear(p, "cif.fc", x));
  return {reshape(a, {h.length()}), std::nullopt, cfg.threshold};
}

// alpha * I / sum(alpha); differentiable through the normalizer.
template <class T>
FiringWeights<T> scale_weights(const FiringWeights<T>& w, std::size_t target_len) {
  if (target_len == 0) throw NumericError("scale_weights: target length must be >= 1");
  auto total = sum(w.alpha);
  if (!(total.item() > T(0))) throw NumericError("scale_weights: zero weight sum");
  FiringWeights<T> out = w;
  out.alpha_scaled = div(scale(w.alpha, static_cast<T>(target_len)), total);
  return out;
}

// L1 distance between the predicted quantity and the target length.
template <class T>
Tensor<T> quantity_loss(const FiringWeights<T>& w, std::size_t target_len) {
  return abs(add_scalar(sum(w.alpha), -static_cast<T>(target_len)));
}

// Left-to-right integrate-and-fire. Each frame's weight is poured into the
// accumulator; whenever it reaches beta the current step fires, the part of
// the frame beyond beta carries into the next step (so a boundary frame
// feeds both neighbours, possibly several steps when weights exceed beta).
// A residual >= tail_threshold at the end fires one last step.
//
// In cumulative terms, with S_u = w_0 + ... + w_u, frame u gives step i the
// length of [S_{u-1}, S_u) intersected with [(i-1)beta, i*beta) (the tail
// step's interval is unbounded above). That form drives the weight gradient.
template <class T>
FiredSequence<T> integrate_and_fire(const Tensor<T>& H, const Tensor<T>& weights, double beta = 1.0,
                                    double tail_threshold = 0.5,
                                    std::optional<std::size_t> firing_cap = std::nullopt) {
  if (H.rank() != 2 || weights.rank() != 1 || weights.dim(0) != H.dim(0)) {
    throw ShapeError("integrate_and_fire: H " + shape_str(H.shape()) + " vs weights " +
                     shape_str(weights.shape()));
  }
  const std::size_t U = H.dim(0), d = H.dim(1);
  const std::size_t cap = firing_cap.value_or(4 * U);
  const double eps = 1e-5 * beta;
  const auto& wv = weights.values();

  // Entry bookkeeping for the backward pass: does the entry's interval start
  // at the frame start (S_{u-1}) and end at the frame end (S_u)?
  struct Entry {
    std::size_t step, frame;
    double weight;
    bool starts_at_frame, ends_at_frame;
  };
  std::vector<Entry> entries;
  FiredSequence<T> fired;
  std::vector<Attribution> current;
  std::size_t steps = 0;
  double acc = 0.0;

  auto fire = [&] {
    fired.attributions.push_back(std::move(current));
    current.clear();
    ++steps;
    if (steps > cap) {
      throw RuntimeError("integrate_and_fire: firing cap " + std::to_string(cap) + " exceeded");
    }
  };

  for (std::size_t u = 0; u < U; ++u) {
    double rem = static_cast<double>(wv[u]);
    if (rem < 0) throw NumericError("integrate_and_fire: negative weight at frame " + std::to_string(u));
    bool at_start = true;
    while (acc + rem >= beta - eps) {
      double used = std::min(beta - acc, rem);
      bool ends = false;
      if (rem - used <= eps) {
        used = rem;
        ends = true;
      }
      if (used > 0) {
        entries.push_back({steps, u, used, at_start, ends});
        current.push_back({u, used});
      }
      fire();
      acc = 0.0;
      rem -= used;
      at_start = false;
      if (ends) {
        rem = 0;
        break;
      }
    }
    if (rem > 0) {
      entries.push_back({steps, u, rem, at_start, true});
      current.push_back({u, rem});
      acc += rem;
    }
  }
  if (!current.empty() && acc >= tail_threshold - eps && acc > 0) {
    fired.tail_fired = true;
    fire();
  }
  // Residual entries that never fired do not contribute to C.
  while (!entries.empty() && entries.back().step >= steps) entries.pop_back();

  for (const auto& a : fired.attributions) {
    fired.boundaries.emplace_back(a.front().frame, a.back().frame + 1);
  }
  const std::size_t I = steps;
  std::vector<T> out(I * d, T(0));
  const auto& hv = H.values();
  for (const auto& e : entries)
    for (std::size_t j = 0; j < d; ++j) out[e.step * d + j] += static_cast<T>(e.weight) * hv[e.frame * d + j];

  fired.integrated = detail::make_result<T>(
      "integrate_and_fire", Shape{I, d}, std::move(out), {&H, &weights},
      [entries = std::move(entries), U, d](detail::Node<T>& self) {
        const auto& hv = self.parents[0]->value;
        auto* gH = detail::parent_grad(self, 0);
        auto* gw = detail::parent_grad(self, 1);
        std::vector<double> gS(U, 0.0);
        for (const auto& e : entries) {
          const T* g = &self.grad[e.step * d];
          if (gH)
            for (std::size_t j = 0; j < d; ++j) (*gH)[e.frame * d + j] += static_cast<T>(e.weight) * g[j];
          if (gw) {
            double ga = 0.0;
            for (std::size_t j = 0; j < d; ++j) ga += static_cast<double>(g[j]) * hv[e.frame * d + j];
            if (e.ends_at_frame) gS[e.frame] += ga;
            if (e.starts_at_frame && e.frame > 0) gS[e.frame - 1] -= ga;
          }
        }
        if (gw) {
          double suffix = 0.0;
          for (std::size_t k = U; k-- > 0;) {
            suffix += gS[k];
            (*gw)[k] += static_cast<T>(suffix);
          }
        }
      });
  return fired;
}

}  // namespace vilas
