#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "occ4d/diff/graph.hpp"

namespace occ4d::diff {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled (AdamW) when > 0
};

struct AdamState {
  long step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// One bias-corrected Adam(W) update of every store entry from its grad.
inline void adam_step(ParameterStore& store, AdamState& state, const AdamConfig& cfg) {
  auto& entries = store.entries();
  if (state.m.size() != entries.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& e : entries) {
      state.m.push_back(Tensor::zeros_like(e.value));
      state.v.push_back(Tensor::zeros_like(e.value));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < entries.size(); ++p) {
    auto& e = entries[p];
    e.value.require_same(state.m[p], "adam_step");
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad[i];
      double& m = state.m[p][i];
      double& v = state.v[p][i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      const double update = (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
      if (cfg.weight_decay > 0.0) {
        e.value[i] -= cfg.lr * cfg.weight_decay * e.value[i];
      }
      e.value[i] -= cfg.lr * update;
    }
  }
}

/// Cosine annealing from base_lr at step 0 to min_lr at total_steps.
inline double cosine_lr(double base_lr, long step, long total_steps, double min_lr = 0.0) {
  if (total_steps <= 0) return base_lr;
  const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace occ4d::diff
