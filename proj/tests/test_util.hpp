#pragma once

// Shared generators for randomized tests.

#include <random>

#include "occ4d/core.hpp"

namespace occ4d::fixtures {

inline Gaussian4D random_gaussian(std::mt19937_64& rng, int classes = 4) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Gaussian4D g;
  g.mu_s = Vec3(5 * u(rng), 5 * u(rng), u(rng));
  g.mu_t = 1.5 + 1.5 * u(rng);
  g.log_scales = Vec3(u(rng), u(rng), u(rng));
  g.quat = Vec4(u(rng), u(rng), u(rng), u(rng));
  if (g.quat.norm() < 0.1) g.quat = Vec4(1, 0, 0, 0);
  g.log_sigma_t = u(rng);
  g.opacity_logit = 2 * u(rng);
  g.logits = VecX(classes);
  for (int c = 0; c < classes; ++c) g.logits[c] = 2 * u(rng);
  g.v_dyn = Vec2(3 * u(rng), 3 * u(rng));
  g.alpha = 0.5 * (u(rng) + 1.0);
  return g;
}

}  // namespace occ4d::fixtures

#include <functional>

#include "occ4d/error.hpp"

namespace occ4d::fixtures {

/// Kind of the occ4d::Error thrown by f, or nullopt-like sentinel -1.
inline int thrown_kind(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return static_cast<int>(e.kind());
  }
  return -1;
}

inline int kind_of(ErrorKind k) { return static_cast<int>(k); }

}  // namespace occ4d::fixtures
