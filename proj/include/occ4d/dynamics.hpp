#pragma once

// Ego-state encoders, scene velocity from attention over primitive features,
// dynamic-class gating and the planning head.

#include <cmath>
#include <string>
#include <vector>

#include "occ4d/core.hpp"
#include "occ4d/diff/nn.hpp"
#include "occ4d/scenegen.hpp"

namespace occ4d::dynamics {

using diff::Graph;
using diff::ParameterStore;
using diff::Tensor;
using diff::Var;

inline constexpr int kEgoFeatures = 7;  // x, y, yaw, vx, vy, ax, ay

enum class EgoRole { scene, trajectory };

inline std::string role_prefix(EgoRole role) {
  return role == EgoRole::scene ? "ego_scene" : "ego_traj";
}

struct DynamicsConfig {
  std::size_t dim = 16;
  std::size_t heads = 2;
  std::size_t hidden = 32;
  int history = 4;       // ego states fed to the encoders
  int plan_steps = 6;    // waypoints at 0.5 s
  std::vector<int> dynamic_classes = default_dynamic_classes();
};

inline void init_dynamics(ParameterStore& store, const DynamicsConfig& cfg, diff::Rng& rng) {
  const std::size_t in = static_cast<std::size_t>(kEgoFeatures * cfg.history);
  for (EgoRole role : {EgoRole::scene, EgoRole::trajectory}) {
    diff::init_mlp(store, role_prefix(role), {in, cfg.hidden, cfg.hidden, cfg.dim}, rng);
  }
  diff::init_attention(store, "vel.attn", cfg.dim, rng);
  diff::init_mlp(store, "vel.mlp", {cfg.dim, cfg.hidden, 2}, rng);
  diff::init_attention(store, "plan.attn", cfg.dim, rng);
  diff::init_mlp(store, "plan.mlp", {cfg.dim, cfg.hidden, static_cast<std::size_t>(2 * cfg.plan_steps)}, rng);
}

/// Flattened 1 x (7 K) ego history; short histories are padded at the front
/// with the earliest state, long ones keep the most recent K.
inline Tensor flatten_history(const std::vector<EgoState>& history, int count) {
  if (history.empty()) fail(ErrorKind::validation, "encode_ego: empty ego history");
  Tensor t = Tensor::matrix(1, static_cast<std::size_t>(kEgoFeatures * count));
  const int n = static_cast<int>(history.size());
  for (int k = 0; k < count; ++k) {
    const int src = std::clamp(n - count + k, 0, n - 1);
    const EgoState& s = history[static_cast<std::size_t>(src)];
    const double f[kEgoFeatures] = {s.position.x(), s.position.y(), s.yaw, s.velocity.x(),
                                    s.velocity.y(), s.acceleration.x(), s.acceleration.y()};
    for (int j = 0; j < kEgoFeatures; ++j) t[static_cast<std::size_t>(k * kEgoFeatures + j)] = f[j];
  }
  return t;
}

/// 1 x D ego query from a three-layer MLP; the two roles use separate weights.
inline Var encode_ego(Graph& g, ParameterStore& store, const std::vector<EgoState>& history,
                      EgoRole role, const DynamicsConfig& cfg) {
  return diff::apply_mlp(g, store, role_prefix(role), g.constant(flatten_history(history, cfg.history)));
}

/// v_scene = -MLP_v(attention of the ego query over the features), 1 x 2.
inline Var scene_velocity(Graph& g, ParameterStore& store, Var ego_query, Var features,
                          const DynamicsConfig& cfg) {
  Var attended = diff::mh_attention(g, store, "vel.attn", ego_query, features, features, cfg.heads);
  return diff::neg(diff::apply_mlp(g, store, "vel.mlp", attended));
}

/// Softmax mass on the dynamic classes.
inline double dynamic_probability(const VecX& logits, const std::vector<int>& dynamic_classes) {
  const VecX p = softmax(logits);
  double a = 0.0;
  for (int c : dynamic_classes) {
    if (c < 0 || c >= p.size()) {
      fail(ErrorKind::validation, "dynamic_probability: class " + std::to_string(c) +
                                      " outside [0," + std::to_string(p.size()) + ")");
    }
    a += p[c];
  }
  return std::clamp(a, 0.0, 1.0);
}

/// K x 2 waypoint increments. The features enter through stop_gradient, so
/// the planning loss never reaches them.
inline Var plan(Graph& g, ParameterStore& store, Var ego_query, Var features,
                const DynamicsConfig& cfg) {
  Var frozen = diff::stop_gradient(features);
  Var attended = diff::mh_attention(g, store, "plan.attn", ego_query, frozen, frozen, cfg.heads);
  Var flat = diff::apply_mlp(g, store, "plan.mlp", attended);
  return diff::reshape(flat, {static_cast<std::size_t>(cfg.plan_steps), 2});
}

inline std::vector<Vec2> plan_rows(const Tensor& plan) {
  std::vector<Vec2> out;
  for (std::size_t k = 0; k < plan.rows(); ++k) out.emplace_back(plan(k, 0), plan(k, 1));
  return out;
}

inline Tensor waypoints_tensor(const std::vector<Vec2>& increments) {
  Tensor t = Tensor::matrix(increments.size(), 2);
  for (std::size_t k = 0; k < increments.size(); ++k) {
    t(k, 0) = increments[k].x();
    t(k, 1) = increments[k].y();
  }
  return t;
}

/// Cumulative sum of increments from start.
inline std::vector<Vec2> plan_to_positions(const std::vector<Vec2>& increments, const Vec2& start) {
  std::vector<Vec2> out;
  Vec2 p = start;
  for (const auto& d : increments) {
    p += d;
    out.push_back(p);
  }
  return out;
}

/// Rows "k dx dy x y" for an exported plan.
inline std::string plan_to_text(const std::vector<Vec2>& increments, const Vec2& start) {
  const auto pos = plan_to_positions(increments, start);
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t k = 0; k < increments.size(); ++k) {
    os << k + 1 << ' ' << increments[k].x() << ' ' << increments[k].y() << ' ' << pos[k].x()
       << ' ' << pos[k].y() << '\n';
  }
  return os.str();
}

}  // namespace occ4d::dynamics
