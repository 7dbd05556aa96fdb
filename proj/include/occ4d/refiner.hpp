#pragma once

// Toy-scale refiner: anchors and latent features refined by sampling a
// feature field, induced attention through a latent bank and residual anchor
// rectification, then decoded into Gaussian attributes.

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "occ4d/core.hpp"
#include "occ4d/diff/gaussian_ops.hpp"
#include "occ4d/diff/nn.hpp"
#include "occ4d/grid.hpp"
#include "occ4d/scenegen.hpp"

namespace occ4d::refiner {

using diff::Graph;
using diff::ParameterStore;
using diff::Tensor;
using diff::Var;

/// D-channel values on the voxel centers of a grid at a sorted list of time
/// nodes, interpolated linearly along x, y, z and t. Queries outside the
/// node range clamp to the boundary.
struct FeatureField {
  GridSpec spatial;
  std::vector<double> times;
  std::size_t dim = 0;
  std::vector<double> values;  // [time][voxel][channel]

  FeatureField() = default;
  FeatureField(GridSpec s, std::vector<double> t, std::size_t d)
      : spatial(std::move(s)), times(std::move(t)), dim(d),
        values(times.size() * spatial.voxel_count() * d, 0.0) {
    if (times.empty()) fail(ErrorKind::validation, "FeatureField: needs at least one time node");
    for (std::size_t i = 1; i < times.size(); ++i) {
      if (!(times[i] > times[i - 1])) fail(ErrorKind::validation, "FeatureField: time nodes must increase");
    }
  }

  double* node(std::size_t ti, std::size_t voxel) {
    return values.data() + (ti * spatial.voxel_count() + voxel) * dim;
  }
  const double* node(std::size_t ti, std::size_t voxel) const {
    return values.data() + (ti * spatial.voxel_count() + voxel) * dim;
  }

  struct Axis {
    int lo = 0, hi = 0;
    double frac = 0.0;
    double dfrac = 0.0;  // d frac / d coordinate, zero when clamped
  };

  Axis spatial_axis(int a, double x) const {
    const int n = spatial.dims[a];
    Axis ax;
    if (n == 1) return ax;
    const double u = (x - spatial.origin[a]) / spatial.voxel_size - 0.5;
    if (u <= 0.0) {
      ax.hi = 1;
      return ax;
    }
    if (u >= n - 1) {
      ax.lo = n - 2;
      ax.hi = n - 1;
      ax.frac = 1.0;
      return ax;
    }
    ax.lo = std::min(static_cast<int>(std::floor(u)), n - 2);
    ax.hi = ax.lo + 1;
    ax.frac = u - ax.lo;
    ax.dfrac = 1.0 / spatial.voxel_size;
    return ax;
  }

  Axis time_axis(double t) const {
    Axis ax;
    const int n = static_cast<int>(times.size());
    if (n == 1) return ax;
    if (t <= times.front()) {
      ax.hi = 1;
      return ax;
    }
    if (t >= times.back()) {
      ax.lo = n - 2;
      ax.hi = n - 1;
      ax.frac = 1.0;
      return ax;
    }
    int k = static_cast<int>(std::upper_bound(times.begin(), times.end(), t) - times.begin()) - 1;
    k = std::min(k, n - 2);
    ax.lo = k;
    ax.hi = k + 1;
    const double span = times[k + 1] - times[k];
    ax.frac = (t - times[k]) / span;
    ax.dfrac = 1.0 / span;
    return ax;
  }

  /// Interpolated value and, when grad is given, its 4 x D Jacobian rows
  /// (d value / d x, y, z, t).
  VecX sample(const Vec4& p, Eigen::Matrix<double, 4, Eigen::Dynamic>* grad = nullptr) const {
    const Axis ax[4] = {spatial_axis(0, p[0]), spatial_axis(1, p[1]), spatial_axis(2, p[2]), time_axis(p[3])};
    VecX out = VecX::Zero(static_cast<Eigen::Index>(dim));
    if (grad != nullptr) grad->setZero(4, static_cast<Eigen::Index>(dim));
    for (int corner = 0; corner < 16; ++corner) {
      int idx[4];
      double w[4], dw[4];
      for (int a = 0; a < 4; ++a) {
        const bool upper = (corner >> a) & 1;
        idx[a] = upper ? ax[a].hi : ax[a].lo;
        w[a] = upper ? ax[a].frac : 1.0 - ax[a].frac;
        dw[a] = upper ? ax[a].dfrac : -ax[a].dfrac;
      }
      const double weight = w[0] * w[1] * w[2] * w[3];
      const bool any_grad = grad != nullptr && (dw[0] != 0 || dw[1] != 0 || dw[2] != 0 || dw[3] != 0);
      if (weight == 0.0 && !any_grad) continue;
      const double* v = node(static_cast<std::size_t>(idx[3]), spatial.index(idx[0], idx[1], idx[2]));
      Eigen::Map<const VecX> val(v, static_cast<Eigen::Index>(dim));
      out += weight * val;
      if (any_grad) {
        for (int a = 0; a < 4; ++a) {
          double d = dw[a];
          for (int b = 0; b < 4; ++b) {
            if (b != a) d *= w[b];
          }
          if (d != 0.0) grad->row(a) += d * val.transpose();
        }
      }
    }
    return out;
  }
};

/// Every node set to the same vector.
inline FeatureField constant_field(const GridSpec& spec, const std::vector<double>& times, const VecX& value) {
  FeatureField f(spec, times, static_cast<std::size_t>(value.size()));
  for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = value[static_cast<Eigen::Index>(i % f.dim)];
  return f;
}

/// Synthetic field of a scenario: each node carries a fixed random embedding
/// of its ground-truth label (free included) at t = 0 and every timestamp.
inline FeatureField scene_feature_field(const Scenario& s, std::size_t dim, std::uint64_t seed) {
  std::vector<double> times{0.0};
  for (double t : s.timestamps) {
    if (t > times.back()) times.push_back(t);
  }
  FeatureField f(s.grid, times, dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  const int categories = s.grid.num_classes + 1;
  std::vector<double> embed(static_cast<std::size_t>(categories) * dim);
  for (auto& v : embed) v = n(rng);
  for (std::size_t ti = 0; ti < times.size(); ++ti) {
    const LabelGrid labels = rasterize_gt(s.scene, times[ti], s.grid);
    for (std::size_t v = 0; v < labels.labels.size(); ++v) {
      std::copy_n(embed.data() + labels.labels[v] * dim, dim, f.node(ti, v));
    }
  }
  return f;
}

/// Field values at anchor rows (x, y, z, t), Q x D, differentiable in the anchors.
inline Var sample_field(Var anchors, std::shared_ptr<const FeatureField> field) {
  if (anchors.cols() != 4) {
    fail(ErrorKind::shape, "sample_field: anchors must be Qx4, got " + diff::shape_str(anchors.shape()));
  }
  const std::size_t n = anchors.rows(), d = field->dim;
  Tensor y = Tensor::matrix(n, d);
  auto jac = std::make_shared<std::vector<Eigen::Matrix<double, 4, Eigen::Dynamic>>>(n);
  for (std::size_t q = 0; q < n; ++q) {
    const Vec4 p(anchors.value()(q, 0), anchors.value()(q, 1), anchors.value()(q, 2), anchors.value()(q, 3));
    const VecX v = field->sample(p, &(*jac)[q]);
    for (std::size_t c = 0; c < d; ++c) y(q, c) = v[static_cast<Eigen::Index>(c)];
  }
  return anchors.graph->record(std::move(y), {anchors}, [anchors, jac, n, d](Graph& g, const Tensor& gy) {
    Tensor ga = Tensor::zeros_like(anchors.value());
    for (std::size_t q = 0; q < n; ++q) {
      for (int a = 0; a < 4; ++a) {
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += (*jac)[q](a, static_cast<Eigen::Index>(c)) * gy(q, c);
        ga(q, static_cast<std::size_t>(a)) = s;
      }
    }
    g.accumulate(anchors, ga);
  });
}

/// features + field(anchors).
inline Var sample_features(Var anchors, Var features, std::shared_ptr<const FeatureField> field) {
  return diff::add(features, sample_field(anchors, std::move(field)));
}

struct RefinerConfig {
  std::size_t dim = 16;
  std::size_t bank = 64;
  std::size_t queries = 256;
  int blocks = 2;
  std::size_t heads = 2;
  std::size_t hidden = 32;
  int num_classes = classes::count;
  double init_log_scale = std::log(0.5);
  double feature_std = 0.1;

  /// Full-scale dimensions.
  static RefinerConfig full_scale() {
    RefinerConfig c;
    c.dim = 256;
    c.bank = 1280;
    c.queries = 25600;
    c.blocks = 3;
    c.heads = 8;
    c.hidden = 256;
    c.num_classes = 17;
    return c;
  }
};

inline std::string block_prefix(int b) { return "ref.b" + std::to_string(b); }

inline void init_refiner(ParameterStore& store, const RefinerConfig& cfg, diff::Rng& rng) {
  if (cfg.bank < 1) fail(ErrorKind::validation, "refiner: latent bank needs at least one vector");
  if (cfg.blocks < 1) fail(ErrorKind::validation, "refiner: blocks must be >= 1");
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor bank = Tensor::matrix(cfg.bank, cfg.dim);
  for (auto& v : bank.values()) v = n(rng);
  store.add("ref.bank", std::move(bank));
  for (int b = 0; b < cfg.blocks; ++b) {
    diff::init_attention(store, block_prefix(b) + ".attn_z", cfg.dim, rng);
    diff::init_attention(store, block_prefix(b) + ".attn_g", cfg.dim, rng);
    diff::init_mlp(store, block_prefix(b) + ".rect", {cfg.dim, cfg.hidden, 4}, rng);
    diff::zero_last_layer(store, block_prefix(b) + ".rect");
  }
  diff::init_linear(store, "head.logits", cfg.dim, static_cast<std::size_t>(cfg.num_classes), rng, 0.1);
  diff::init_linear(store, "head.opacity", cfg.dim, 1, rng, 0.1);
  diff::init_linear(store, "head.scale", cfg.dim, 3, rng, 0.1);
  diff::init_linear(store, "head.quat", cfg.dim, 4, rng, 0.1);
  diff::init_linear(store, "head.sigma_t", cfg.dim, 1, rng, 0.1);
  diff::init_linear(store, "head.vdyn", cfg.dim, 2, rng, 0.1);
  for (auto& v : store.value("head.scale.b").values()) v = cfg.init_log_scale;
  store.value("head.quat.b")[0] = 1.0;
}

/// f_Z = LN(bank + MHA(bank, f, f)); out = LN(f + MHA(f, f_Z, f_Z)).
inline Var global_interaction(Graph& g, ParameterStore& store, const std::string& prefix, Var features,
                              Var bank, std::size_t heads) {
  Var z = diff::layer_norm(diff::add(bank, diff::mh_attention(g, store, prefix + ".attn_z", bank, features, features, heads)));
  return diff::layer_norm(diff::add(features, diff::mh_attention(g, store, prefix + ".attn_g", features, z, z, heads)));
}

/// anchors + MLP_rect(features).
inline Var rectify_anchors(Graph& g, ParameterStore& store, const std::string& prefix, Var features, Var anchors) {
  return diff::add(anchors, diff::apply_mlp(g, store, prefix + ".rect", features));
}

struct Decoded {
  Var mu_s, mu_t, log_scales, quat, log_sigma_t, opacity_logit, logits, v_dyn;
};

inline Decoded decode_heads(Graph& g, ParameterStore& store, Var features, Var anchors) {
  Decoded d;
  d.mu_s = diff::columns(anchors, 0, 3);
  d.mu_t = diff::columns(anchors, 3, 4);
  d.logits = diff::apply_linear(g, store, "head.logits", features);
  d.opacity_logit = diff::apply_linear(g, store, "head.opacity", features);
  d.log_scales = diff::apply_linear(g, store, "head.scale", features);
  d.quat = diff::normalize_rows(diff::apply_linear(g, store, "head.quat", features));
  d.log_sigma_t = diff::apply_linear(g, store, "head.sigma_t", features);
  d.v_dyn = diff::apply_linear(g, store, "head.vdyn", features);
  return d;
}

struct Refined {
  Var anchors;
  Var features;
  Decoded heads;
};

/// Per block: sample the field, interact through the bank, rectify anchors;
/// then decode every primitive.
inline Refined refine(Graph& g, ParameterStore& store, const RefinerConfig& cfg,
                      std::shared_ptr<const FeatureField> field, Var anchors, Var features) {
  if (anchors.rows() != features.rows()) {
    fail(ErrorKind::shape, "refine: " + std::to_string(anchors.rows()) + " anchors vs " +
                               std::to_string(features.rows()) + " features");
  }
  Var bank = g.parameter(store, "ref.bank");
  for (int b = 0; b < cfg.blocks; ++b) {
    features = sample_features(anchors, features, field);
    features = global_interaction(g, store, block_prefix(b), features, bank, cfg.heads);
    anchors = rectify_anchors(g, store, block_prefix(b), features, anchors);
  }
  return Refined{anchors, features, decode_heads(g, store, features, anchors)};
}

/// Uniform anchors over the grid volume and [0, horizon]; features from a
/// small-variance normal distribution.
inline std::pair<Tensor, Tensor> init_anchors(const RefinerConfig& cfg, const GridSpec& grid, double horizon,
                                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, cfg.feature_std);
  Tensor anchors = Tensor::matrix(cfg.queries, 4), feats = Tensor::matrix(cfg.queries, cfg.dim);
  const Vec3 ext = grid.extent();
  for (std::size_t q = 0; q < cfg.queries; ++q) {
    for (int a = 0; a < 3; ++a) anchors(q, static_cast<std::size_t>(a)) = grid.origin[a] + u(rng) * ext[a];
    anchors(q, 3) = u(rng) * horizon;
  }
  for (auto& v : feats.values()) v = n(rng);
  return {anchors, feats};
}

/// Materializes decoded attributes as primitives; alpha is the softmax mass
/// on the dynamic classes.
inline std::vector<Gaussian4D> to_gaussians(const Decoded& d, const std::vector<int>& dynamic_classes) {
  const std::size_t n = d.mu_s.rows();
  const std::size_t k = d.logits.cols();
  std::vector<Gaussian4D> out(n);
  for (std::size_t q = 0; q < n; ++q) {
    Gaussian4D& g = out[q];
    for (int i = 0; i < 3; ++i) {
      g.mu_s[i] = d.mu_s.value()(q, static_cast<std::size_t>(i));
      g.log_scales[i] = d.log_scales.value()(q, static_cast<std::size_t>(i));
    }
    for (int i = 0; i < 4; ++i) g.quat[i] = d.quat.value()(q, static_cast<std::size_t>(i));
    g.mu_t = d.mu_t.value()[q];
    g.log_sigma_t = d.log_sigma_t.value()[q];
    g.opacity_logit = d.opacity_logit.value()[q];
    g.logits = VecX(static_cast<Eigen::Index>(k));
    for (std::size_t c = 0; c < k; ++c) g.logits[static_cast<Eigen::Index>(c)] = d.logits.value()(q, c);
    for (int i = 0; i < 2; ++i) g.v_dyn[i] = d.v_dyn.value()(q, static_cast<std::size_t>(i));
    const VecX p = softmax(g.logits);
    double a = 0.0;
    for (int c : dynamic_classes) a += p[c];
    g.alpha = std::clamp(a, 0.0, 1.0);
  }
  return out;
}

}  // namespace occ4d::refiner
