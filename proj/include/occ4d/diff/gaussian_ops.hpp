#pragma once

// Differentiable primitive slicing and splatting. Row q of every input holds
// primitive q. Sliced primitives are packed as Q x 13 rows
// [mean(3), cov(9, row-major), weight]; splat_field returns V x (C+1) rows
// [class_prob(C), occ].

#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "occ4d/core.hpp"
#include "occ4d/diff/ops.hpp"
#include "occ4d/splat.hpp"

namespace occ4d::diff {

namespace detail {

inline Vec4 row4(const Tensor& t, std::size_t r) {
  return Vec4(t(r, 0), t(r, 1), t(r, 2), t(r, 3));
}

inline Vec4 unit_quat(const Vec4& q, std::size_t row) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    fail(ErrorKind::invalid_parameter,
         "quaternion of primitive " + std::to_string(row) + " has zero or non-finite norm");
  }
  return q / n;
}

/// Pulls an adjoint on R(q_hat) back to the raw quaternion q (through normalization).
inline Vec4 rotation_adjoint_to_quat(const Vec4& q, const Mat3& gr) {
  const double n = q.norm();
  const Vec4 u = q / n;
  const double w = u[0], x = u[1], y = u[2], z = u[3];
  Vec4 gu;
  gu[0] = 2.0 * (-z * gr(0, 1) + y * gr(0, 2) + z * gr(1, 0) - x * gr(1, 2) - y * gr(2, 0) + x * gr(2, 1));
  gu[1] = 2.0 * (y * gr(0, 1) + z * gr(0, 2) + y * gr(1, 0) - 2.0 * x * gr(1, 1) - w * gr(1, 2) +
                 z * gr(2, 0) + w * gr(2, 1) - 2.0 * x * gr(2, 2));
  gu[2] = 2.0 * (-2.0 * y * gr(0, 0) + x * gr(0, 1) + w * gr(0, 2) + x * gr(1, 0) + z * gr(1, 2) -
                 w * gr(2, 0) + z * gr(2, 1) - 2.0 * y * gr(2, 2));
  gu[3] = 2.0 * (-2.0 * z * gr(0, 0) - w * gr(0, 1) + x * gr(0, 2) + w * gr(1, 0) -
                 2.0 * z * gr(1, 1) + y * gr(1, 2) + x * gr(2, 0) + y * gr(2, 1));
  return (gu - u * u.dot(gu)) / n;
}

inline Vec4 normalization_adjoint(const Vec4& q, const Vec4& g_unit) {
  const double n = q.norm();
  const Vec4 u = q / n;
  return (g_unit - u * u.dot(g_unit)) / n;
}

/// Matrix of p -> a * p in (w, x, y, z) coordinates.
inline Mat4 left_mult(const Vec4& a) {
  Mat4 m;
  m << a[0], -a[1], -a[2], -a[3],
       a[1], a[0], -a[3], a[2],
       a[2], a[3], a[0], -a[1],
       a[3], -a[2], a[1], a[0];
  return m;
}

/// Matrix of p -> p * b in (w, x, y, z) coordinates.
inline Mat4 right_mult(const Vec4& b) {
  Mat4 m;
  m << b[0], -b[1], -b[2], -b[3],
       b[1], b[0], b[3], -b[2],
       b[2], -b[3], b[0], b[1],
       b[3], b[2], -b[1], b[0];
  return m;
}

// (x, y, z, t) axis i lives at quaternion coordinate kQuatAxis[i].
inline constexpr int kQuatAxis[4] = {1, 2, 3, 0};

}  // namespace detail

/// 4D rotation u -> q_left * u * q_right with u = (x, y, z, t) read as the
/// quaternion (t, x, y, z). q_right = conj(q_left) leaves t fixed.
inline Mat4 isoclinic_rotation(const Vec4& q_left, const Vec4& q_right) {
  const Mat4 m = detail::left_mult(q_left.normalized()) * detail::right_mult(q_right.normalized());
  Mat4 r;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) r(i, j) = m(detail::kQuatAxis[i], detail::kQuatAxis[j]);
  }
  return r;
}

/// Q x 9 covariances R S S^T R^T from log-scales (Q x 3) and quaternions (Q x 4).
inline Var covariance(Var log_scales, Var quat) {
  const std::size_t n = log_scales.rows();
  if (log_scales.cols() != 3 || quat.cols() != 4 || quat.rows() != n) {
    fail(ErrorKind::shape, "covariance: expected Qx3 log-scales and Qx4 quaternions, got " +
                               shape_str(log_scales.shape()) + " and " + shape_str(quat.shape()));
  }
  Tensor y = Tensor::matrix(n, 9);
  for (std::size_t q = 0; q < n; ++q) {
    detail::unit_quat(detail::row4(quat.value(), q), q);
    const Vec3 ls(log_scales.value()(q, 0), log_scales.value()(q, 1), log_scales.value()(q, 2));
    const Mat3 c = conditional_covariance(ls, detail::row4(quat.value(), q));
    for (int i = 0; i < 9; ++i) y(q, i) = c(i / 3, i % 3);
  }
  return log_scales.graph->record(std::move(y), {log_scales, quat}, [log_scales, quat, n](Graph& g, const Tensor& gy) {
    Tensor* gls = g.grad_buffer(log_scales);
    Tensor* gq = g.grad_buffer(quat);
    for (std::size_t q = 0; q < n; ++q) {
      const Vec4 qv = detail::row4(quat.value(), q);
      const Mat3 r = quat_to_rotation(qv);
      const Vec3 s(std::exp(log_scales.value()(q, 0)), std::exp(log_scales.value()(q, 1)),
                   std::exp(log_scales.value()(q, 2)));
      const Mat3 m = r * s.asDiagonal();
      Mat3 gc;
      for (int i = 0; i < 9; ++i) gc(i / 3, i % 3) = gy(q, i);
      const Mat3 gm = (gc + gc.transpose()) * m;
      if (gls != nullptr) {
        for (int j = 0; j < 3; ++j) (*gls)(q, j) += s[j] * gm.col(j).dot(r.col(j));
      }
      if (gq != nullptr) {
        const Mat3 gr = gm * s.asDiagonal();
        const Vec4 gqv = detail::rotation_adjoint_to_quat(qv, gr);
        for (int k = 0; k < 4; ++k) (*gq)(q, k) += gqv[k];
      }
    }
  });
}

/// mean = mu_s + v (t - mu_t), Q x 3.
inline Var slice_means(Var mu_s, Var mu_t, Var velocity, double t) {
  const std::size_t n = mu_s.rows();
  if (mu_s.cols() != 3 || mu_t.cols() != 1 || velocity.cols() != 3 || mu_t.rows() != n ||
      velocity.rows() != n) {
    fail(ErrorKind::shape, "slice_means: shapes " + shape_str(mu_s.shape()) + ", " +
                               shape_str(mu_t.shape()) + ", " + shape_str(velocity.shape()));
  }
  Tensor y = mu_s.value();
  for (std::size_t q = 0; q < n; ++q) {
    const double dt = t - mu_t.value()[q];
    for (int i = 0; i < 3; ++i) y(q, i) += velocity.value()(q, i) * dt;
  }
  return mu_s.graph->record(std::move(y), {mu_s, mu_t, velocity}, [=](Graph& g, const Tensor& gy) {
    g.accumulate(mu_s, gy);
    Tensor* gt = g.grad_buffer(mu_t);
    Tensor* gv = g.grad_buffer(velocity);
    for (std::size_t q = 0; q < n; ++q) {
      const double dt = t - mu_t.value()[q];
      double dot = 0.0;
      for (int i = 0; i < 3; ++i) {
        dot += gy(q, i) * velocity.value()(q, i);
        if (gv != nullptr) (*gv)(q, i) += gy(q, i) * dt;
      }
      if (gt != nullptr) (*gt)[q] -= dot;
    }
  });
}

/// Effective splatting weight logistic(opacity_logit) * exp(-(t-mu_t)^2 / (2 sigma_t^2)), Q x 1.
inline Var slice_weights(Var opacity_logit, Var mu_t, Var log_sigma_t, double t) {
  const std::size_t n = opacity_logit.rows();
  if (opacity_logit.cols() != 1 || mu_t.cols() != 1 || log_sigma_t.cols() != 1 ||
      mu_t.rows() != n || log_sigma_t.rows() != n) {
    fail(ErrorKind::shape, "slice_weights: expected three Qx1 inputs");
  }
  Tensor y = Tensor::matrix(n, 1);
  for (std::size_t q = 0; q < n; ++q) {
    const double dt = t - mu_t.value()[q];
    const double var = std::exp(2.0 * log_sigma_t.value()[q]);
    y[q] = logistic(opacity_logit.value()[q]) * std::exp(-dt * dt / (2.0 * var));
  }
  return opacity_logit.graph->record(y, {opacity_logit, mu_t, log_sigma_t}, [=](Graph& g, const Tensor& gy) {
    Tensor* go = g.grad_buffer(opacity_logit);
    Tensor* gt = g.grad_buffer(mu_t);
    Tensor* gs = g.grad_buffer(log_sigma_t);
    for (std::size_t q = 0; q < n; ++q) {
      const double dt = t - mu_t.value()[q];
      const double var = std::exp(2.0 * log_sigma_t.value()[q]);
      const double sig = logistic(opacity_logit.value()[q]);
      const double w = y[q];
      if (go != nullptr) (*go)[q] += gy[q] * w * (1.0 - sig);
      if (gt != nullptr) (*gt)[q] += gy[q] * w * dt / var;
      if (gs != nullptr) (*gs)[q] += gy[q] * w * dt * dt / var;
    }
  });
}

/// Q x 16 joint covariances R4 diag(s^2) R4^T in (x, y, z, t) order from
/// log-scales (Q x 4) and a pair of quaternions (Q x 4 each).
inline Var joint_covariance(Var log_scales4, Var q_left, Var q_right) {
  const std::size_t n = log_scales4.rows();
  if (log_scales4.cols() != 4 || q_left.cols() != 4 || q_right.cols() != 4 ||
      q_left.rows() != n || q_right.rows() != n) {
    fail(ErrorKind::shape, "joint_covariance: expected three Qx4 inputs");
  }
  Tensor y = Tensor::matrix(n, 16);
  for (std::size_t q = 0; q < n; ++q) {
    const Vec4 a = detail::unit_quat(detail::row4(q_left.value(), q), q);
    const Vec4 b = detail::unit_quat(detail::row4(q_right.value(), q), q);
    const Vec4 s = detail::row4(log_scales4.value(), q).array().exp().matrix();
    const Mat4 m = isoclinic_rotation(a, b) * s.asDiagonal();
    const Mat4 c = m * m.transpose();
    for (int i = 0; i < 16; ++i) y(q, i) = c(i / 4, i % 4);
  }
  return log_scales4.graph->record(std::move(y), {log_scales4, q_left, q_right}, [=](Graph& g, const Tensor& gy) {
    Tensor* gls = g.grad_buffer(log_scales4);
    Tensor* gl = g.grad_buffer(q_left);
    Tensor* gr = g.grad_buffer(q_right);
    for (std::size_t q = 0; q < n; ++q) {
      const Vec4 ql = detail::row4(q_left.value(), q);
      const Vec4 qr = detail::row4(q_right.value(), q);
      const Vec4 a = ql.normalized(), b = qr.normalized();
      const Vec4 s = detail::row4(log_scales4.value(), q).array().exp().matrix();
      const Mat4 rot = isoclinic_rotation(a, b);
      const Mat4 m = rot * s.asDiagonal();
      Mat4 gc;
      for (int i = 0; i < 16; ++i) gc(i / 4, i % 4) = gy(q, i);
      const Mat4 gm = (gc + gc.transpose()) * m;
      if (gls != nullptr) {
        for (int j = 0; j < 4; ++j) (*gls)(q, j) += s[j] * gm.col(j).dot(rot.col(j));
      }
      const Mat4 g_rot = gm * s.asDiagonal();
      Mat4 g_quat_space;  // adjoint of L(a) R(b) in (w, x, y, z) coordinates
      for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) g_quat_space(detail::kQuatAxis[i], detail::kQuatAxis[j]) = g_rot(i, j);
      }
      const Mat4 lm = detail::left_mult(a), rm = detail::right_mult(b);
      const Mat4 g_left = g_quat_space * rm.transpose();
      const Mat4 g_right = lm.transpose() * g_quat_space;
      Vec4 ga, gb;
      for (int k = 0; k < 4; ++k) {
        const Vec4 e = Vec4::Unit(k);
        ga[k] = (g_left.array() * detail::left_mult(e).array()).sum();
        gb[k] = (g_right.array() * detail::right_mult(e).array()).sum();
      }
      if (gl != nullptr) {
        const Vec4 v = detail::normalization_adjoint(ql, ga);
        for (int k = 0; k < 4; ++k) (*gl)(q, k) += v[k];
      }
      if (gr != nullptr) {
        const Vec4 v = detail::normalization_adjoint(qr, gb);
        for (int k = 0; k < 4; ++k) (*gr)(q, k) += v[k];
      }
    }
  });
}

inline constexpr double kMinTemporalVariance = 1e-12;

/// Conditions joint Gaussians (mean (mu_s, mu_t), covariance Q x 16) on time t
/// and returns packed slices Q x 13; the weight is
/// logistic(opacity_logit) * exp(-(t-mu_t)^2 / (2 var_t)).
inline Var condition_slices(Var mu_s, Var mu_t, Var cov4, Var opacity_logit, double t) {
  const std::size_t n = mu_s.rows();
  if (mu_s.cols() != 3 || mu_t.cols() != 1 || cov4.cols() != 16 || opacity_logit.cols() != 1 ||
      mu_t.rows() != n || cov4.rows() != n || opacity_logit.rows() != n) {
    fail(ErrorKind::shape, "condition_slices: unexpected input shapes");
  }
  Tensor y = Tensor::matrix(n, 13);
  for (std::size_t q = 0; q < n; ++q) {
    const double var_t = cov4.value()(q, 15);
    if (!(var_t > kMinTemporalVariance)) {
      fail(ErrorKind::degenerate_covariance, "condition_slices: temporal variance " +
                                                 std::to_string(var_t) + " of primitive " +
                                                 std::to_string(q) + " is not positive");
    }
    const double dt = t - mu_t.value()[q];
    for (int i = 0; i < 3; ++i) y(q, i) = mu_s.value()(q, i) + cov4.value()(q, 4 * i + 3) * dt / var_t;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        y(q, 3 + 3 * i + j) = cov4.value()(q, 4 * i + j) -
                              cov4.value()(q, 4 * i + 3) * cov4.value()(q, 12 + j) / var_t;
      }
    }
    y(q, 12) = logistic(opacity_logit.value()[q]) * std::exp(-0.5 * dt * dt / var_t);
  }
  return mu_s.graph->record(y, {mu_s, mu_t, cov4, opacity_logit}, [=](Graph& g, const Tensor& gy) {
    Tensor* gmu = g.grad_buffer(mu_s);
    Tensor* gt = g.grad_buffer(mu_t);
    Tensor* gc = g.grad_buffer(cov4);
    Tensor* go = g.grad_buffer(opacity_logit);
    for (std::size_t q = 0; q < n; ++q) {
      const double var_t = cov4.value()(q, 15);
      const double dt = t - mu_t.value()[q];
      const double w = y(q, 12);
      double g_var = 0.0, g_mut = 0.0;
      for (int i = 0; i < 3; ++i) {
        const double gm = gy(q, i);
        const double a = cov4.value()(q, 4 * i + 3);
        if (gmu != nullptr) (*gmu)(q, i) += gm;
        g_mut -= gm * a / var_t;
        g_var -= gm * a * dt / (var_t * var_t);
        if (gc != nullptr) (*gc)(q, 4 * i + 3) += gm * dt / var_t;
      }
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          const double gcv = gy(q, 3 + 3 * i + j);
          const double a = cov4.value()(q, 4 * i + 3);
          const double b = cov4.value()(q, 12 + j);
          if (gc != nullptr) {
            (*gc)(q, 4 * i + j) += gcv;
            (*gc)(q, 4 * i + 3) -= gcv * b / var_t;
            (*gc)(q, 12 + j) -= gcv * a / var_t;
          }
          g_var += gcv * a * b / (var_t * var_t);
        }
      }
      const double gw = gy(q, 12);
      g_mut += gw * w * dt / var_t;
      g_var += gw * w * 0.5 * dt * dt / (var_t * var_t);
      if (go != nullptr) {
        const double sig = logistic(opacity_logit.value()[q]);
        (*go)[q] += gw * w * (1.0 - sig);
      }
      if (gt != nullptr) (*gt)[q] += g_mut;
      if (gc != nullptr) (*gc)(q, 15) += g_var;
    }
  });
}

/// Differentiable splat of packed slices (Q x 13) with class distributions
/// (Q x C) into a V x (C+1) field [class_prob(C), occ].
inline Var splat_field(Var packed, Var probs, const GridSpec& spec,
                       double cutoff_sigma = kDefaultCutoffSigma) {
  const std::size_t n = packed.rows();
  const auto classes = static_cast<std::size_t>(spec.num_classes);
  if (packed.cols() != static_cast<std::size_t>(occ4d::detail::kPackedSliceWidth) ||
      probs.rows() != n || probs.cols() != classes) {
    fail(ErrorKind::shape, "splat_field: packed " + shape_str(packed.shape()) + " / probs " +
                               shape_str(probs.shape()) + " incompatible with " +
                               std::to_string(classes) + " classes");
  }
  auto fwd = std::make_shared<occ4d::detail::SplatForward>(occ4d::detail::splat_forward(
      packed.value().span(), probs.value().span(), n, spec, cutoff_sigma));
  const std::size_t voxels = spec.voxel_count();
  Tensor y = Tensor::matrix(voxels, classes + 1);
  for (std::size_t v = 0; v < voxels; ++v) {
    for (std::size_t c = 0; c < classes; ++c) y(v, c) = fwd->class_prob[v * classes + c];
    y(v, classes) = 1.0 - fwd->transmittance[v];
  }
  return packed.graph->record(std::move(y), {packed, probs}, [=](Graph& g, const Tensor& gy) {
    std::vector<double> g_occ(voxels), g_cls(voxels * classes);
    for (std::size_t v = 0; v < voxels; ++v) {
      for (std::size_t c = 0; c < classes; ++c) g_cls[v * classes + c] = gy(v, c);
      g_occ[v] = gy(v, classes);
    }
    Tensor gp = Tensor::zeros_like(packed.value());
    Tensor gpr = Tensor::zeros_like(probs.value());
    occ4d::detail::splat_backward(*fwd, probs.value().span(), n, spec, cutoff_sigma, g_occ, g_cls,
                                  gp.span(), gpr.span());
    g.accumulate(packed, gp);
    g.accumulate(probs, gpr);
  });
}

/// Per-row probability mass on the given class indices, Q x 1.
inline Var class_mass(Var probs, const std::vector<int>& class_set) {
  const std::size_t classes = probs.cols();
  Tensor indicator = Tensor::matrix(classes, 1);
  for (int c : class_set) {
    if (c < 0 || static_cast<std::size_t>(c) >= classes) {
      fail(ErrorKind::validation, "class_mass: class index " + std::to_string(c) +
                                      " outside [0," + std::to_string(classes) + ")");
    }
    indicator[static_cast<std::size_t>(c)] = 1.0;
  }
  return matmul(probs, probs.graph->constant(std::move(indicator)));
}

/// Planar velocities embedded as Q x 3 with a structurally zero z column.
inline Var embed_planar(Var v2) {
  if (v2.cols() != 2) {
    fail(ErrorKind::shape, "embed_planar: expected Qx2, got " + shape_str(v2.shape()));
  }
  return concat_cols({v2, v2.graph->constant(Tensor::matrix(v2.rows(), 1))});
}

/// v_scene (1 x 2) + alpha (Q x 1) * v_dyn (Q x 2), embedded as Q x 3.
inline Var compose_velocity(Var v_scene, Var alpha, Var v_dyn) {
  return embed_planar(add_row(mul_col(v_dyn, alpha), v_scene));
}

}  // namespace occ4d::diff
