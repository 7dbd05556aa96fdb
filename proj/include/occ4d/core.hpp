#pragma once

// Structured space-time Gaussian primitives and their closed-form slicing.
//
// A primitive carries a time-invariant conditional spatial covariance, a
// temporal anchor with Gaussian temporal support, and a planar velocity.
// Slicing at time t yields a 3D Gaussian whose mean moves linearly in t.
// reconstruct_joint / condition_joint give the equivalent joint 4D Gaussian
// and its conditioning, used as an independent check of slice_at.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "occ4d/error.hpp"

namespace occ4d {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using VecX = Eigen::VectorXd;

inline double logistic(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Numerically stable softmax of a logit vector.
inline VecX softmax(const VecX& logits) {
  if (logits.size() == 0) {
    return logits;
  }
  const double m = logits.maxCoeff();
  VecX e = (logits.array() - m).exp().matrix();
  return e / e.sum();
}

struct Gaussian4D {
  Vec3 mu_s = Vec3::Zero();
  double mu_t = 0.0;
  Vec3 log_scales = Vec3::Zero();
  Vec4 quat = Vec4(1.0, 0.0, 0.0, 0.0);  // (w, x, y, z)
  double log_sigma_t = 0.0;
  double opacity_logit = 0.0;
  VecX logits;
  Vec2 v_dyn = Vec2::Zero();
  double alpha = 0.0;

  Vec3 scales() const { return log_scales.array().exp().matrix(); }
  double sigma_t() const { return std::exp(log_sigma_t); }
  double opacity() const { return logistic(opacity_logit); }
  int num_classes() const { return static_cast<int>(logits.size()); }
};

struct SlicedGaussian3D {
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Identity();
  double weight = 0.0;
  VecX logits;
};

struct JointGaussian4D {
  Vec4 mu4 = Vec4::Zero();  // (x, y, z, t)
  Mat4 cov4 = Mat4::Identity();
};

/// Rotation matrix of a (not necessarily unit) quaternion (w, x, y, z).
inline Mat3 quat_to_rotation(const Vec4& quat) {
  const double n = quat.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    fail(ErrorKind::invalid_parameter, "quat_to_rotation: quaternion has zero or non-finite norm");
  }
  const Vec4 q = quat / n;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
      2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return r;
}

/// R S S^T R^T with S = diag(exp(log_scales)).
inline Mat3 conditional_covariance(const Vec3& log_scales, const Vec4& quat) {
  const Mat3 r = quat_to_rotation(quat);
  const Mat3 m = r * log_scales.array().exp().matrix().asDiagonal();
  return m * m.transpose();
}

/// exp(-(t - mu_t)^2 / (2 sigma_t^2)).
inline double temporal_weight(const Gaussian4D& g, double t) {
  const double dt = t - g.mu_t;
  const double sigma = g.sigma_t();
  return std::exp(-(dt * dt) / (2.0 * sigma * sigma));
}

/// v_scene + alpha * v_dyn, embedded in 3D with a zero vertical component.
inline Vec3 effective_velocity(const Gaussian4D& g, const Vec2& v_scene) {
  if (!(g.alpha >= 0.0 && g.alpha <= 1.0)) {
    fail(ErrorKind::invalid_parameter,
         "effective_velocity: dynamic probability alpha=" + std::to_string(g.alpha) +
             " outside [0,1]");
  }
  const Vec2 v = v_scene + g.alpha * g.v_dyn;
  return Vec3(v.x(), v.y(), 0.0);
}

inline void require_planar(const Vec3& v, const char* where) {
  if (v.z() != 0.0) {
    fail(ErrorKind::invalid_parameter,
         std::string(where) + ": velocity must be planar, got z=" + std::to_string(v.z()));
  }
}

inline SlicedGaussian3D slice_at(const Gaussian4D& g, const Vec3& v, double t) {
  require_planar(v, "slice_at");
  SlicedGaussian3D s;
  s.mean = g.mu_s + v * (t - g.mu_t);
  s.cov = conditional_covariance(g.log_scales, g.quat);
  s.weight = g.opacity() * temporal_weight(g, t);
  s.logits = g.logits;
  return s;
}

/// Joint space-time Gaussian equivalent to the structured primitive.
inline JointGaussian4D reconstruct_joint(const Gaussian4D& g, const Vec3& v) {
  require_planar(v, "reconstruct_joint");
  const double var_t = g.sigma_t() * g.sigma_t();
  const Mat3 cond = conditional_covariance(g.log_scales, g.quat);
  JointGaussian4D j;
  j.mu4 << g.mu_s, g.mu_t;
  j.cov4.topLeftCorner<3, 3>() = cond + var_t * v * v.transpose();
  j.cov4.topRightCorner<3, 1>() = var_t * v;
  j.cov4.bottomLeftCorner<1, 3>() = var_t * v.transpose();
  j.cov4(3, 3) = var_t;
  return j;
}

struct ConditionedSpace {
  Vec3 mean;
  Mat3 cov;
};

/// Distribution of space given time for a joint 4D Gaussian.
inline ConditionedSpace condition_joint(const JointGaussian4D& j, double t) {
  const double var_t = j.cov4(3, 3);
  if (!(var_t > 0.0)) {
    fail(ErrorKind::degenerate_covariance,
         "condition_joint: temporal variance " + std::to_string(var_t) + " is not positive");
  }
  const Vec3 cross = j.cov4.topRightCorner<3, 1>();
  ConditionedSpace out;
  out.mean = j.mu4.head<3>() + cross * ((t - j.mu4[3]) / var_t);
  out.cov = j.cov4.topLeftCorner<3, 3>() - cross * cross.transpose() / var_t;
  return out;
}

/// Symmetric PSD check with an eigenvalue floor absorbing rounding noise.
template <typename Derived>
bool is_symmetric_psd(const Eigen::MatrixBase<Derived>& m, double sym_tol = 1e-12,
                      double eig_floor = -1e-10) {
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > sym_tol) {
    return false;
  }
  using Plain = typename Derived::PlainObject;
  Eigen::SelfAdjointEigenSolver<Plain> es(m.eval());
  return es.eigenvalues().minCoeff() >= eig_floor;
}

}  // namespace occ4d
