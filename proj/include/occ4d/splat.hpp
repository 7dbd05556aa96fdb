#pragma once

// Gaussian-to-voxel splatting.
//
// Each sliced Gaussian q contributes a_q(x) = w_q exp(-1/2 d^T cov_q^-1 d)
// at voxel center x (d = x - mean_q), restricted to Mahalanobis distance
// cutoff_sigma. Occupancy fuses contributions as a complement product,
//   occ(x) = 1 - prod_q (1 - min(a_q, 1 - eps)),
// and the class distribution is the contribution-weighted mixture of the
// per-primitive softmax distributions, renormalized.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "occ4d/core.hpp"
#include "occ4d/grid.hpp"

namespace occ4d {

inline constexpr double kContributionClamp = 1e-6;
inline constexpr double kMaxConditionNumber = 1e12;
inline constexpr double kDefaultCutoffSigma = 3.0;

namespace detail {

/// Row layout of a packed sliced primitive: mean[3], cov[9] row-major, weight.
inline constexpr int kPackedSliceWidth = 13;

struct PreparedGaussian {
  Vec3 mean;
  Mat3 precision;
  double weight = 0.0;
  std::array<int, 3> lo{};
  std::array<int, 3> hi{};
  bool empty = true;
};

inline void check_covariance(const Mat3& cov, std::size_t index) {
  if (!cov.allFinite()) {
    fail(ErrorKind::degenerate_covariance,
         "splat: covariance of primitive " + std::to_string(index) + " is not finite");
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo > kMaxConditionNumber) {
    fail(ErrorKind::degenerate_covariance,
         "splat: covariance of primitive " + std::to_string(index) +
             " is singular or ill-conditioned (eigenvalues " + std::to_string(lo) + ", " +
             std::to_string(hi) + ")");
  }
}

inline PreparedGaussian prepare(const Vec3& mean, const Mat3& cov, double weight,
                                const GridSpec& spec, double cutoff, std::size_t index) {
  check_covariance(cov, index);
  PreparedGaussian p;
  p.mean = mean;
  p.precision = cov.inverse();
  p.weight = weight;
  p.empty = false;
  for (int a = 0; a < 3; ++a) {
    const double ext = cutoff * std::sqrt(cov(a, a));
    const double lo = (mean[a] - ext - spec.origin[a]) / spec.voxel_size - 0.5;
    const double hi = (mean[a] + ext - spec.origin[a]) / spec.voxel_size - 0.5;
    if (!(hi >= 0.0) || !(lo <= spec.dims[a] - 1)) {
      p.empty = true;
      return p;
    }
    p.lo[a] = std::max(0, static_cast<int>(std::ceil(lo)));
    p.hi[a] = std::min(spec.dims[a] - 1, static_cast<int>(std::floor(hi)));
    if (p.lo[a] > p.hi[a]) {
      p.empty = true;
      return p;
    }
  }
  return p;
}

/// Calls fn(voxel, a, e, pd) for every voxel within the cutoff ellipsoid,
/// where e = exp(-m/2), a = weight * e and pd = precision * d.
template <typename Fn>
void for_each_contribution(const PreparedGaussian& p, const GridSpec& spec, double cutoff,
                           Fn&& fn) {
  if (p.empty) {
    return;
  }
  const double cutoff_sq = cutoff * cutoff;
  for (int ix = p.lo[0]; ix <= p.hi[0]; ++ix) {
    for (int iy = p.lo[1]; iy <= p.hi[1]; ++iy) {
      for (int iz = p.lo[2]; iz <= p.hi[2]; ++iz) {
        const Vec3 d = spec.center(ix, iy, iz) - p.mean;
        const Vec3 pd = p.precision * d;
        const double m = d.dot(pd);
        if (m > cutoff_sq) {
          continue;
        }
        const double e = std::exp(-0.5 * m);
        fn(spec.index(ix, iy, iz), p.weight * e, e, pd);
      }
    }
  }
}

inline Vec3 packed_mean(std::span<const double> row) { return Vec3(row[0], row[1], row[2]); }

inline Mat3 packed_cov(std::span<const double> row) {
  Mat3 c;
  c << row[3], row[4], row[5], row[6], row[7], row[8], row[9], row[10], row[11];
  return c;
}

/// Forward pass state kept for the adjoint pass.
struct SplatForward {
  std::vector<double> transmittance;  // prod (1 - clamped a), per voxel
  std::vector<double> mass;           // sum a, per voxel
  std::vector<double> class_prob;     // V x C
  std::vector<PreparedGaussian> prepared;
};

/// packed: Q x 13 sliced primitives; probs: Q x C class distributions.
inline SplatForward splat_forward(std::span<const double> packed, std::span<const double> probs,
                                  std::size_t count, const GridSpec& spec, double cutoff) {
  const auto classes = static_cast<std::size_t>(spec.num_classes);
  const std::size_t voxels = spec.voxel_count();
  SplatForward f;
  f.transmittance.assign(voxels, 1.0);
  f.mass.assign(voxels, 0.0);
  f.class_prob.assign(voxels * classes, 0.0);
  f.prepared.reserve(count);
  for (std::size_t q = 0; q < count; ++q) {
    auto row = packed.subspan(q * kPackedSliceWidth, kPackedSliceWidth);
    f.prepared.push_back(prepare(packed_mean(row), packed_cov(row), row[12], spec, cutoff, q));
    const double* pq = probs.data() + q * classes;
    for_each_contribution(f.prepared.back(), spec, cutoff,
                          [&](std::size_t v, double a, double, const Vec3&) {
                            f.transmittance[v] *= 1.0 - std::min(a, 1.0 - kContributionClamp);
                            f.mass[v] += a;
                            double* cp = f.class_prob.data() + v * classes;
                            for (std::size_t c = 0; c < classes; ++c) {
                              cp[c] += a * pq[c];
                            }
                          });
  }
  for (std::size_t v = 0; v < voxels; ++v) {
    double* cp = f.class_prob.data() + v * classes;
    if (f.mass[v] > 0.0) {
      for (std::size_t c = 0; c < classes; ++c) {
        cp[c] /= f.mass[v];
      }
    }
  }
  return f;
}

/// Adjoints of the packed primitives and class distributions given adjoints
/// of occupancy (V) and class_prob (V x C).
inline void splat_backward(const SplatForward& f, std::span<const double> probs,
                           std::size_t count, const GridSpec& spec, double cutoff,
                           std::span<const double> grad_occ, std::span<const double> grad_cls,
                           std::span<double> grad_packed, std::span<double> grad_probs) {
  const auto classes = static_cast<std::size_t>(spec.num_classes);
  const std::size_t voxels = spec.voxel_count();
  std::vector<double> cls_dot(voxels, 0.0);
  for (std::size_t v = 0; v < voxels; ++v) {
    if (f.mass[v] > 0.0) {
      double s = 0.0;
      for (std::size_t c = 0; c < classes; ++c) {
        s += grad_cls[v * classes + c] * f.class_prob[v * classes + c];
      }
      cls_dot[v] = s;
    }
  }
  for (std::size_t q = 0; q < count; ++q) {
    const double* pq = probs.data() + q * classes;
    double* gp = grad_probs.data() + q * classes;
    Vec3 g_mean = Vec3::Zero();
    Mat3 g_cov = Mat3::Zero();
    double g_weight = 0.0;
    for_each_contribution(
        f.prepared[q], spec, cutoff, [&](std::size_t v, double a, double e, const Vec3& pd) {
          double ga = 0.0;
          if (a < 1.0 - kContributionClamp) {
            ga += grad_occ[v] * f.transmittance[v] / (1.0 - a);
          }
          const double inv_mass = 1.0 / f.mass[v];
          double mix = 0.0;
          for (std::size_t c = 0; c < classes; ++c) {
            mix += grad_cls[v * classes + c] * pq[c];
            gp[c] += grad_cls[v * classes + c] * a * inv_mass;
          }
          ga += (mix - cls_dot[v]) * inv_mass;
          g_weight += ga * e;
          g_mean += (ga * a) * pd;
          g_cov += (0.5 * ga * a) * (pd * pd.transpose());
        });
    double* gr = grad_packed.data() + q * kPackedSliceWidth;
    for (int i = 0; i < 3; ++i) gr[i] += g_mean[i];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) gr[3 + 3 * i + j] += g_cov(i, j);
    }
    gr[12] += g_weight;
  }
}

inline void pack_slices(std::span<const SlicedGaussian3D> gaussians, int num_classes,
                        std::vector<double>& packed, std::vector<double>& probs) {
  packed.assign(gaussians.size() * kPackedSliceWidth, 0.0);
  probs.assign(gaussians.size() * static_cast<std::size_t>(num_classes), 0.0);
  for (std::size_t q = 0; q < gaussians.size(); ++q) {
    const auto& g = gaussians[q];
    if (g.logits.size() != num_classes) {
      fail(ErrorKind::validation, "splat: primitive " + std::to_string(q) + " has " +
                                      std::to_string(g.logits.size()) + " logits, grid expects " +
                                      std::to_string(num_classes));
    }
    double* row = packed.data() + q * kPackedSliceWidth;
    for (int i = 0; i < 3; ++i) row[i] = g.mean[i];
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) row[3 + 3 * i + j] = g.cov(i, j);
    }
    row[12] = g.weight;
    const VecX p = softmax(g.logits);
    for (int c = 0; c < num_classes; ++c) probs[q * static_cast<std::size_t>(num_classes) + c] = p[c];
  }
}

}  // namespace detail

/// Local-aggregation splatting: each primitive is rasterized into the
/// bounding box of its cutoff ellipsoid.
inline SemanticOccupancyGrid splat(std::span<const SlicedGaussian3D> gaussians,
                                   const GridSpec& spec,
                                   double cutoff_sigma = kDefaultCutoffSigma) {
  spec.validate();
  if (!(cutoff_sigma > 0.0)) {
    fail(ErrorKind::invalid_parameter, "splat: cutoff_sigma must be positive");
  }
  std::vector<double> packed, probs;
  detail::pack_slices(gaussians, spec.num_classes, packed, probs);
  auto f = detail::splat_forward(packed, probs, gaussians.size(), spec, cutoff_sigma);
  SemanticOccupancyGrid grid(spec);
  for (std::size_t v = 0; v < grid.occ_prob.size(); ++v) {
    grid.occ_prob[v] = 1.0 - f.transmittance[v];
  }
  grid.class_prob = std::move(f.class_prob);
  return grid;
}

/// Brute-force reference: every primitive visits every voxel, no cutoff.
inline SemanticOccupancyGrid splat_dense_oracle(std::span<const SlicedGaussian3D> gaussians,
                                                const GridSpec& spec) {
  spec.validate();
  const int classes = spec.num_classes;
  std::vector<VecX> probs;
  std::vector<Eigen::LDLT<Mat3>> factors;
  for (std::size_t q = 0; q < gaussians.size(); ++q) {
    if (gaussians[q].logits.size() != classes) {
      fail(ErrorKind::validation, "splat_dense_oracle: logit count mismatch at primitive " +
                                      std::to_string(q));
    }
    detail::check_covariance(gaussians[q].cov, q);
    probs.push_back(softmax(gaussians[q].logits));
    factors.emplace_back(gaussians[q].cov);
  }
  SemanticOccupancyGrid grid(spec);
  for (int ix = 0; ix < spec.dims[0]; ++ix) {
    for (int iy = 0; iy < spec.dims[1]; ++iy) {
      for (int iz = 0; iz < spec.dims[2]; ++iz) {
        const Vec3 x = spec.center(ix, iy, iz);
        double keep = 1.0;
        double mass = 0.0;
        VecX mix = VecX::Zero(classes);
        for (std::size_t q = 0; q < gaussians.size(); ++q) {
          const Vec3 d = x - gaussians[q].mean;
          const double m = d.dot(factors[q].solve(d));
          const double a = gaussians[q].weight * std::exp(-0.5 * m);
          keep *= 1.0 - std::min(a, 1.0 - kContributionClamp);
          mass += a;
          mix += a * probs[q];
        }
        const std::size_t v = spec.index(ix, iy, iz);
        grid.occ_prob[v] = 1.0 - keep;
        if (mass > 0.0) {
          for (int c = 0; c < classes; ++c) {
            grid.class_prob[v * static_cast<std::size_t>(classes) + c] = mix[c] / mass;
          }
        }
      }
    }
  }
  return grid;
}

/// Hard labels: argmax class where occupancy reaches the threshold, else
/// free. Ties go to the lowest class index.
inline LabelGrid to_labels(const SemanticOccupancyGrid& grid, double occ_threshold = 0.5) {
  if (!(occ_threshold > 0.0 && occ_threshold < 1.0)) {
    fail(ErrorKind::invalid_parameter, "to_labels: occ_threshold must lie in (0,1)");
  }
  LabelGrid out(grid.spec);
  const int classes = grid.spec.num_classes;
  for (std::size_t v = 0; v < grid.occ_prob.size(); ++v) {
    if (grid.occ_prob[v] < occ_threshold) {
      continue;
    }
    int best = 0;
    for (int c = 1; c < classes; ++c) {
      if (grid.cls(v, c) > grid.cls(v, best)) {
        best = c;
      }
    }
    out.labels[v] = static_cast<std::uint8_t>(best);
  }
  return out;
}

}  // namespace occ4d
