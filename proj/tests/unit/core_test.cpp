#include <algorithm>
#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "occ4d/core.hpp"
#include "test_util.hpp"

using namespace occ4d;

TEST(QuatToRotation, IdentityQuaternion) {
  EXPECT_TRUE(quat_to_rotation(Vec4(1, 0, 0, 0)).isApprox(Mat3::Identity(), 0.0));
}

TEST(QuatToRotation, HalfTurnAboutZ) {
  const Mat3 r = quat_to_rotation(Vec4(0, 0, 0, 1));
  const Mat3 expected = Vec3(-1, -1, 1).asDiagonal();
  EXPECT_LT((r - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(QuatToRotation, RandomQuaternionsAreProperRotations) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const Vec4 q(n(rng), n(rng), n(rng), n(rng));
    const Mat3 r = quat_to_rotation(q);
    EXPECT_LT((r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-12);
  }
}

TEST(QuatToRotation, ZeroQuaternionIsInvalid) {
  try {
    quat_to_rotation(Vec4::Zero());
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_parameter);
  }
}

TEST(ConditionalCovariance, UnitScalesIdentityRotation) {
  EXPECT_TRUE(conditional_covariance(Vec3::Zero(), Vec4(1, 0, 0, 0)).isApprox(Mat3::Identity()));
}

TEST(ConditionalCovariance, LogScaleDoubling) {
  const Mat3 c = conditional_covariance(Vec3(std::log(2.0), 0, 0), Vec4(1, 0, 0, 0));
  EXPECT_LT((c - Mat3(Vec3(4, 1, 1).asDiagonal())).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(ConditionalCovariance, EigenvaluesAreSquaredScales) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 500; ++i) {
    const auto g = fixtures::random_gaussian(rng);
    const Mat3 c = conditional_covariance(g.log_scales, g.quat);
    Eigen::SelfAdjointEigenSolver<Mat3> es(c);
    std::array<double, 3> got{es.eigenvalues()[0], es.eigenvalues()[1], es.eigenvalues()[2]};
    const Vec3 s = g.scales();
    std::array<double, 3> want{s[0] * s[0], s[1] * s[1], s[2] * s[2]};
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(got[k], want[k], 1e-9);
    EXPECT_TRUE(is_symmetric_psd(c));
  }
}

TEST(TemporalWeight, AnalyticValues) {
  Gaussian4D g;
  g.mu_t = 1.0;
  g.log_sigma_t = std::log(0.5);
  EXPECT_DOUBLE_EQ(temporal_weight(g, 1.0), 1.0);
  EXPECT_NEAR(temporal_weight(g, 1.5), std::exp(-0.5), 1e-15);
  EXPECT_NEAR(temporal_weight(g, 1.5), 0.606531, 1e-6);
  EXPECT_NEAR(temporal_weight(g, 2.0), 0.135335, 1e-6);
}

TEST(TemporalWeight, SymmetricAndDecreasing) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const auto g = fixtures::random_gaussian(rng);
    double prev = temporal_weight(g, g.mu_t);
    EXPECT_EQ(prev, 1.0);
    for (double d = 0.05; d < 3.0; d += 0.05) {
      const double w = temporal_weight(g, g.mu_t + d);
      EXPECT_NEAR(w, temporal_weight(g, g.mu_t - d), 1e-14);
      EXPECT_LT(w, prev);
      prev = w;
    }
  }
}

TEST(EffectiveVelocity, Examples) {
  Gaussian4D g;
  g.alpha = 0.0;
  g.v_dyn = Vec2(9, 9);
  EXPECT_EQ(effective_velocity(g, Vec2(-3, 0)), Vec3(-3, 0, 0));
  g.alpha = 1.0;
  g.v_dyn = Vec2(5, 0);
  EXPECT_EQ(effective_velocity(g, Vec2(-5, 0)), Vec3(0, 0, 0));
  g.alpha = 0.5;
  g.v_dyn = Vec2(2, -4);
  EXPECT_EQ(effective_velocity(g, Vec2(0, 0)), Vec3(1, -2, 0));
}

TEST(EffectiveVelocity, RejectsAlphaOutsideUnitInterval) {
  Gaussian4D g;
  g.alpha = 1.5;
  EXPECT_THROW(effective_velocity(g, Vec2::Zero()), Error);
  g.alpha = -0.1;
  EXPECT_THROW(effective_velocity(g, Vec2::Zero()), Error);
}

TEST(EffectiveVelocity, ZComponentAlwaysZeroAndInterpolates) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-10, 10);
  for (int i = 0; i < 500; ++i) {
    auto g = fixtures::random_gaussian(rng);
    const Vec2 vs(u(rng), u(rng));
    const Vec3 v = effective_velocity(g, vs);
    EXPECT_EQ(v.z(), 0.0);
    for (int k = 0; k < 2; ++k) {
      const double lo = std::min(vs[k], vs[k] + g.v_dyn[k]);
      const double hi = std::max(vs[k], vs[k] + g.v_dyn[k]);
      EXPECT_GE(v[k], lo - 1e-12);
      EXPECT_LE(v[k], hi + 1e-12);
    }
  }
}

TEST(SliceAt, MeanMovesLinearly) {
  Gaussian4D g;
  const auto s = slice_at(g, Vec3(1, 2, 0), 0.5);
  EXPECT_EQ(s.mean, Vec3(0.5, 1.0, 0.0));
}

TEST(SliceAt, AnchorSliceKeepsMeanAndOpacity) {
  std::mt19937_64 rng(5);
  const auto g = fixtures::random_gaussian(rng);
  const auto s = slice_at(g, Vec3(3, -1, 0), g.mu_t);
  EXPECT_EQ(s.mean, g.mu_s);
  EXPECT_EQ(s.weight, g.opacity());
}

TEST(SliceAt, CovarianceIsTimeInvariant) {
  std::mt19937_64 rng(6);
  const auto g = fixtures::random_gaussian(rng);
  const Vec3 v(1.5, -2.0, 0.0);
  const auto a = slice_at(g, v, 0.1);
  const auto b = slice_at(g, v, 2.9);
  EXPECT_TRUE(a.cov == b.cov);
  EXPECT_LE(a.weight, g.opacity());
  EXPECT_LE(b.weight, g.opacity());
}

TEST(SliceAt, RejectsVerticalVelocity) {
  Gaussian4D g;
  try {
    slice_at(g, Vec3(0, 0, 0.1), 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::invalid_parameter);
  }
}

TEST(ReconstructJoint, SubstitutionExample) {
  Gaussian4D g;  // unit scales, identity rotation, sigma_t = 1
  const auto j = reconstruct_joint(g, Vec3(1, 2, 0));
  Mat3 spatial;
  spatial << 2, 2, 0, 2, 5, 0, 0, 0, 1;
  EXPECT_LT((j.cov4.topLeftCorner<3, 3>() - spatial).cwiseAbs().maxCoeff(), 1e-15);
  const Vec3 col = j.cov4.topRightCorner<3, 1>();
  EXPECT_EQ(col, Vec3(1, 2, 0));
  EXPECT_EQ(j.cov4(3, 3), 1.0);
}

TEST(ReconstructJoint, ZeroVelocityIsBlockDiagonal) {
  std::mt19937_64 rng(7);
  const auto g = fixtures::random_gaussian(rng);
  const auto j = reconstruct_joint(g, Vec3::Zero());
  const Vec3 col = j.cov4.topRightCorner<3, 1>();
  const Eigen::RowVector3d row = j.cov4.bottomLeftCorner<1, 3>();
  EXPECT_EQ(col, Vec3::Zero());
  EXPECT_EQ(row, Eigen::RowVector3d::Zero());
}

TEST(ReconstructJoint, RandomInstancesArePsd) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-8, 8);
  for (int i = 0; i < 1000; ++i) {
    const auto g = fixtures::random_gaussian(rng);
    const auto j = reconstruct_joint(g, Vec3(u(rng), u(rng), 0));
    EXPECT_TRUE(is_symmetric_psd(j.cov4)) << j.cov4;
  }
}

TEST(ConditionJoint, RecoversConditionalCovarianceExactly) {
  Gaussian4D g;
  const auto j = reconstruct_joint(g, Vec3(1, 2, 0));
  for (double t : {-1.0, 0.0, 0.7, 2.0}) {
    const auto c = condition_joint(j, t);
    EXPECT_TRUE(c.cov == Mat3::Identity()) << c.cov;
  }
  const auto c = condition_joint(j, 2.0);
  EXPECT_EQ(c.mean, Vec3(2, 4, 0));
}

TEST(ConditionJoint, MatchesSliceAtOnRandomInstances) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-8, 8), ut(0, 3);
  for (int i = 0; i < 2000; ++i) {
    const auto g = fixtures::random_gaussian(rng);
    const Vec3 v(u(rng), u(rng), 0);
    const double t = ut(rng);
    const auto c = condition_joint(reconstruct_joint(g, v), t);
    const auto s = slice_at(g, v, t);
    EXPECT_LT((c.mean - s.mean).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((c.cov - s.cov).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(ConditionJoint, RejectsNonPositiveTemporalVariance) {
  JointGaussian4D j;
  j.cov4(3, 3) = 0.0;
  try {
    condition_joint(j, 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_covariance);
  }
}
