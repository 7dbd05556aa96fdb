#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "occ4d/splat.hpp"
#include "test_util.hpp"

using namespace occ4d;

namespace {

SlicedGaussian3D blob(const Vec3& mean, double sigma, double weight, const VecX& logits) {
  SlicedGaussian3D g;
  g.mean = mean;
  g.cov = sigma * sigma * Mat3::Identity();
  g.weight = weight;
  g.logits = logits;
  return g;
}

GridSpec small_grid(int classes = 2) { return GridSpec{Vec3(-2, -2, -2), {8, 8, 8}, 0.5, classes}; }

}  // namespace

TEST(Splat, EmptySetGivesZeroOccupancy) {
  const auto grid = splat({}, small_grid());
  for (double o : grid.occ_prob) EXPECT_EQ(o, 0.0);
  for (double c : grid.class_prob) EXPECT_EQ(c, 0.0);
}

TEST(Splat, TwoCoincidentHalfContributions) {
  // Both primitives centred on the voxel (4,4,4) centre at (0.25,0.25,0.25).
  const Vec3 c(0.25, 0.25, 0.25);
  VecX l0(2), l1(2);
  l0 << 10, -10;
  l1 << -10, 10;
  std::vector<SlicedGaussian3D> gs{blob(c, 0.3, 0.5, l0), blob(c, 0.3, 0.5, l1)};
  const auto spec = small_grid();
  const auto grid = splat(gs, spec);
  const std::size_t v = spec.index(4, 4, 4);
  EXPECT_NEAR(grid.occ_prob[v], 0.75, 1e-15);
  EXPECT_NEAR(grid.cls(v, 0), 0.5, 1e-8);
  EXPECT_NEAR(grid.cls(v, 1), 0.5, 1e-8);
}

TEST(Splat, SingleContributionIsClampedBelowOne) {
  const Vec3 c(0.25, 0.25, 0.25);
  VecX l(2);
  l << 0, 0;
  std::vector<SlicedGaussian3D> gs{blob(c, 0.3, 1.0, l)};
  const auto spec = small_grid();
  const auto grid = splat(gs, spec);
  EXPECT_NEAR(grid.occ_prob[spec.index(4, 4, 4)], 1.0 - 1e-6, 1e-15);
}

TEST(Splat, OccupancyBoundsAndClassSimplex) {
  std::mt19937_64 rng(21);
  const GridSpec spec{Vec3(-6, -6, -2), {24, 24, 8}, 0.5, 4};
  std::vector<SlicedGaussian3D> gs;
  for (int i = 0; i < 40; ++i) {
    const auto g = fixtures::random_gaussian(rng);
    gs.push_back(slice_at(g, effective_velocity(g, Vec2(-1, 0.5)), 1.0));
  }
  const auto grid = splat(gs, spec);
  for (std::size_t v = 0; v < spec.voxel_count(); ++v) {
    ASSERT_GE(grid.occ_prob[v], 0.0);
    ASSERT_LE(grid.occ_prob[v], 1.0);
    double s = 0.0;
    for (int c = 0; c < 4; ++c) {
      ASSERT_GE(grid.cls(v, c), 0.0);
      s += grid.cls(v, c);
    }
    if (grid.occ_prob[v] > 0.0) {
      EXPECT_NEAR(s, 1.0, 1e-9);
    } else {
      EXPECT_EQ(s, 0.0);
    }
  }
}

TEST(Splat, OccupancyIsMonotoneInAddedPrimitives) {
  std::mt19937_64 rng(22);
  const GridSpec spec{Vec3(-6, -6, -2), {24, 24, 8}, 0.5, 4};
  std::vector<SlicedGaussian3D> gs;
  auto prev = splat(gs, spec);
  for (int i = 0; i < 12; ++i) {
    const auto g = fixtures::random_gaussian(rng);
    gs.push_back(slice_at(g, Vec3::Zero(), g.mu_t));
    const auto next = splat(gs, spec);
    for (std::size_t v = 0; v < spec.voxel_count(); ++v) {
      ASSERT_GE(next.occ_prob[v], prev.occ_prob[v]);
    }
    prev = next;
  }
}

TEST(Splat, PermutationInvariant) {
  std::mt19937_64 rng(23);
  const GridSpec spec{Vec3(-6, -6, -2), {24, 24, 8}, 0.5, 4};
  std::vector<SlicedGaussian3D> gs;
  for (int i = 0; i < 25; ++i) {
    const auto g = fixtures::random_gaussian(rng);
    gs.push_back(slice_at(g, Vec3::Zero(), g.mu_t));
  }
  const auto a = splat(gs, spec);
  std::shuffle(gs.begin(), gs.end(), rng);
  const auto b = splat(gs, spec);
  for (std::size_t v = 0; v < spec.voxel_count(); ++v) {
    EXPECT_NEAR(a.occ_prob[v], b.occ_prob[v], 1e-12);
  }
  for (std::size_t i = 0; i < a.class_prob.size(); ++i) {
    EXPECT_NEAR(a.class_prob[i], b.class_prob[i], 1e-12);
  }
}

TEST(Splat, AgreesWithDenseOracleAtWideCutoff) {
  std::mt19937_64 rng(24);
  const GridSpec spec{Vec3(-6, -6, -2), {24, 24, 8}, 0.5, 4};
  std::vector<SlicedGaussian3D> gs;
  for (int i = 0; i < 30; ++i) {
    const auto g = fixtures::random_gaussian(rng);
    gs.push_back(slice_at(g, effective_velocity(g, Vec2(0.5, 0)), 1.5));
  }
  const auto local = splat(gs, spec, 6.0);
  const auto dense = splat_dense_oracle(gs, spec);
  double worst = 0.0;
  for (std::size_t v = 0; v < spec.voxel_count(); ++v) {
    worst = std::max(worst, std::abs(local.occ_prob[v] - dense.occ_prob[v]));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Splat, DefaultCutoffTruncationIsBounded) {
  // At 3 sigma the discarded tail of a single contribution is below w*exp(-4.5).
  std::mt19937_64 rng(25);
  const GridSpec spec{Vec3(-6, -6, -2), {24, 24, 8}, 0.5, 4};
  const auto g = fixtures::random_gaussian(rng);
  std::vector<SlicedGaussian3D> gs{slice_at(g, Vec3::Zero(), g.mu_t)};
  const auto local = splat(gs, spec);
  const auto dense = splat_dense_oracle(gs, spec);
  for (std::size_t v = 0; v < spec.voxel_count(); ++v) {
    EXPECT_LE(dense.occ_prob[v] - local.occ_prob[v], std::exp(-4.5) + 1e-12);
  }
}

TEST(Splat, DegenerateCovarianceNamesPrimitive) {
  VecX l(2);
  l << 0, 0;
  std::vector<SlicedGaussian3D> gs{blob(Vec3::Zero(), 1.0, 0.5, l), blob(Vec3::Zero(), 1.0, 0.5, l)};
  gs[1].cov = Vec3(1.0, 1.0, 1e-14).asDiagonal();
  try {
    splat(gs, small_grid());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::degenerate_covariance);
    EXPECT_NE(std::string(e.what()).find("1"), std::string::npos);
  }
}

TEST(Splat, RejectsLogitCountMismatch) {
  VecX l(3);
  l << 0, 0, 0;
  std::vector<SlicedGaussian3D> gs{blob(Vec3::Zero(), 1.0, 0.5, l)};
  EXPECT_THROW(splat(gs, small_grid(2)), Error);
}

TEST(ToLabels, ThresholdAndTieBreak) {
  GridSpec spec{Vec3::Zero(), {3, 1, 1}, 1.0, 3};
  SemanticOccupancyGrid grid(spec);
  grid.occ_prob = {0.49, 0.5, 0.9};
  grid.class_prob = {1, 0, 0, 0.4, 0.4, 0.2, 0.1, 0.2, 0.7};
  const auto labels = to_labels(grid);
  EXPECT_EQ(labels.labels[0], 3);  // free
  EXPECT_EQ(labels.labels[1], 0);
  EXPECT_EQ(labels.labels[2], 2);
}

TEST(Splat, TranslationEquivariant) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<SlicedGaussian3D> gs, moved;
  const Vec3 shift(3.7, -1.3, 0.45);
  for (int i = 0; i < 10; ++i) {
    VecX l(3);
    l << u(rng), u(rng), u(rng);
    gs.push_back(blob(Vec3(1.5 * u(rng), 1.5 * u(rng), 1.5 * u(rng)), 0.3 + 0.2 * (u(rng) + 1), 0.8, l));
    moved.push_back(gs.back());
    moved.back().mean += shift;
  }
  GridSpec shifted = small_grid(3);
  shifted.origin += shift;
  const auto a = splat(gs, small_grid(3));
  const auto b = splat(moved, shifted);
  for (std::size_t v = 0; v < a.occ_prob.size(); ++v) EXPECT_NEAR(a.occ_prob[v], b.occ_prob[v], 1e-12);
  for (std::size_t i = 0; i < a.class_prob.size(); ++i) EXPECT_NEAR(a.class_prob[i], b.class_prob[i], 1e-12);
}
