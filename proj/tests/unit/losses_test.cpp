#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "occ4d/diff/gradcheck.hpp"
#include "occ4d/diff/losses.hpp"

using namespace occ4d;
using namespace occ4d::diff;

namespace {

// Lovasz extension by its definition: sort errors descending and take the
// increments of the Jaccard loss of each prefix set.
double lovasz_reference(const std::vector<double>& errors, const std::vector<bool>& fg) {
  const std::size_t n = errors.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return errors[a] > errors[b]; });
  const double gts = static_cast<double>(std::count(fg.begin(), fg.end(), true));
  double loss = 0.0, prev = 0.0;
  double fg_in = 0.0, bg_in = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    (fg[order[r]] ? fg_in : bg_in) += 1.0;
    const double j = 1.0 - (gts - fg_in) / (gts + bg_in);
    loss += errors[order[r]] * (j - prev);
    prev = j;
  }
  return loss;
}

Tensor random_simplex_rows(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::gamma_distribution<double> gam(1.0, 1.0);
  Tensor t = Tensor::matrix(n, k);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += (t(i, c) = gam(rng) + 1e-3);
    for (std::size_t c = 0; c < k; ++c) t(i, c) /= s;
  }
  return t;
}

}  // namespace

TEST(CrossEntropy, UniformThreeWay) {
  Graph g;
  Var p = g.constant(Tensor({1, 3}, {1.0 / 3, 1.0 / 3, 1.0 / 3}));
  const std::vector<std::uint8_t> labels{1};
  const std::vector<double> w{1, 1, 1};
  EXPECT_NEAR(cross_entropy_loss(p, labels, w).value().item(), std::log(3.0), 1e-15);
}

TEST(CrossEntropy, WeightedMean) {
  Graph g;
  Var p = g.constant(Tensor({2, 2}, {0.5, 0.5, 0.25, 0.75}));
  const std::vector<std::uint8_t> labels{0, 1};
  const std::vector<double> w{2.0, 1.0};
  const double expect = (2.0 * std::log(2.0) + 1.0 * -std::log(0.75)) / 3.0;
  EXPECT_NEAR(cross_entropy_loss(p, labels, w).value().item(), expect, 1e-15);
}

TEST(CrossEntropy, ProbabilityFloor) {
  Graph g;
  Var p = g.constant(Tensor({1, 2}, {0.0, 1.0}));
  const std::vector<std::uint8_t> labels{0};
  const std::vector<double> w{1, 1};
  EXPECT_NEAR(cross_entropy_loss(p, labels, w).value().item(), -std::log(1e-12), 1e-9);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(41);
  ParameterStore store;
  store.add("p", random_simplex_rows(rng, 10, 4));
  std::vector<std::uint8_t> labels(10);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng() % 4);
  const std::vector<double> w{1.0, 2.0, 0.5, 1.5};
  const auto r = finite_diff_check(
      [&](Graph& g, ParameterStore& s) { return cross_entropy_loss(g.parameter(s, "p"), labels, w); },
      store);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(CrossEntropy, RejectsOutOfRangeLabel) {
  Graph g;
  Var p = g.constant(Tensor({1, 2}, {0.5, 0.5}));
  const std::vector<std::uint8_t> labels{2};
  const std::vector<double> w{1, 1};
  try {
    cross_entropy_loss(p, labels, w);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::validation);
  }
}

TEST(Lovasz, SingleVoxelHalfProbability) {
  Graph g;
  Var p = g.constant(Tensor({1, 2}, {0.5, 0.5}));
  const std::vector<std::uint8_t> labels{0};
  // class 0: error 0.5 with J=1; class 1 absent.
  EXPECT_NEAR(lovasz_softmax_loss(p, labels).value().item(), 0.5, 1e-15);
}

TEST(Lovasz, PerfectPredictionIsZero) {
  Graph g;
  Var p = g.constant(Tensor({3, 2}, {1, 0, 0, 1, 1, 0}));
  const std::vector<std::uint8_t> labels{0, 1, 0};
  EXPECT_EQ(lovasz_softmax_loss(p, labels).value().item(), 0.0);
}

TEST(Lovasz, HardPredictionEqualsOneMinusIou) {
  std::mt19937_64 rng(42);
  const std::size_t n = 60, k = 3;
  std::vector<std::uint8_t> labels(n), pred(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = static_cast<std::uint8_t>(rng() % k);
    pred[i] = rng() % 3 == 0 ? static_cast<std::uint8_t>(rng() % k) : labels[i];
  }
  Tensor p = Tensor::matrix(n, k);
  for (std::size_t i = 0; i < n; ++i) p(i, pred[i]) = 1.0;
  const auto losses = lovasz_class_losses(p, labels);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t tp = 0, uni = 0;
    for (std::size_t i = 0; i < n; ++i) {
      tp += labels[i] == c && pred[i] == c;
      uni += labels[i] == c || pred[i] == c;
    }
    ASSERT_TRUE(losses[c].has_value());
    EXPECT_EQ(*losses[c], 1.0 - static_cast<double>(tp) / static_cast<double>(uni));
  }
}

TEST(Lovasz, MatchesDefinitionOnRandomInputs) {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 40, k = 4;
    const Tensor p = random_simplex_rows(rng, n, k);
    std::vector<std::uint8_t> labels(n);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng() % 3);  // class 3 absent
    const auto losses = lovasz_class_losses(p, labels);
    EXPECT_FALSE(losses[3].has_value());
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<double> err(n);
      std::vector<bool> fg(n);
      for (std::size_t i = 0; i < n; ++i) {
        fg[i] = labels[i] == c;
        err[i] = fg[i] ? 1.0 - p(i, c) : p(i, c);
      }
      EXPECT_NEAR(*losses[c], lovasz_reference(err, fg), 1e-12);
    }
  }
}

TEST(Lovasz, GradientMatchesFiniteDifferencesAwayFromTies) {
  std::mt19937_64 rng(44);
  ParameterStore store;
  store.add("p", random_simplex_rows(rng, 12, 3));
  std::vector<std::uint8_t> labels(12);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng() % 3);
  const auto r = finite_diff_check(
      [&](Graph& g, ParameterStore& s) { return lovasz_softmax_loss(g.parameter(s, "p"), labels); },
      store);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(OccupancyDistribution, RowsSumToOneAndGradient) {
  std::mt19937_64 rng(45);
  ParameterStore store;
  Tensor field = random_simplex_rows(rng, 6, 4);
  for (std::size_t i = 0; i < 6; ++i) field(i, 3) = 0.1 + 0.8 * (i / 6.0);
  store.add("f", field);
  {
    Graph g;
    const Tensor y = occupancy_distribution(g.constant(field)).value();
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < 4; ++c) s += y(i, c);
      EXPECT_NEAR(s, field(i, 0) * field(i, 3) + field(i, 1) * field(i, 3) +
                         field(i, 2) * field(i, 3) + 1.0 - field(i, 3),
                  1e-15);
      EXPECT_EQ(y(i, 3), 1.0 - field(i, 3));
    }
  }
  std::vector<std::uint8_t> labels{0, 1, 2, 3, 3, 1};
  const std::vector<double> w{1, 1, 1, 1};
  const auto r = finite_diff_check(
      [&](Graph& g, ParameterStore& s) {
        return cross_entropy_loss(occupancy_distribution(g.parameter(s, "f")), labels, w);
      },
      store);
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Mse, ExampleValue) {
  Graph g;
  Var a = g.constant(Tensor({1, 2}, {0.0, 0.0}));
  Var b = g.constant(Tensor({1, 2}, {3.0, 4.0}));
  EXPECT_DOUBLE_EQ(mse_loss(a, b).value().item(), 12.5);
}
