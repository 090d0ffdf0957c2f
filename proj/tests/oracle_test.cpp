#include <gtest/gtest.h>

#include <cmath>

#include "rfr/oracle.hpp"
#include "test_util.hpp"

using namespace rfr;
using rfr::testing::random_mask;
using rfr::testing::random_tensor;

TEST(FiniteDiffTest, QuadraticAndLinear) {
  double theta = 3;
  const auto g = oracle::finite_diff([&] { return theta * theta; }, {&theta});
  EXPECT_NEAR(g[0], 6.0, 1e-6);
  EXPECT_EQ(theta, 3.0);

  double a = 0.25, b = -2;
  const auto lin = oracle::finite_diff([&] { return 4 * a - 0.5 * b + 1; }, {&a, &b});
  EXPECT_NEAR(lin[0], 4.0, 1e-10);
  EXPECT_NEAR(lin[1], -0.5, 1e-10);
}

TEST(FiniteDiffTest, NonFiniteEvaluationReportsNaN) {
  double x = 0;
  const auto g = oracle::finite_diff([&] { return std::log(x); }, {&x});
  EXPECT_TRUE(std::isnan(g[0]));
  EXPECT_EQ(x, 0.0);
}

TEST(CompareTest, PassFollowsRelativeError) {
  const Tensor<double> ref(Shape{1, 1, 1, 2}, 2.0);
  Tensor<double> got = ref;
  got.data()[1] = 2.0 + 1e-6;
  const auto ok = oracle::compare("near", got, ref, 1e-5);
  EXPECT_TRUE(ok.pass);
  EXPECT_NEAR(ok.max_rel, 5e-7, 1e-12);
  EXPECT_FALSE(oracle::compare("far", got, ref, 1e-7).pass);
  EXPECT_EQ(ok.line().rfind("PASS near", 0), 0u);
}

TEST(NaivePartialConvTest, FullAndEmptyMasks) {
  Rng rng(1);
  const auto x = random_tensor(Shape{1, 2, 6, 6}, rng);
  const auto w = random_tensor(Shape{3, 2, 3, 3}, rng);
  const auto b = random_tensor(Shape{3, 1, 1, 1}, rng);
  const auto full = oracle::naive_partial_conv(x, Tensor<double>(Shape{1, 1, 6, 6}, 1.0), w, b, 1, 0);
  const auto dense = oracle::naive_conv2d(x, w, b, 1, 0);
  EXPECT_LE(rfr::testing::max_abs_diff(full.features, dense), 1e-12);
  const auto empty = oracle::naive_partial_conv(x, Tensor<double>(Shape{1, 1, 6, 6}), w, b, 1, 1);
  for (double v : empty.features.values()) EXPECT_EQ(v, 0.0);
  for (double v : empty.mask.values()) EXPECT_EQ(v, 0.0);
}

TEST(MaskDilationTest, PointAndFull) {
  Tensor<double> point(Shape{1, 1, 11, 11});
  point.at(0, 0, 5, 5) = 1;
  const auto once = oracle::mask_dilation(point, 3, 1);
  const auto twice = oracle::mask_dilation(point, 3, 2);
  double n1 = 0, n2 = 0;
  for (double v : once.values()) n1 += v;
  for (double v : twice.values()) n2 += v;
  EXPECT_EQ(n1, 9.0);
  EXPECT_EQ(n2, 25.0);
  const Tensor<double> full(Shape{1, 1, 4, 4}, 1.0);
  EXPECT_TRUE(bit_equal(oracle::mask_dilation(full, 7, 3), full));
}

TEST(NaiveMergeTest, HandCase) {
  Tensor<double> f1(Shape{1, 1, 1, 2}, 3.0), f2(Shape{1, 1, 1, 2}, 5.0);
  Tensor<double> m1(Shape{1, 1, 1, 2}), m2(Shape{1, 1, 1, 2});
  m1.at(0, 0, 0, 0) = 1;
  m2.at(0, 0, 0, 0) = 1;
  const auto out = oracle::naive_merge({f1, f2}, {m1, m2});
  EXPECT_EQ(out[0], 4.0);
  EXPECT_EQ(out[1], 0.0);
}

TEST(NaiveAttentionTest, ScoresAreDistributions) {
  Rng rng(2);
  const auto f = random_tensor(Shape{1, 4, 3, 3}, rng);
  const auto r = oracle::naive_attention(f, std::nullopt, 3);
  for (std::size_t q = 0; q < 9; ++q) {
    double s = 0;
    for (std::size_t k = 0; k < 9; ++k) s += r.score[k * 9 + q];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(GradientRelErrorTest, FloorProtectsTinyValues) {
  EXPECT_EQ(oracle::gradient_rel_error(0, 0), 0.0);
  EXPECT_NEAR(oracle::gradient_rel_error(1e-9, 2e-9), 1e-9 / 1e-6, 1e-15);
  EXPECT_NEAR(oracle::gradient_rel_error(1.0, 1.1), 0.1 / 1.1, 1e-12);
}
