#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "rfr/losses.hpp"
#include "rfr/metrics.hpp"
#include "rfr/oracle.hpp"
#include "test_util.hpp"

using namespace rfr;
using rfr::testing::random_mask;
using rfr::testing::random_tensor;

namespace {

Var<double> scalar(double v) { return Var<double>(Tensor<double>(Shape{1, 1, 1, 1}, v)); }

Tensor<double> half_mask(std::size_t side) {
  Tensor<double> m(Shape{1, 1, side, side});
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side / 2; ++x) m.at(0, 0, y, x) = 1;
  return m;
}

}  // namespace

TEST(RegionLossTest, IdenticalInputsGiveZero) {
  Rng rng(1);
  const auto gt = random_tensor(Shape{2, 3, 8, 8}, rng, 0, 1);
  const auto m = random_mask(Shape{2, 1, 8, 8}, rng, 0.5);
  const auto [hole, valid] = l1_region_losses(Var<double>(gt), gt, m);
  EXPECT_EQ(hole.value()[0], 0.0);
  EXPECT_EQ(valid.value()[0], 0.0);
}

TEST(RegionLossTest, FullMaskHasNoHoleLoss) {
  Rng rng(2);
  const auto gt = random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1);
  const auto pred = random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1);
  const auto [hole, valid] = l1_region_losses(Var<double>(pred), gt, Tensor<double>(Shape{1, 1, 8, 8}, 1.0));
  EXPECT_EQ(hole.value()[0], 0.0);
  EXPECT_GT(valid.value()[0], 0.0);
}

TEST(RegionLossTest, ConstantErrorOnHalfMaskedImage) {
  const Tensor<double> gt(Shape{1, 3, 8, 8}, 0.5);
  const Tensor<double> pred(Shape{1, 3, 8, 8}, 0.7);
  const auto [hole, valid] = l1_region_losses(Var<double>(pred), gt, half_mask(8));
  EXPECT_NEAR(hole.value()[0], 0.1, 1e-12);
  EXPECT_NEAR(valid.value()[0], 0.1, 1e-12);
}

TEST(RegionLossTest, ShapeMismatchIsADimensionError) {
  const Tensor<double> gt(Shape{1, 3, 8, 8});
  EXPECT_THROW(l1_region_losses(Var<double>(Tensor<double>(Shape{1, 3, 8, 4})), gt, half_mask(8)),
               DimensionError);
}

TEST(PerceptualLossTest, MatchesDirectAccumulation) {
  const FeatureExtractor<double> fx(3);
  Rng rng(4);
  const auto gt = random_tensor(Shape{2, 3, 16, 16}, rng, 0, 1);
  const auto pred = random_tensor(Shape{2, 3, 16, 16}, rng, 0, 1);
  EXPECT_EQ(perceptual_loss(Var<double>(gt), gt, fx).value()[0], 0.0);
  const auto fp = fx.features(Var<double>(pred));
  const auto fg = fx.features(Var<double>(gt));
  ASSERT_EQ(fp.size(), 3u);
  double expected = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(fp[i].shape().c, FeatureExtractor<double>::kChannels[i]);
    EXPECT_EQ(fp[i].shape().h, 16u >> (i + 1));
    double acc = 0;
    for (std::size_t k = 0; k < fp[i].value().numel(); ++k) acc += std::abs(fg[i].value()[k] - fp[i].value()[k]);
    expected += acc / double(fp[i].value().numel());
  }
  EXPECT_NEAR(perceptual_loss(Var<double>(pred), gt, fx).value()[0], expected, 1e-12);
}

TEST(StyleLossTest, TwoChannelHandCase) {
  // phi_gt rows: (1,2,3,4) and (0,1,0,1); phi_pred rows: (1,0,0,0) and (0,0,0,1).
  const double g[] = {1, 2, 3, 4, 0, 1, 0, 1};
  const double p[] = {1, 0, 0, 0, 0, 0, 0, 1};
  const Tensor<double> phi_gt(Shape{1, 2, 2, 2}, std::span<const double>(g));
  const Tensor<double> phi_pred(Shape{1, 2, 2, 2}, std::span<const double>(p));
  // G_gt = [[30, 6], [6, 2]], G_pred = [[1, 0], [0, 1]]; |diff| sums to 29+6+6+1 = 42.
  // (1/C^2) * 42 / (H W C) = (1/4) * 42 / 8.
  EXPECT_NEAR(style_term(Var<double>(phi_pred), Var<double>(phi_gt)).value()[0], 42.0 / 32.0, 1e-12);
  EXPECT_EQ(style_term(Var<double>(phi_gt), Var<double>(phi_gt)).value()[0], 0.0);
  const Tensor<double> zero(Shape{1, 2, 2, 2});
  EXPECT_EQ(style_term(Var<double>(zero), Var<double>(zero)).value()[0], 0.0);
}

TEST(StyleLossTest, IdenticalImagesGiveZero) {
  const FeatureExtractor<double> fx(5);
  Rng rng(6);
  const auto gt = random_tensor(Shape{1, 3, 16, 16}, rng, 0, 1);
  EXPECT_EQ(style_loss(Var<double>(gt), gt, fx).value()[0], 0.0);
}

TEST(TotalLossTest, WeightedSum) {
  const LossWeights w;
  EXPECT_DOUBLE_EQ(w.hole, 6.0);
  EXPECT_DOUBLE_EQ(w.valid, 1.0);
  EXPECT_DOUBLE_EQ(w.perceptual, 0.1);
  EXPECT_DOUBLE_EQ(w.style, 180.0);
  const auto one = scalar(1);
  EXPECT_NEAR(total_loss(one, one, one, one, w).value()[0], 187.1, 1e-12);
  EXPECT_NEAR(total_loss(LossValues{0, 1, 1, 1, 1}, w), 187.1, 1e-12);
  EXPECT_EQ(total_loss(LossValues{}, w), 0.0);
  EXPECT_EQ(total_loss(LossValues{0, 3, 4, 5, 6}, LossWeights{0, 0, 0, 0}), 0.0);
}

TEST(TotalLossTest, GradientWrtPredictionMatchesFiniteDifferences) {
  const FeatureExtractor<double> fx(7);
  Rng rng(8);
  const auto gt = random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1);
  const auto m = random_mask(Shape{1, 1, 8, 8}, rng, 0.5);
  Tensor<double> pred = random_tensor(Shape{1, 3, 8, 8}, rng, 0, 1);
  auto eval = [&](Tape<double>* tape) {
    const Var<double> p = tape ? tape->leaf(pred) : Var<double>(pred);
    return std::pair{compute_losses(p, gt, m, fx, LossWeights{}).total, p};
  };
  Tape<double> tape;
  auto [loss, p] = eval(&tape);
  tape.backward(loss);
  std::vector<double*> where;
  auto d = pred.data();
  for (double& v : d) where.push_back(&v);
  const auto numeric = oracle::finite_diff([&] { return eval(nullptr).first.value()[0]; }, where);
  std::size_t checked = 0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    EXPECT_LT(oracle::gradient_rel_error(p.grad()[i], numeric[i]), 1e-4) << i;
    ++checked;
  }
  EXPECT_EQ(checked, 192u);
}

TEST(LossTermsTest, AllComponentsNonNegative) {
  const FeatureExtractor<float> fx(9);
  Rng rng(10);
  const auto gt = random_tensor<float>(Shape{2, 3, 16, 16}, rng, 0, 1);
  const auto pred = random_tensor<float>(Shape{2, 3, 16, 16}, rng, 0, 1);
  const auto m = random_mask<float>(Shape{2, 1, 16, 16}, rng, 0.6);
  const auto v = values_of(compute_losses(Var<float>(pred), gt, m, fx, LossWeights{}));
  EXPECT_GT(v.hole, 0);
  EXPECT_GT(v.valid, 0);
  EXPECT_GT(v.perceptual, 0);
  EXPECT_GT(v.style, 0);
  EXPECT_NEAR(v.total, total_loss(v, LossWeights{}), 1e-4 * v.total);
}

TEST(MetricsTest, IdenticalImages) {
  Rng rng(11);
  const auto a = random_tensor(Shape{1, 3, 16, 16}, rng, 0, 1);
  const auto m = metrics(a, a);
  EXPECT_EQ(m.psnr, std::numeric_limits<double>::infinity());
  EXPECT_NEAR(m.ssim, 1.0, 1e-12);
  EXPECT_EQ(m.mean_l1, 0.0);
}

TEST(MetricsTest, PsnrAtKnownMse) {
  const Tensor<double> a(Shape{1, 3, 8, 8}, 0.5);
  const Tensor<double> b(Shape{1, 3, 8, 8}, 0.6);  // MSE = 0.01
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
  EXPECT_NEAR(mean_l1(a, b), 0.1, 1e-12);
}

TEST(MetricsTest, ConstantImagesSsim) {
  const Tensor<double> zero(Shape{1, 1, 16, 16}, 0.0);
  const Tensor<double> one(Shape{1, 1, 16, 16}, 1.0);
  const double c1 = 1e-4;
  EXPECT_NEAR(ssim(zero, one), c1 / (1 + c1), 1e-12);
}

TEST(MetricsTest, SsimIsSymmetricAndBounded) {
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const auto a = random_tensor(Shape{1, 3, 20, 13}, rng, 0, 1);
    const auto b = random_tensor(Shape{1, 3, 20, 13}, rng, 0, 1);
    const double ab = ssim(a, b);
    EXPECT_NEAR(ab, ssim(b, a), 1e-7);
    EXPECT_LE(ab, 1.0);
    EXPECT_GE(ab, -1.0);
  }
}

TEST(MetricsTest, ShapeMismatchIsADimensionError) {
  EXPECT_THROW(psnr(Tensor<double>(Shape{1, 3, 4, 4}), Tensor<double>(Shape{1, 3, 4, 5})), DimensionError);
}
