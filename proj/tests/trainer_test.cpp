#include <gtest/gtest.h>

#include <cmath>

#include "rfr/synthetic.hpp"
#include "rfr/trainer.hpp"
#include "test_util.hpp"

using namespace rfr;

namespace {

NetConfig micro() {
  NetConfig cfg;
  cfg.channel_scale = 8;
  cfg.resolution = 32;
  cfg.reasoning.iter_num = 2;
  return cfg;
}

TrainConfig short_run(std::size_t main_steps, std::size_t finetune_steps) {
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.steps_main = main_steps;
  cfg.steps_finetune = finetune_steps;
  cfg.lr_main = 1e-3;
  cfg.lr_finetune = 1e-3;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST(AdamTest, FirstStepMovesByLearningRate) {
  ParamStore<double> store;
  store.add("w", Tensor<double>(Shape{1, 1, 3, 3}, 0.5));
  for (double& g : store.entry("w").grad.data()) g = 1.0;
  Adam<double> adam;
  adam.step(store, 1e-4);
  for (double v : store.entry("w").value.values()) {
    const double delta = 0.5 - v;
    EXPECT_GE(delta, 0.99e-4);
    EXPECT_LE(delta, 1.0e-4);
  }
  EXPECT_EQ(adam.steps_taken(), 1u);
}

TEST(AdamTest, ZeroGradientsLeaveParametersUnchanged) {
  Rng rng(1);
  ParamStore<double> store;
  store.add("w", rfr::testing::random_tensor(Shape{2, 2, 2, 2}, rng));
  const Tensor<double> before = store.entry("w").value;
  Adam<double> adam;
  for (int i = 0; i < 3; ++i) adam.step(store, 1e-2);
  EXPECT_TRUE(bit_equal(store.entry("w").value, before));
}

TEST(AdamTest, NonFiniteGradientAbortsBeforeAnyUpdate) {
  ParamStore<double> store;
  store.add("a", Tensor<double>(Shape{1, 1, 1, 2}, 1.0));
  store.add("b", Tensor<double>(Shape{1, 1, 1, 2}, 1.0));
  store.entry("a").grad.data()[0] = 1.0;
  store.entry("b").grad.data()[1] = std::nan("");
  Adam<double> adam;
  try {
    adam.step(store, 0.1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("b"), std::string::npos);
  }
  EXPECT_EQ(store.entry("a").value[0], 1.0);
  EXPECT_EQ(adam.steps_taken(), 0u);
}

TEST(AdamTest, FrozenEntriesAreSkipped) {
  ParamStore<double> store;
  store.add("a", Tensor<double>(Shape{1, 1, 1, 1}, 1.0));
  store.entry("a").grad.data()[0] = 1.0;
  store.entry("a").frozen = true;
  Adam<double> adam;
  adam.step(store, 0.1);
  EXPECT_EQ(store.entry("a").value[0], 1.0);
}

TEST(TrainTest, IdenticalSeedsGiveIdenticalTrajectories) {
  const SyntheticDataset data(4, 32, MaskBand::k30to40, 3);
  auto a = build<float>(micro(), 1);
  auto b = build<float>(micro(), 1);
  const auto ha = train(a, data, short_run(3, 0));
  const auto hb = train(b, data, short_run(3, 0));
  EXPECT_EQ(ha.csv(), hb.csv());
  for (const auto& [name, e] : a.params().params()) {
    EXPECT_TRUE(bit_equal(e.value, b.params().entry(name).value)) << name;
  }
}

TEST(TrainTest, ZeroLearningRateKeepsTheLossConstant) {
  const SyntheticDataset data(2, 32, MaskBand::k30to40, 4);
  auto net = build<float>(micro(), 2);
  TrainConfig cfg = short_run(4, 0);
  cfg.lr_main = 0;
  const auto h = train(net, data, cfg);
  ASSERT_EQ(h.steps.size(), 4u);
  for (const auto& s : h.steps) {
    EXPECT_NEAR(s.losses.total, h.steps.front().losses.total, 1e-7 * h.steps.front().losses.total);
  }
}

TEST(TrainTest, FinetuneFreezesNormalization) {
  const SyntheticDataset data(4, 32, MaskBand::k30to40, 5);
  auto net = build<float>(micro(), 3);
  train(net, data, short_run(2, 0));
  auto snapshot = net.params().cast<float>();
  std::size_t phase2 = 0;
  train(net, data, short_run(0, 3), [&](const StepRecord& r) { phase2 += r.phase == 2; });
  EXPECT_EQ(phase2, 3u);
  for (const auto& [name, t] : snapshot.buffers()) {
    EXPECT_TRUE(bit_equal(t, net.params().buffer(name))) << name;
  }
  bool some_weight_moved = false;
  for (const auto& [name, e] : snapshot.params()) {
    const bool same = bit_equal(e.value, net.params().entry(name).value);
    if (name.find(".bn.") != std::string::npos) {
      EXPECT_TRUE(same) << name;
    } else {
      some_weight_moved = some_weight_moved || !same;
    }
    EXPECT_FALSE(net.params().entry(name).frozen) << name;
  }
  EXPECT_TRUE(some_weight_moved);
}

TEST(TrainTest, HistoryCsvLayout) {
  TrainHistory h;
  h.steps.push_back(StepRecord{1, 1, LossValues{1, 2, 3, 4, 5}});
  const std::string csv = h.csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "step,total,hole,valid,perceptual,style");
  EXPECT_NE(csv.find("\n1,1,2,3,4,5"), std::string::npos);
}

TEST(TrainTest, ExtractorWeightsNeverChange) {
  const FeatureExtractor<float> fx(11);
  const auto before = fx.weights();
  const SyntheticDataset data(2, 32, MaskBand::k30to40, 6);
  auto net = build<float>(micro(), 4);
  train(net, data, short_run(1, 0));
  const FeatureExtractor<float> again(11);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(bit_equal(before[i], again.weights()[i]));
}

TEST(SyntheticTest, BandFractionsAndDeterminism) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double f = hole_fraction(generate_mask(32, MaskBand::k50to60, seed));
    EXPECT_GE(f, 0.48);
    EXPECT_LE(f, 0.62);
  }
  EXPECT_TRUE(bit_equal(generate_mask(32, MaskBand::k30to40, 9), generate_mask(32, MaskBand::k30to40, 9)));
  EXPECT_TRUE(is_binary(generate_mask(32, MaskBand::k10to20, 9)));
}

TEST(SyntheticTest, LowBandMonteCarloMean) {
  double total = 0;
  for (const auto& m : generate_masks(MaskBand::k10to20, 100, 17)) total += hole_fraction(m);
  const double mean = total / 100;
  EXPECT_GE(mean, 0.10);
  EXPECT_LE(mean, 0.20);
}

TEST(SyntheticTest, TinyResolutionIsInfeasible) {
  EXPECT_THROW(generate_mask(4, MaskBand::k50to60, 0), ConfigError);
  EXPECT_THROW(parse_mask_band("20-30"), ConfigError);
  EXPECT_EQ(parse_mask_band("50-60"), MaskBand::k50to60);
}

TEST(SyntheticTest, SamplesZeroTheHoles) {
  const auto s = make_sample(32, MaskBand::k30to40, 2);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < 1024; ++i) {
      const float expected = s.mask[i] == 1 ? s.gt[c * 1024 + i] : 0.0f;
      EXPECT_EQ(s.masked[c * 1024 + i], expected);
    }
  const SyntheticDataset data(3, 32, MaskBand::k30to40, 2);
  EXPECT_EQ(data.batch({2, 0}).gt.shape(), (Shape{2, 3, 32, 32}));
}
