#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <map>

#include "rfr/checks.hpp"
#include "rfr/rfr_net.hpp"
#include "rfr/weights_io.hpp"
#include "test_util.hpp"

using namespace rfr;
using rfr::testing::random_mask;
using rfr::testing::random_tensor;

namespace {

NetConfig micro(std::size_t side = 32) {
  NetConfig cfg;
  cfg.channel_scale = 8;
  cfg.resolution = side;
  cfg.reasoning.iter_num = 2;
  return cfg;
}

bool same_store(const ParamStore<float>& a, const ParamStore<float>& b) {
  if (a.params().size() != b.params().size()) return false;
  for (const auto& [name, e] : a.params()) {
    if (!bit_equal(e.value, b.entry(name).value)) return false;
  }
  for (const auto& [name, t] : a.buffers()) {
    if (!bit_equal(t, b.buffer(name))) return false;
  }
  return true;
}

}  // namespace

TEST(NetConfigTest, SizeMultipleFollowsDepth) {
  NetConfig cfg;
  EXPECT_EQ(cfg.size_multiple(), 16u);
  cfg.downsample_depth = 3;
  EXPECT_EQ(cfg.size_multiple(), 64u);
}

TEST(NetConfigTest, InvalidSettingsAreConfigErrors) {
  NetConfig cfg = micro();
  cfg.resolution = 40;
  EXPECT_THROW(build<float>(cfg, 0), ConfigError);
  cfg = micro();
  cfg.downsample_depth = 4;
  EXPECT_THROW(build<float>(cfg, 0), ConfigError);
  cfg = micro();
  cfg.channel_scale = 3;
  EXPECT_THROW(build<float>(cfg, 0), ConfigError);
}

TEST(NetworkGraphTest, LayerRowParameterCounts) {
  const auto net = build<float>(NetConfig{}, 0);
  EXPECT_EQ(net.layer("rfr.Conv4").param_count(), 2359808u + 2u * 512u);  // plus gamma, beta
  LayerSpec bare = net.layer("rfr.Conv4");
  bare.batch_norm = false;
  EXPECT_EQ(bare.param_count(), 2359808u);
  EXPECT_EQ(net.param_count(), checks::hand_derived_param_count() + 524801u);
  EXPECT_EQ(net.params().scalar_count(), net.param_count());
}

TEST(NetworkGraphTest, DescribeListsEveryStageInOrder) {
  const auto net = build<float>(micro(), 0);
  const auto rows = net.describe();
  std::vector<std::string> names;
  for (const auto& r : rows) names.push_back(r.name);
  const std::vector<std::string> expected_prefix{"PartialConv0", "PartialConv1", "RFR",
                                                 "rfr.PartialConv2", "rfr.PartialConv3"};
  ASSERT_GE(names.size(), expected_prefix.size());
  EXPECT_TRUE(std::equal(expected_prefix.begin(), expected_prefix.end(), names.begin()));
  EXPECT_EQ(names.back(), "OutputConv");
  EXPECT_NE(std::find(names.begin(), names.end(), "rfr.KCA"), names.end());
}

TEST(NetworkGraphTest, SameSeedGivesIdenticalStores) {
  const auto a = build<float>(micro(), 42);
  const auto b = build<float>(micro(), 42);
  const auto c = build<float>(micro(), 43);
  EXPECT_TRUE(same_store(a.params(), b.params()));
  EXPECT_FALSE(same_store(a.params(), c.params()));
}

TEST(NetworkGraphTest, ForwardShapesAndComposite) {
  auto net = build<float>(micro(), 1);
  Rng rng(2);
  auto img = random_tensor<float>(Shape{2, 3, 32, 32}, rng, 0, 1);
  const auto mask = random_mask<float>(Shape{2, 1, 32, 32}, rng, 0.7);
  auto d = img.data();
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 1024; ++i) d[(n * 3 + c) * 1024 + i] *= mask[n * 1024 + i];
  const auto out = net.infer(img, mask);
  EXPECT_EQ(out.prediction.shape(), img.shape());
  EXPECT_TRUE(all_finite(out.prediction.value()));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 1024; ++i) {
        const std::size_t k = (n * 3 + c) * 1024 + i;
        EXPECT_EQ(out.composite[k], mask[n * 1024 + i] == 1 ? img[k] : out.prediction.value()[k]);
      }
  EXPECT_EQ(out.reasoning.state.size(), 2u);
}

TEST(NetworkGraphTest, FullyValidMaskCompositeEqualsInput) {
  auto net = build<float>(micro(), 3);
  Rng rng(4);
  const auto img = random_tensor<float>(Shape{1, 3, 32, 32}, rng, 0, 1);
  const Tensor<float> mask(Shape{1, 1, 32, 32}, 1.0f);
  const auto out = net.infer(img, mask);
  EXPECT_TRUE(all_finite(out.prediction.value()));
  EXPECT_TRUE(bit_equal(out.composite, img));
}

TEST(NetworkGraphTest, InputContractViolations) {
  auto net = build<float>(micro(), 5);
  const Tensor<float> mask(Shape{1, 1, 32, 32}, 1.0f);
  EXPECT_THROW(net.infer(Tensor<float>(Shape{1, 4, 32, 32}), mask), DimensionError);
  EXPECT_THROW(net.infer(Tensor<float>(Shape{1, 3, 32, 32}), Tensor<float>(Shape{1, 1, 32, 16})),
               DimensionError);
  EXPECT_THROW(net.infer(Tensor<float>(Shape{1, 3, 24, 24}), Tensor<float>(Shape{1, 1, 24, 24}, 1.0f)),
               ConfigError);
  EXPECT_THROW(net.infer(Tensor<float>(Shape{1, 3, 32, 32}), Tensor<float>(Shape{1, 1, 32, 32}, 0.5f)),
               ContractError);
}

TEST(NetworkGraphTest, TraceCoversTheModuleOncePerRecurrence) {
  auto net = build<float>(micro(), 6);
  std::map<std::string, int> seen;
  const Tensor<float> img(Shape{1, 3, 32, 32});
  const Tensor<float> mask(Shape{1, 1, 32, 32}, 1.0f);
  net.infer(img, mask, [&](const std::string& name, const Shape&) { ++seen[name]; });
  EXPECT_EQ(seen["PartialConv0"], 1);
  EXPECT_EQ(seen["rfr.Conv4"], 2);
  EXPECT_EQ(seen["rfr.KCA"], 2);
  EXPECT_EQ(seen["OutputConv"], 1);
}

TEST(NetworkGraphTest, DeeperPlacementAddsMatchingLayers) {
  NetConfig cfg = micro(64);
  cfg.downsample_depth = 3;
  auto net = build<float>(cfg, 7);
  EXPECT_NO_THROW(net.layer("PartialConvDown2"));
  EXPECT_NO_THROW(net.layer("DeConvUp2"));
  const Tensor<float> img(Shape{1, 3, 64, 64});
  const Tensor<float> mask(Shape{1, 1, 64, 64}, 1.0f);
  EXPECT_EQ(net.infer(img, mask).prediction.shape(), (Shape{1, 3, 64, 64}));
}

TEST(NetworkGraphTest, CastKeepsValues) {
  const auto net = build<float>(micro(), 8);
  const auto twin = net.cast<double>();
  for (const auto& [name, e] : net.params().params()) {
    EXPECT_TRUE(bit_equal(twin.params().entry(name).value.cast<float>(), e.value)) << name;
  }
}

TEST(WeightsIoTest, RoundTripIsBitExact) {
  const auto a = build<float>(micro(), 9);
  auto b = build<float>(micro(), 10);
  const auto bytes = serialize_weights(a.params());
  deserialize_weights(b.params(), bytes);
  EXPECT_TRUE(same_store(a.params(), b.params()));
  EXPECT_EQ(serialize_weights(b.params()), bytes);
}

TEST(WeightsIoTest, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "rfr_weights_test";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "w.rfrw").string();
  const auto a = build<float>(micro(), 11);
  save_weights(a.params(), path);
  auto b = build<float>(micro(), 12);
  load_weights(b.params(), path);
  EXPECT_TRUE(same_store(a.params(), b.params()));
  EXPECT_THROW(load_weights(b.params(), (dir / "missing.rfrw").string()), IoError);
}

TEST(WeightsIoTest, MalformedFilesAreRejectedWithoutSideEffects) {
  const auto a = build<float>(micro(), 13);
  auto target = build<float>(micro(), 14);
  const auto pristine = serialize_weights(target.params());
  const auto good = serialize_weights(a.params());

  auto expect_rejected = [&](std::vector<std::uint8_t> bytes, const std::string& needle) {
    try {
      deserialize_weights(target.params(), bytes);
      ADD_FAILURE() << "accepted: " << needle;
    } catch (const FormatError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
    EXPECT_EQ(serialize_weights(target.params()), pristine);
  };

  auto bad_magic = good;
  bad_magic[0] = 'X';
  expect_rejected(bad_magic, "magic");
  auto bad_version = good;
  bad_version[4] = 9;
  expect_rejected(bad_version, "version");
  expect_rejected(std::vector<std::uint8_t>(good.begin(), good.end() - 5), "trunc");
  auto trailing = good;
  trailing.push_back(0);
  expect_rejected(trailing, "trailing");
  auto renamed = good;
  renamed[4 + 4 + 4 + 2] = 'Z';  // first character of the first tensor name
  expect_rejected(renamed, "unknown");

  NetConfig wider = micro();
  wider.channel_scale = 4;
  expect_rejected(serialize_weights(build<float>(wider, 0).params()), "shape");
}
