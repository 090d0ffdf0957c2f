#include <gtest/gtest.h>

#include <filesystem>

#include "rfr/image_io.hpp"
#include "rfr/run_config.hpp"
#include "rfr/weights_io.hpp"
#include "test_util.hpp"

using namespace rfr;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

}  // namespace

TEST(PnmTest, DecodeHandWrittenPgmWithComment) {
  auto file = bytes_of("P5\n# made by hand\n2 1\n255\n");
  file.push_back(0);
  file.push_back(255);
  const auto img = decode_pnm(file);
  ASSERT_EQ(img.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(img[0], 0.0f);
  EXPECT_EQ(img[1], 1.0f);
}

TEST(PnmTest, PpmIsPlanarAfterDecode) {
  auto file = bytes_of("P6\n1 1\n255\n");
  file.insert(file.end(), {10, 20, 30});
  const auto img = decode_pnm(file);
  ASSERT_EQ(img.shape(), (Shape{1, 3, 1, 1}));
  EXPECT_FLOAT_EQ(img[2] * 255.0f, 30.0f);
}

TEST(PnmTest, EncodeDecodeReproducesBytes) {
  Rng rng(1);
  std::vector<std::uint8_t> file = bytes_of("P6\n5 3\n255\n");
  for (int i = 0; i < 45; ++i) file.push_back(std::uint8_t(rng.integer(0, 255)));
  EXPECT_EQ(encode_pnm(decode_pnm(file)), file);
}

TEST(PnmTest, EncodeClampsAndZeroesNaN) {
  Tensor<float> img(Shape{1, 1, 1, 3});
  img.data()[0] = -1.0f;
  img.data()[1] = 2.0f;
  img.data()[2] = std::nanf("");
  const auto out = encode_pnm(img);
  EXPECT_EQ(out[out.size() - 3], 0);
  EXPECT_EQ(out[out.size() - 2], 255);
  EXPECT_EQ(out[out.size() - 1], 0);
  EXPECT_THROW(encode_pnm(Tensor<float>(Shape{1, 2, 2, 2})), DimensionError);
}

TEST(PnmTest, MalformedInputsAreFormatErrors) {
  EXPECT_THROW(decode_pnm(bytes_of("P3\n1 1\n255\n1 2 3")), FormatError);
  EXPECT_THROW(decode_pnm(bytes_of("P5\n1 1\n65535\n\x01\x02")), FormatError);
  EXPECT_THROW(decode_pnm(bytes_of("P5\n4 4\n255\n\x01")), FormatError);
  EXPECT_THROW(read_pnm("/nonexistent/image.ppm"), IoError);
}

TEST(PnmTest, ThresholdMask) {
  auto file = bytes_of("P5\n3 1\n255\n");
  file.insert(file.end(), {127, 128, 255});
  const auto m = threshold_mask(decode_pnm(file));
  EXPECT_EQ(m[0], 0.0f);
  EXPECT_EQ(m[1], 1.0f);
  EXPECT_EQ(m[2], 1.0f);
}

TEST(PnmTest, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "rfr_pnm_test";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "x.pgm").string();
  Tensor<float> img(Shape{1, 1, 2, 2});
  img.data()[3] = 1.0f;
  write_pnm(path, img);
  EXPECT_TRUE(bit_equal(read_pnm(path), img));
}

TEST(RunConfigTest, ParsesKeysCommentsAndBlankLines) {
  const auto cfg = parse_run_config(
      "# micro run\n"
      "resolution = 64\n"
      "\n"
      "iter_num=3   # fewer recurrences\n"
      "merge_mode = average\n"
      "attention = false\n"
      "mask_band = 50-60\n"
      "lr_main = 2.5e-4\n"
      "out = results/a b\n");
  EXPECT_EQ(cfg.resolution, 64u);
  EXPECT_EQ(cfg.iter_num, 3u);
  EXPECT_EQ(cfg.merge_mode, MergeMode::kAverage);
  EXPECT_FALSE(cfg.attention);
  EXPECT_EQ(cfg.mask_band, MaskBand::k50to60);
  EXPECT_DOUBLE_EQ(cfg.lr_main, 2.5e-4);
  EXPECT_EQ(cfg.out, "results/a b");
  EXPECT_EQ(cfg.net_config().reasoning.iter_num, 3u);
  EXPECT_EQ(cfg.train_config().lr_main, 2.5e-4);
}

TEST(RunConfigTest, ErrorsNameTheLine) {
  try {
    parse_run_config("resolution = 64\nfoo = 1\n", {}, "run.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("foo"), std::string::npos);
  }
  EXPECT_THROW(parse_run_config("iter_num = six\n"), ConfigError);
  EXPECT_THROW(parse_run_config("no equals sign\n"), ConfigError);
  EXPECT_THROW(parse_run_config("attention = maybe\n"), ConfigError);
  EXPECT_THROW(load_run_config("/nonexistent/run.cfg"), IoError);
}

TEST(RunConfigTest, ResolvedTextRoundTrips) {
  RunConfig cfg;
  cfg.seed = 77;
  cfg.channel_scale = 4;
  cfg.merge_mode = MergeMode::kLastOnly;
  const auto back = parse_run_config(cfg.resolved());
  EXPECT_EQ(back.resolved(), cfg.resolved());
  EXPECT_EQ(RunConfig::keys().size(), 18u);
}
