// Command-line front end: inpaint, train, gradcheck, metrics, param-count, selftest.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "rfr/checks.hpp"
#include "rfr/image_io.hpp"
#include "rfr/metrics.hpp"
#include "rfr/random.hpp"
#include "rfr/rfr_net.hpp"
#include "rfr/run_config.hpp"
#include "rfr/trainer.hpp"
#include "rfr/weights_io.hpp"

namespace fs = std::filesystem;
using namespace rfr;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitCheckFailed = 4;

struct Flags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iter_num;
  std::optional<std::string> merge_mode;
  bool no_attention = false;
  std::optional<std::size_t> depth;
  std::optional<std::size_t> channel_scale;
  bool dump_recurrence = false;
  std::optional<std::string> out;
};

// Defaults < config file < RFR_SEED (seed only, when the file sets none) < flags.
RunConfig resolve(const Flags& f) {
  RunConfig cfg;
  bool file_has_seed = false;
  if (!f.config_path.empty()) {
    RunConfig sentinel;
    sentinel.seed = ~std::uint64_t{0};
    file_has_seed = load_run_config(f.config_path, sentinel).seed != sentinel.seed;
    cfg = load_run_config(f.config_path);
  }
  if (!file_has_seed) {
    if (const char* env = std::getenv("RFR_SEED"); env && *env) cfg.set("seed", env);
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.iter_num) cfg.iter_num = *f.iter_num;
  if (f.merge_mode) cfg.merge_mode = parse_merge_mode(*f.merge_mode);
  if (f.no_attention) cfg.attention = false;
  if (f.depth) cfg.downsample_depth = *f.depth;
  if (f.channel_scale) cfg.channel_scale = *f.channel_scale;
  if (f.out) cfg.out = *f.out;
  std::cerr << "# resolved configuration\n" << cfg.resolved();
  return cfg;
}

std::string out_path(const RunConfig& cfg, const std::string& file) {
  fs::create_directories(cfg.out);
  return (fs::path(cfg.out) / file).string();
}

Tensor<float> as_rgb(const Tensor<float>& img) {
  if (img.shape().c == 3) return img;
  const Shape s = img.shape();
  Tensor<float> rgb(Shape{1, 3, s.h, s.w});
  auto d = rgb.data();
  for (std::size_t c = 0; c < 3; ++c) std::copy(img.values().begin(), img.values().end(), d.begin() + c * s.plane());
  return rgb;
}

int cmd_inpaint(RunConfig cfg, const Flags& flags, const std::string& image_path,
                const std::string& mask_path, const std::string& weights_path) {
  if (!image_path.empty()) cfg.image = image_path;
  if (!mask_path.empty()) cfg.mask = mask_path;
  if (!weights_path.empty()) cfg.weights = weights_path;
  if (cfg.image.empty() || cfg.mask.empty()) throw ConfigError("inpaint needs an image and a mask");

  const Tensor<float> image = as_rgb(read_pnm(cfg.image));
  const Tensor<float> gray = read_pnm(cfg.mask);
  if (gray.shape().c != 1) throw ConfigError("mask '" + cfg.mask + "' must be a grayscale (P5) image");
  if (gray.shape().h != image.shape().h || gray.shape().w != image.shape().w) {
    throw ConfigError("mask is " + std::to_string(gray.shape().w) + "x" + std::to_string(gray.shape().h) +
                      " but image is " + std::to_string(image.shape().w) + "x" +
                      std::to_string(image.shape().h));
  }
  const Tensor<float> mask = threshold_mask(gray);
  Tensor<float> masked(image.shape());
  {
    auto d = masked.data();
    const std::size_t plane = image.shape().plane();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = image[i] * mask[i % plane];
  }

  NetConfig net_cfg = cfg.net_config();
  net_cfg.resolution = 0;
  NetworkGraph<float> net = build<float>(net_cfg, cfg.seed);
  if (!cfg.weights.empty()) {
    load_weights(net.params(), cfg.weights);
  } else {
    std::cerr << "warning: no weights given; using seeded initial parameters\n";
  }
  const NetOutput<float> res = net.infer(masked, mask);
  write_pnm(out_path(cfg, "reconstructed.ppm"), res.prediction.value());
  write_pnm(out_path(cfg, "composite.ppm"), res.composite);
  if (flags.dump_recurrence) {
    const auto& masks = res.reasoning.state.masks;
    for (std::size_t i = 0; i < masks.size(); ++i) {
      write_pnm(out_path(cfg, "mask_rec" + std::to_string(i + 1) + ".pgm"), masks[i]);
      write_pnm(out_path(cfg, "region_rec" + std::to_string(i + 1) + ".pgm"), res.reasoning.regions[i]);
    }
  }
  std::cout << "wrote " << out_path(cfg, "composite.ppm") << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg) {
  NetworkGraph<float> net = build<float>(cfg.net_config(), cfg.seed);
  const SyntheticDataset data(cfg.dataset_size, cfg.resolution, cfg.mask_band, derive_seed(cfg.seed, "dataset"));
  const std::size_t total = cfg.steps_main + cfg.steps_finetune;
  const TrainHistory hist = train(net, data, cfg.train_config(), [&](const StepRecord& r) {
    if (r.step % 10 == 0 || r.step + 1 == total) {
      std::fprintf(stderr, "step %zu phase %d total %.5f hole %.5f valid %.5f\n", r.step, r.phase,
                   r.losses.total, r.losses.hole, r.losses.valid);
    }
  });
  hist.write_csv(out_path(cfg, "history.csv"));
  save_weights(net.params(), out_path(cfg, "weights.rfrw"));
  std::cout << "wrote " << out_path(cfg, "history.csv") << " and " << out_path(cfg, "weights.rfrw") << "\n";
  return 0;
}

int report(const std::vector<checks::CheckResult>& results, bool verbose) {
  bool ok = true;
  for (const auto& r : results) {
    std::cout << r.summary(verbose);
    ok = ok && r.pass;
  }
  return ok ? 0 : kExitCheckFailed;
}

int cmd_metrics(const std::string& a, const std::string& b) {
  const Tensor<float> pa = read_pnm(a), pb = read_pnm(b);
  if (!(pa.shape() == pb.shape())) {
    throw ConfigError("images differ in shape: " + pa.shape().str() + " vs " + pb.shape().str());
  }
  const ImageMetrics m = metrics(pa, pb);
  std::printf("ssim=%.4f psnr=%s mean_l1=%.6g\n", m.ssim,
              std::isinf(m.psnr) ? "inf" : std::to_string(m.psnr).c_str(), m.mean_l1);
  return 0;
}

int cmd_param_count(const RunConfig& cfg) {
  const NetworkGraph<float> net = build<float>(cfg.net_config(), cfg.seed);
  std::printf("%-22s %-14s %-28s %4s %6s %8s %3s %-10s %12s\n", "layer", "kind", "source", "k",
              "stride", "channels", "bn", "act", "params");
  for (const auto& row : net.describe()) {
    std::printf("%-22s %-14s %-28s %4zu %6zu %8zu %3s %-10s %12zu\n", row.name.c_str(), row.kind.c_str(),
                row.source.c_str(), row.kernel, row.stride, row.out_channels, row.batch_norm ? "T" : "F",
                to_string(row.activation), row.params);
  }
  std::printf("total %zu\n", net.param_count());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent feature reasoning inpainting"};
  app.require_subcommand(1);
  app.fallthrough();
  Flags flags;
  app.add_option("--config", flags.config_path, "key = value configuration file");
  app.add_option("--seed", flags.seed, "random seed (fallback: RFR_SEED)");
  app.add_option("--iter-num", flags.iter_num, "number of reasoning recurrences");
  app.add_option("--merge-mode", flags.merge_mode, "adaptive, average or last")
      ->check(CLI::IsMember({"adaptive", "average", "last"}));
  app.add_flag("--no-attention", flags.no_attention, "disable the attention layer");
  app.add_option("--depth", flags.depth, "downsampling levels before the module")->check(CLI::Range(1, 3));
  app.add_option("--channel-scale", flags.channel_scale, "divide every channel count");
  app.add_flag("--dump-recurrence", flags.dump_recurrence, "write per-recurrence masks and regions");
  app.add_option("--out", flags.out, "output directory");

  std::string image, mask, weights, metric_a, metric_b;
  auto* inpaint = app.add_subcommand("inpaint", "fill the holes of an image");
  inpaint->add_option("image", image, "P6/P5 image")->required();
  inpaint->add_option("mask", mask, "P5 mask, white = known")->required();
  inpaint->add_option("--weights", weights, "weight file");
  auto* train_cmd = app.add_subcommand("train", "train on synthetic data");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  auto* metrics_cmd = app.add_subcommand("metrics", "SSIM, PSNR and mean l1 between two images");
  metrics_cmd->add_option("a", metric_a)->required();
  metrics_cmd->add_option("b", metric_b)->required();
  auto* params_cmd = app.add_subcommand("param-count", "per-layer and total parameter counts");
  auto* selftest = app.add_subcommand("selftest", "run the oracle and property suite");
  bool quick = false, verbose = false;
  selftest->add_flag("--quick", quick, "skip the training run");
  selftest->add_flag("--verbose", verbose, "print every measurement");
  gradcheck->add_flag("--verbose", verbose, "print every measurement");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    const RunConfig cfg = resolve(flags);
    if (*inpaint) return cmd_inpaint(cfg, flags, image, mask, weights);
    if (*train_cmd) return cmd_train(cfg);
    if (*gradcheck) return report({checks::gradient_checks(cfg.seed)}, verbose);
    if (*metrics_cmd) return cmd_metrics(metric_a, metric_b);
    if (*params_cmd) return cmd_param_count(cfg);
    if (*selftest) {
      const std::string scratch = (fs::path(cfg.out) / "selftest-scratch").string();
      std::vector<checks::CheckResult> results;
      auto run = [&](checks::CheckResult r) {
        std::cout << r.summary(verbose) << std::flush;
        results.push_back(std::move(r));
      };
      run(checks::oracle_equivalence(100, cfg.seed));
      run(checks::mask_dynamics(cfg.seed));
      run(checks::gradient_checks(cfg.seed));
      run(checks::attention_contracts(cfg.seed));
      run(checks::merge_ablation(cfg.seed));
      if (!quick) run(checks::toy_training(cfg.seed));
      run(checks::architecture_fidelity(cfg.seed));
      run(checks::determinism(cfg.seed, scratch));
      run(checks::depth_knob(cfg.seed));
      bool ok = true;
      for (const auto& r : results) ok = ok && r.pass;
      std::cout << (ok ? "selftest passed\n" : "selftest FAILED\n");
      return ok ? 0 : kExitCheckFailed;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DimensionError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
