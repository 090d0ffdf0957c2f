#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rfr/rfr_net.hpp"
#include "rfr/synthetic.hpp"
#include "rfr/trainer.hpp"

namespace rfr {

/// Resolved settings for one CLI run. Text form is UTF-8 `key = value` lines;
/// `#` starts a comment; blank lines are ignored; unknown keys are rejected.
struct RunConfig {
  std::size_t resolution = 256;
  std::size_t iter_num = 6;
  MergeMode merge_mode = MergeMode::kAdaptive;
  bool attention = true;
  std::size_t downsample_depth = 1;
  std::size_t channel_scale = 1;
  std::uint64_t seed = 0;

  std::string image;
  std::string mask;
  std::string weights;
  std::string out = ".";

  std::size_t dataset_size = 16;
  MaskBand mask_band = MaskBand::k30to40;
  std::size_t batch_size = 4;
  std::size_t steps_main = 100;
  std::size_t steps_finetune = 0;
  double lr_main = 1e-4;
  double lr_finetune = 1e-5;

  /// Throws ConfigError for unknown keys and unparsable values.
  void set(const std::string& key, const std::string& value);
  static const std::vector<std::string>& keys();

  NetConfig net_config() const;
  TrainConfig train_config() const;
  /// Every key with its current value, one `key = value` line each, in keys() order.
  std::string resolved() const;
};

/// Applies the file's settings on top of `base`.
RunConfig parse_run_config(const std::string& text, RunConfig base = {},
                           const std::string& origin = "<config>");
RunConfig load_run_config(const std::string& path, RunConfig base = {});

}  // namespace rfr
