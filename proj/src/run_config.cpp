#include "rfr/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

namespace rfr {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename U>
U parse_number(const std::string& key, const std::string& value) {
  U out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("invalid value '" + value + "' for key '" + key + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "off" || value == "no") return false;
  throw ConfigError("invalid boolean '" + value + "' for key '" + key + "'");
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k{
      "resolution",   "iter_num",  "merge_mode",   "attention",  "downsample_depth",
      "channel_scale", "seed",     "image",        "mask",       "weights",
      "out",          "dataset_size", "mask_band", "batch_size", "steps_main",
      "steps_finetune", "lr_main", "lr_finetune"};
  return k;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (key == "resolution") resolution = parse_number<std::size_t>(key, value);
  else if (key == "iter_num") iter_num = parse_number<std::size_t>(key, value);
  else if (key == "merge_mode") merge_mode = parse_merge_mode(value);
  else if (key == "attention") attention = parse_bool(key, value);
  else if (key == "downsample_depth") downsample_depth = parse_number<std::size_t>(key, value);
  else if (key == "channel_scale") channel_scale = parse_number<std::size_t>(key, value);
  else if (key == "seed") seed = parse_number<std::uint64_t>(key, value);
  else if (key == "image") image = value;
  else if (key == "mask") mask = value;
  else if (key == "weights") weights = value;
  else if (key == "out") out = value;
  else if (key == "dataset_size") dataset_size = parse_number<std::size_t>(key, value);
  else if (key == "mask_band") mask_band = parse_mask_band(value);
  else if (key == "batch_size") batch_size = parse_number<std::size_t>(key, value);
  else if (key == "steps_main") steps_main = parse_number<std::size_t>(key, value);
  else if (key == "steps_finetune") steps_finetune = parse_number<std::size_t>(key, value);
  else if (key == "lr_main") lr_main = parse_number<double>(key, value);
  else if (key == "lr_finetune") lr_finetune = parse_number<double>(key, value);
  else throw ConfigError("unknown configuration key '" + key + "'");
}

NetConfig RunConfig::net_config() const {
  NetConfig cfg;
  cfg.downsample_depth = downsample_depth;
  cfg.resolution = resolution;
  cfg.channel_scale = channel_scale;
  cfg.reasoning.iter_num = iter_num;
  cfg.reasoning.merge_mode = merge_mode;
  cfg.reasoning.attention = attention;
  cfg.reasoning.channel_scale = channel_scale;
  return cfg;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig cfg;
  cfg.batch_size = batch_size;
  cfg.lr_main = lr_main;
  cfg.lr_finetune = lr_finetune;
  cfg.steps_main = steps_main;
  cfg.steps_finetune = steps_finetune;
  cfg.seed = seed;
  return cfg;
}

std::string RunConfig::resolved() const {
  std::ostringstream text;
  text << "resolution = " << resolution << '\n'
      << "iter_num = " << iter_num << '\n'
      << "merge_mode = " << to_string(merge_mode) << '\n'
      << "attention = " << (attention ? "true" : "false") << '\n'
      << "downsample_depth = " << downsample_depth << '\n'
      << "channel_scale = " << channel_scale << '\n'
      << "seed = " << seed << '\n'
      << "image = " << image << '\n'
      << "mask = " << mask << '\n'
      << "weights = " << weights << '\n'
      << "out = " << out << '\n'
      << "dataset_size = " << dataset_size << '\n'
      << "mask_band = " << to_string(mask_band) << '\n'
      << "batch_size = " << batch_size << '\n'
      << "steps_main = " << steps_main << '\n'
      << "steps_finetune = " << steps_finetune << '\n'
      << "lr_main = " << lr_main << '\n'
      << "lr_finetune = " << lr_finetune << '\n';
  return text.str();
}

RunConfig parse_run_config(const std::string& text, RunConfig base, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    try {
      base.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_run_config(const std::string& path, RunConfig base) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), std::move(base), path);
}

}  // namespace rfr
