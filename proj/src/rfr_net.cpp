#include "rfr/rfr_net.hpp"

#include <algorithm>

namespace rfr {

std::size_t NetConfig::size_multiple() const {
  return (std::size_t{1} << downsample_depth) * RfrModule::kBottleneckFactor;
}

namespace {

NetConfig normalized(NetConfig cfg) {
  if (cfg.downsample_depth < 1 || cfg.downsample_depth > 3) {
    throw ConfigError("downsample_depth must be 1, 2 or 3, got " +
                      std::to_string(cfg.downsample_depth));
  }
  if (cfg.channel_scale == 0 || 32 % cfg.channel_scale != 0) {
    throw ConfigError("channel_scale must divide 32, got " + std::to_string(cfg.channel_scale));
  }
  cfg.reasoning.channel_scale = cfg.channel_scale;
  if (cfg.resolution != 0 && cfg.resolution % cfg.size_multiple() != 0) {
    throw ConfigError("resolution " + std::to_string(cfg.resolution) + " is not divisible by " +
                      std::to_string(cfg.size_multiple()) + " (depth " +
                      std::to_string(cfg.downsample_depth) + ")");
  }
  return cfg;
}

LayerSpec make(const std::string& name, LayerKind kind, std::size_t in, std::size_t out,
               std::size_t k, std::size_t stride, std::size_t pad, bool bn, Activation act) {
  LayerSpec s;
  s.name = name;
  s.kind = kind;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = k;
  s.stride = stride;
  s.padding = pad;
  s.batch_norm = bn;
  s.activation = act;
  return s;
}

std::vector<LayerSpec> outer_table(const NetConfig& cfg) {
  using K = LayerKind;
  using A = Activation;
  const std::size_t c = 64 / cfg.channel_scale;
  const std::size_t c32 = 32 / cfg.channel_scale;
  std::vector<LayerSpec> rows;
  rows.push_back(make("PartialConv0", K::kPartialConv, 3, c, 7, 2, 3, true, A::kRelu));
  rows.push_back(make("PartialConv1", K::kPartialConv, c, c, 7, 1, 3, true, A::kRelu));
  for (std::size_t j = 1; j < cfg.downsample_depth; ++j) {
    rows.push_back(make("PartialConvDown" + std::to_string(j), K::kPartialConv, c, c, 7, 2, 3,
                        true, A::kRelu));
  }
  for (std::size_t j = cfg.downsample_depth - 1; j >= 1; --j) {
    rows.push_back(make("DeConvUp" + std::to_string(j), K::kDeconv, c, c, 4, 2, 1, true,
                        A::kLeakyRelu));
  }
  rows.push_back(make("DeConv4", K::kDeconv, c, c, 4, 2, 1, true, A::kLeakyRelu));
  rows.push_back(make("PartialConv4", K::kPartialConv, 3 + c, c32, 3, 1, 1, false, A::kLeakyRelu));
  rows.push_back(make("Conv9", K::kConv, c32, c32, 3, 1, 1, true, A::kLeakyRelu));
  rows.push_back(make("Conv10", K::kConv, c32, c32, 3, 1, 1, true, A::kLeakyRelu));
  rows.push_back(make("OutputConv", K::kConv, 2 * c32, 3, 3, 1, 1, false, A::kNone));
  return rows;
}

bool is_encoder(const LayerSpec& s) {
  return s.name.rfind("PartialConv0", 0) == 0 || s.name.rfind("PartialConv1", 0) == 0 ||
         s.name.rfind("PartialConvDown", 0) == 0;
}

}  // namespace

template <typename T>
NetworkGraph<T>::NetworkGraph(const NetConfig& config, std::uint64_t seed)
    : config_(normalized(config)),
      module_("rfr", config_.reasoning),
      outer_(outer_table(config_)) {
  for (const auto& spec : outer_) register_layer(params_, spec, seed);
  module_.template register_params<T>(params_, seed);
}

template <typename T>
NetworkGraph<T>::NetworkGraph(const NetConfig& config, ParamStore<T> params)
    : config_(normalized(config)),
      module_("rfr", config_.reasoning),
      outer_(outer_table(config_)),
      params_(std::move(params)) {}

template <typename T>
const LayerSpec& NetworkGraph<T>::layer(const std::string& name) const {
  auto it = std::find_if(outer_.begin(), outer_.end(),
                         [&](const LayerSpec& s) { return s.name == name; });
  if (it != outer_.end()) return *it;
  return module_.layer(name.rfind("rfr.", 0) == 0 ? name.substr(4) : name);
}

template <typename T>
std::vector<LayerDescriptor> NetworkGraph<T>::describe() const {
  std::vector<LayerDescriptor> rows;
  auto push = [&](const LayerSpec& s, const std::string& source) {
    rows.push_back({s.name, to_string(s.kind), source, s.kernel, s.stride, s.out_channels,
                    s.batch_norm, s.activation, s.param_count()});
  };
  std::string prev = "input";
  for (const auto& s : outer_) {
    if (!is_encoder(s)) break;
    push(s, prev);
    prev = s.name;
  }
  rows.push_back({"RFR", "rfr", prev, 0, 0, module_.channels(), false, Activation::kNone,
                  module_.param_count()});
  const std::string enc = prev;
  for (const auto& s : module_.layers()) {
    std::string src = prev;
    const std::string shorter = s.name.substr(module_.prefix().size() + 1);
    if (shorter == "PartialConv2") src = enc + " | rfr.DeConv3";
    if (shorter == "Conv7") src = "cat(rfr.Conv6,rfr.Conv5)";
    if (shorter == "Conv8") src = "cat(rfr.Conv7,rfr.Conv4)";
    if (shorter == "DeConv1") src = module_.config().attention ? "cat(rfr.KCA,rfr.Conv3)"
                                                               : "cat(rfr.Conv8,rfr.Conv3)";
    if (shorter == "DeConv2") src = "cat(rfr.DeConv1,rfr.Conv2)";
    if (shorter == "DeConv3") src = "cat(rfr.DeConv2,rfr.Conv1)";
    push(s, src);
    prev = s.name;
    if (shorter == "Conv8" && module_.config().attention) {
      const LayerSpec fuse = kca_fuse_spec(module_.kca_prefix(), s.out_channels);
      rows.push_back({module_.kca_prefix(), "kca", s.name, 1, 1, s.out_channels, false,
                      Activation::kNone, fuse.param_count() + 1});
      prev = module_.kca_prefix();
    }
  }
  rows.push_back({"rfr.FeatureMerge", "merge", "all rfr.DeConv3", 0, 0, module_.channels(), false,
                  Activation::kNone, 0});
  prev = "RFR";
  for (const auto& s : outer_) {
    if (is_encoder(s)) continue;
    if (s.name == "PartialConv4") {
      rows.push_back({"ImageSkip", "concat_source", "input", 0, 0, 3, false, Activation::kNone, 0});
      push(s, "cat(ImageSkip," + prev + ")");
    } else if (s.name == "OutputConv") {
      push(s, "cat(PartialConv4,Conv10)");
    } else {
      push(s, prev);
    }
    prev = s.name;
  }
  return rows;
}

template <typename T>
std::size_t NetworkGraph<T>::param_count() const {
  std::size_t total = module_.param_count();
  for (const auto& s : outer_) total += s.param_count();
  return total;
}

template <typename T>
Context<T> NetworkGraph<T>::context(Tape<T>* tape, BnMode mode, TraceFn trace) {
  return Context<T>{&params_, tape, mode, std::move(trace)};
}

template <typename T>
void NetworkGraph<T>::check_input(const Tensor<T>& masked, const Tensor<T>& mask) const {
  const Shape s = masked.shape();
  if (s.c != 3) {
    throw DimensionError("forward: image must have 3 channels (axis c), got " + std::to_string(s.c));
  }
  require_same_shape(Shape{s.n, 1, s.h, s.w}, mask.shape(), "forward (mask)");
  const std::size_t m = config_.size_multiple();
  if (s.h % m != 0 || s.w % m != 0) {
    throw ConfigError("forward: input " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                      " is not divisible by " + std::to_string(m));
  }
  require_binary_mask(mask, "forward");
}

template <typename T>
NetOutput<T> NetworkGraph<T>::forward(const Context<T>& ctx, const Tensor<T>& masked,
                                      const Tensor<T>& mask) const {
  check_input(masked, mask);
  const Shape s = masked.shape();
  auto find = [&](const std::string& n) -> const LayerSpec& { return layer(n); };

  Var<T> x(masked);
  Tensor<T> m = mask;
  for (const auto& spec : outer_) {
    if (!is_encoder(spec)) break;
    auto r = partial_conv_layer(ctx, spec, x, m);
    x = r.features;
    m = r.mask;
  }
  const std::size_t factor = std::size_t{1} << config_.downsample_depth;
  auto reasoning = module_.forward(ctx, x, nearest_downsample(mask, factor));
  x = reasoning.merged;

  for (std::size_t j = config_.downsample_depth - 1; j >= 1; --j) {
    x = apply_layer(ctx, find("DeConvUp" + std::to_string(j)), x);
  }
  x = apply_layer(ctx, find("DeConv4"), x);

  // Image channels carry the image mask; decoded feature channels are all valid.
  Tensor<T> skip_mask(Shape{s.n, 3 + x.shape().c, s.h, s.w}, T(1));
  {
    auto dst = skip_mask.data();
    const std::size_t plane = s.plane();
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < 3; ++c) {
        std::copy_n(mask.values().begin() + n * plane, plane,
                    dst.begin() + (n * skip_mask.shape().c + c) * plane);
      }
    }
  }
  const Var<T> p4 =
      partial_conv_layer(ctx, find("PartialConv4"), concat_channels(Var<T>(masked), x), skip_mask)
          .features;
  const Var<T> c9 = apply_layer(ctx, find("Conv9"), p4);
  const Var<T> c10 = apply_layer(ctx, find("Conv10"), c9);
  NetOutput<T> out;
  out.prediction = apply_layer(ctx, find("OutputConv"), concat_channels(p4, c10));
  out.composite = composite(masked, out.prediction.value(), mask);
  out.reasoning = std::move(reasoning);
  return out;
}

template <typename T>
NetOutput<T> NetworkGraph<T>::infer(const Tensor<T>& masked, const Tensor<T>& mask,
                                    TraceFn trace) {
  return forward(context(nullptr, BnMode::kEval, std::move(trace)), masked, mask);
}

template <typename T>
Tensor<T> composite(const Tensor<T>& input, const Tensor<T>& prediction, const Tensor<T>& mask) {
  require_same_shape(input.shape(), prediction.shape(), "composite");
  const Shape s = input.shape();
  require_same_shape(Shape{s.n, 1, s.h, s.w}, mask.shape(), "composite (mask)");
  Tensor<T> out(s);
  auto dst = out.data();
  const std::size_t plane = s.plane();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const std::size_t n = i / (s.c * plane);
    const T m = mask[n * plane + i % plane];
    dst[i] = m * input[i] + (T(1) - m) * prediction[i];
  }
  return out;
}

template class NetworkGraph<float>;
template class NetworkGraph<double>;
template Tensor<float> composite(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> composite(const Tensor<double>&, const Tensor<double>&,
                                  const Tensor<double>&);

}  // namespace rfr
