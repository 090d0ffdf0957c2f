#include "rfr/rfr_module.hpp"

#include <algorithm>

namespace rfr {

const char* to_string(MergeMode mode) {
  switch (mode) {
    case MergeMode::kAdaptive: return "adaptive";
    case MergeMode::kAverage: return "average";
    case MergeMode::kLastOnly: return "last";
  }
  return "?";
}

MergeMode parse_merge_mode(const std::string& text) {
  if (text == "adaptive") return MergeMode::kAdaptive;
  if (text == "average") return MergeMode::kAverage;
  if (text == "last" || text == "last_only") return MergeMode::kLastOnly;
  throw ConfigError("unknown merge mode '" + text + "' (expected adaptive, average or last)");
}

namespace {

LayerSpec row(const std::string& prefix, const char* name, LayerKind kind, std::size_t in,
              std::size_t out, std::size_t k, std::size_t stride, bool bn, Activation act) {
  LayerSpec s;
  s.name = prefix + "." + name;
  s.kind = kind;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel = k;
  s.stride = stride;
  s.padding = kind == LayerKind::kDeconv ? 1 : k / 2;
  s.batch_norm = bn;
  s.activation = act;
  return s;
}

}  // namespace

RfrModule::RfrModule(std::string prefix, ReasoningConfig config)
    : prefix_(std::move(prefix)), config_(config) {
  if (config_.iter_num < 1) throw ConfigError("iter_num must be >= 1");
  const std::size_t d = config_.channel_scale;
  if (d == 0 || 64 % d != 0) {
    throw ConfigError("channel_scale must divide 64, got " + std::to_string(d));
  }
  channels_ = 64 / d;
  const std::size_t c64 = 64 / d, c128 = 128 / d, c256 = 256 / d, c512 = 512 / d;
  using K = LayerKind;
  using A = Activation;
  const auto& p = prefix_;
  layers_ = {
      row(p, "PartialConv2", K::kPartialConv, c64, c64, 7, 1, false, A::kNone),
      row(p, "PartialConv3", K::kPartialConv, c64, c64, 7, 1, true, A::kRelu),
      row(p, "Conv1", K::kConv, c64, c128, 3, 2, true, A::kRelu),
      row(p, "Conv2", K::kConv, c128, c256, 3, 2, true, A::kRelu),
      row(p, "Conv3", K::kConv, c256, c512, 3, 2, true, A::kRelu),
      row(p, "Conv4", K::kConv, c512, c512, 3, 1, true, A::kRelu),
      row(p, "Conv5", K::kConv, c512, c512, 3, 1, true, A::kRelu),
      row(p, "Conv6", K::kConv, c512, c512, 3, 1, true, A::kRelu),
      row(p, "Conv7", K::kConv, 2 * c512, c512, 3, 1, true, A::kLeakyRelu),
      row(p, "Conv8", K::kConv, 2 * c512, c512, 3, 1, true, A::kLeakyRelu),
      row(p, "DeConv1", K::kDeconv, 2 * c512, c256, 4, 2, true, A::kLeakyRelu),
      row(p, "DeConv2", K::kDeconv, 2 * c256, c128, 4, 2, true, A::kLeakyRelu),
      row(p, "DeConv3", K::kDeconv, 2 * c128, c64, 4, 2, true, A::kLeakyRelu),
  };
}

const LayerSpec& RfrModule::layer(const std::string& short_name) const {
  const std::string full = prefix_ + "." + short_name;
  auto it = std::find_if(layers_.begin(), layers_.end(),
                         [&](const LayerSpec& s) { return s.name == full; });
  if (it == layers_.end()) throw ContractError("unknown RFR layer " + full);
  return *it;
}

template <typename T>
void RfrModule::register_params(ParamStore<T>& store, std::uint64_t seed) const {
  for (const auto& spec : layers_) register_layer(store, spec, seed);
  if (config_.attention) register_kca(store, kca_prefix(), 512 / config_.channel_scale, seed);
}

std::size_t RfrModule::param_count() const {
  std::size_t total = 0;
  for (const auto& spec : layers_) total += spec.param_count();
  if (config_.attention) total += kca_fuse_spec(kca_prefix(), 512 / config_.channel_scale).param_count() + 1;
  return total;
}

template <typename T>
RfrModule::AreaResult<T> RfrModule::area_identify(const Context<T>& ctx, const Var<T>& features,
                                                  const Tensor<T>& mask) const {
  auto first = partial_conv_layer(ctx, layer("PartialConv2"), features, mask);
  auto second = partial_conv_layer(ctx, layer("PartialConv3"), first.features, first.mask);
  Tensor<T> region(mask.shape());
  auto r = region.data();
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = second.mask[i] - mask[i];
  return {second.features, second.mask, region};
}

template <typename T>
RfrModule::ReasonResult<T> RfrModule::feature_reason(
    const Context<T>& ctx, const Var<T>& features, const Tensor<T>& mask,
    const std::optional<AttentionState<T>>& attention, std::size_t recurrence_index) const {
  if (features.shape().c != channels_) {
    throw DimensionError("feature_reason: expected " + std::to_string(channels_) +
                         " channels (axis c), got " + std::to_string(features.shape().c));
  }
  const Var<T> c1 = apply_layer(ctx, layer("Conv1"), features);
  const Var<T> c2 = apply_layer(ctx, layer("Conv2"), c1);
  const Var<T> c3 = apply_layer(ctx, layer("Conv3"), c2);
  const Var<T> c4 = apply_layer(ctx, layer("Conv4"), c3);
  const Var<T> c5 = apply_layer(ctx, layer("Conv5"), c4);
  const Var<T> c6 = apply_layer(ctx, layer("Conv6"), c5);
  const Var<T> c7 = apply_layer(ctx, layer("Conv7"), concat_channels(c6, c5));
  const Var<T> c8 = apply_layer(ctx, layer("Conv8"), concat_channels(c7, c4));

  ReasonResult<T> result;
  Var<T> bottleneck = c8;
  if (config_.attention) {
    const Tensor<T> valid = nearest_downsample(mask, kBottleneckFactor);
    auto kca = kca_forward(ctx, kca_prefix(), c8, valid, attention, recurrence_index, config_.kca);
    bottleneck = kca.features;
    result.attention = std::move(kca.state);
  }
  const Var<T> d1 = apply_layer(ctx, layer("DeConv1"), concat_channels(bottleneck, c3));
  const Var<T> d2 = apply_layer(ctx, layer("DeConv2"), concat_channels(d1, c2));
  result.features = apply_layer(ctx, layer("DeConv3"), concat_channels(d2, c1));
  return result;
}

template <typename T>
RfrModule::Output<T> RfrModule::forward(const Context<T>& ctx, const Var<T>& features,
                                        const Tensor<T>& mask) const {
  require_binary_mask(mask, "rfr_forward");
  Output<T> out;
  Var<T> current = features;
  Tensor<T> current_mask = mask;
  std::optional<AttentionState<T>> attention;
  for (std::size_t i = 0; i < config_.iter_num; ++i) {
    auto area = area_identify(ctx, current, current_mask);
    auto reasoned = feature_reason(ctx, area.features, area.mask, attention, i);
    current = reasoned.features;
    current_mask = area.mask;
    attention = reasoned.attention;
    if (attention) out.scores.push_back(attention->prev_score);
    out.state.features.push_back(current);
    out.state.masks.push_back(current_mask);
    out.regions.push_back(std::move(area.region));
  }
  out.merged = merge_features(out.state, config_.merge_mode);
  ctx.emit_trace(prefix_ + ".FeatureMerge", out.merged.shape());
  return out;
}

template <typename T>
Var<T> merge_features(const RecurrenceState<T>& state, MergeMode mode) {
  if (state.size() == 0) throw ContractError("merge_features: empty recurrence state");
  if (state.masks.size() != state.features.size()) {
    throw ContractError("merge_features: feature and mask lists differ in length");
  }
  const Shape fs = state.features.front().shape();
  for (std::size_t i = 0; i < state.size(); ++i) {
    require_same_shape(fs, state.features[i].shape(), "merge_features (feature map)");
    require_same_shape(Shape{fs.n, 1, fs.h, fs.w}, state.masks[i].shape(), "merge_features (mask)");
  }
  if (mode == MergeMode::kLastOnly) return state.features.back();

  Var<T> numerator;
  Tensor<T> denominator(Shape{fs.n, 1, fs.h, fs.w});
  for (std::size_t i = 0; i < state.size(); ++i) {
    Var<T> term = state.features[i];
    if (mode == MergeMode::kAdaptive) {
      term = mul(term, Var<T>(state.masks[i]));
      auto d = denominator.data();
      for (std::size_t j = 0; j < d.size(); ++j) d[j] += state.masks[i][j];
    }
    numerator = i == 0 ? term : add(numerator, term);
  }
  if (mode == MergeMode::kAverage) {
    denominator = Tensor<T>(denominator.shape(), T(state.size()));
  }
  return divide_masked(numerator, denominator);
}

#define RFR_INSTANTIATE_MODULE(T)                                                               \
  template void RfrModule::register_params(ParamStore<T>&, std::uint64_t) const;                \
  template RfrModule::AreaResult<T> RfrModule::area_identify(const Context<T>&, const Var<T>&,  \
                                                             const Tensor<T>&) const;           \
  template RfrModule::ReasonResult<T> RfrModule::feature_reason(                                \
      const Context<T>&, const Var<T>&, const Tensor<T>&,                                       \
      const std::optional<AttentionState<T>>&, std::size_t) const;                              \
  template RfrModule::Output<T> RfrModule::forward(const Context<T>&, const Var<T>&,            \
                                                   const Tensor<T>&) const;                     \
  template Var<T> merge_features(const RecurrenceState<T>&, MergeMode);

RFR_INSTANTIATE_MODULE(float)
RFR_INSTANTIATE_MODULE(double)

}  // namespace rfr
