#include "rfr/kca.hpp"

namespace rfr {

LayerSpec kca_fuse_spec(const std::string& prefix, std::size_t channels) {
  LayerSpec spec;
  spec.name = prefix + ".fuse";
  spec.kind = LayerKind::kConv;
  spec.in_channels = 2 * channels;
  spec.out_channels = channels;
  spec.kernel = 1;
  spec.stride = 1;
  spec.padding = 0;
  return spec;
}

template <typename T>
Var<T> cosine_scores(const Var<T>& features) {
  const Shape s = features.shape();
  const Var<T> unit = l2_normalize_channels(features, T(kCosineNormFloor));
  const Var<T> sim = bmm(unit, unit, /*transpose_a=*/true, /*transpose_b=*/false);
  return reshape(sim, Shape{s.n, s.plane(), s.h, s.w});
}

template <typename T>
Var<T> smooth_and_softmax(const Var<T>& similarity, std::size_t side) {
  return softmax_channels(side == 1 ? similarity : box_mean(similarity, side));
}

template <typename T>
Var<T> blend_scores(const Var<T>& current, const std::optional<AttentionState<T>>& state,
                    std::size_t recurrence_index, const Var<T>& lambda_raw) {
  if (recurrence_index == 0) return current;
  if (!state) {
    throw ContractError("blend_scores: recurrence " + std::to_string(recurrence_index) +
                        " requires the previous attention state");
  }
  return gated_blend(current, state->prev_score, lambda_raw, state->prev_valid);
}

template <typename T>
Var<T> reconstruct(const Var<T>& features, const Var<T>& score) {
  const Shape s = features.shape();
  const Var<T> out = bmm(features, score, false, false);
  return reshape(out, s);
}

template <typename T>
Var<T> fuse(const Var<T>& reconstructed, const Var<T>& features, const Var<T>& weight,
            const Var<T>& bias) {
  return conv2d(concat_channels(reconstructed, features), weight, bias, 1, 0);
}

template <typename T>
KcaOutput<T> kca_forward(const Context<T>& ctx, const std::string& prefix, const Var<T>& features,
                         const Tensor<T>& valid, const std::optional<AttentionState<T>>& state,
                         std::size_t recurrence_index, const KcaConfig& config) {
  const Shape s = features.shape();
  require_same_shape(Shape{s.n, 1, s.h, s.w}, valid.shape(), "kca_forward (validity mask)");
  const Var<T> current = smooth_and_softmax(cosine_scores(features), config.smoothing_side);
  const Var<T> score = blend_scores(current, state, recurrence_index, ctx.param(prefix + ".lambda"));
  const Var<T> rebuilt = reconstruct(features, score);
  const LayerSpec spec = kca_fuse_spec(prefix, s.c);
  const Var<T> out =
      fuse(rebuilt, features, ctx.param(spec.weight_name()), ctx.param(spec.bias_name()));
  ctx.emit_trace(prefix, out.shape());
  return {out, AttentionState<T>{score, valid, recurrence_index + 1}};
}

template <typename T>
void register_kca(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
                  std::uint64_t seed) {
  register_layer(store, kca_fuse_spec(prefix, channels), seed);
  store.add(prefix + ".lambda", Tensor<T>(Shape{1, 1, 1, 1}));
}

#define RFR_INSTANTIATE_KCA(T)                                                                  \
  template Var<T> cosine_scores(const Var<T>&);                                                 \
  template Var<T> smooth_and_softmax(const Var<T>&, std::size_t);                               \
  template Var<T> blend_scores(const Var<T>&, const std::optional<AttentionState<T>>&,          \
                               std::size_t, const Var<T>&);                                     \
  template Var<T> reconstruct(const Var<T>&, const Var<T>&);                                    \
  template Var<T> fuse(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&);             \
  template KcaOutput<T> kca_forward(const Context<T>&, const std::string&, const Var<T>&,        \
                                    const Tensor<T>&, const std::optional<AttentionState<T>>&,  \
                                    std::size_t, const KcaConfig&);                             \
  template void register_kca(ParamStore<T>&, const std::string&, std::size_t, std::uint64_t);

RFR_INSTANTIATE_KCA(float)
RFR_INSTANTIATE_KCA(double)

}  // namespace rfr
