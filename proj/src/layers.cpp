#include "rfr/layers.hpp"

#include <cmath>

#include "rfr/random.hpp"

namespace rfr {

const char* to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kPartialConv: return "partial_conv";
    case LayerKind::kConv: return "conv";
    case LayerKind::kDeconv: return "deconv";
  }
  return "?";
}

const char* to_string(Activation act) {
  switch (act) {
    case Activation::kNone: return "none";
    case Activation::kRelu: return "relu";
    case Activation::kLeakyRelu: return "leaky_relu";
  }
  return "?";
}

std::size_t LayerSpec::param_count() const {
  std::size_t total = in_channels * out_channels * kernel * kernel + out_channels;
  if (batch_norm) total += 2 * out_channels;
  return total;
}

template <typename T>
void register_layer(ParamStore<T>& store, const LayerSpec& spec, std::uint64_t seed) {
  const Shape wshape = spec.kind == LayerKind::kDeconv
                           ? Shape{spec.in_channels, spec.out_channels, spec.kernel, spec.kernel}
                           : Shape{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
  const double fan_in = static_cast<double>(wshape.c * spec.kernel * spec.kernel);
  const double bound = std::sqrt(6.0 / fan_in);
  Tensor<T> weight(wshape);
  Rng rng(derive_seed(seed, spec.weight_name()));
  for (T& v : weight.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  store.add(spec.weight_name(), std::move(weight));
  store.add(spec.bias_name(), Tensor<T>(Shape{spec.out_channels, 1, 1, 1}));
  if (spec.batch_norm) {
    const Shape cs{spec.out_channels, 1, 1, 1};
    store.add(spec.gamma_name(), Tensor<T>(cs, T(1)));
    store.add(spec.beta_name(), Tensor<T>(cs));
    store.add_buffer(spec.running_mean_name(), Tensor<T>(cs));
    store.add_buffer(spec.running_var_name(), Tensor<T>(cs, T(1)));
  }
}

template <typename T>
Var<T> norm_act(const Context<T>& ctx, const LayerSpec& spec, Var<T> x) {
  if (spec.batch_norm) {
    x = batch_norm(x, ctx.param(spec.gamma_name()), ctx.param(spec.beta_name()),
                   ctx.params->buffer(spec.running_mean_name()),
                   ctx.params->buffer(spec.running_var_name()), ctx.bn_mode);
  }
  switch (spec.activation) {
    case Activation::kNone: return x;
    case Activation::kRelu: return relu(x);
    case Activation::kLeakyRelu: return leaky_relu(x, T(kLeakySlope));
  }
  return x;
}

template <typename T>
Var<T> apply_layer(const Context<T>& ctx, const LayerSpec& spec, const Var<T>& x) {
  const Var<T> w = ctx.param(spec.weight_name());
  const Var<T> b = ctx.param(spec.bias_name());
  Var<T> y;
  switch (spec.kind) {
    case LayerKind::kConv: y = conv2d(x, w, b, spec.stride, spec.padding); break;
    case LayerKind::kDeconv: y = conv_transpose2d(x, w, b, spec.stride, spec.padding); break;
    case LayerKind::kPartialConv:
      throw ContractError("apply_layer: partial convolution " + spec.name + " needs a mask");
  }
  y = norm_act(ctx, spec, std::move(y));
  ctx.emit_trace(spec.name, y.shape());
  return y;
}

template void register_layer(ParamStore<float>&, const LayerSpec&, std::uint64_t);
template void register_layer(ParamStore<double>&, const LayerSpec&, std::uint64_t);
template Var<float> norm_act(const Context<float>&, const LayerSpec&, Var<float>);
template Var<double> norm_act(const Context<double>&, const LayerSpec&, Var<double>);
template Var<float> apply_layer(const Context<float>&, const LayerSpec&, const Var<float>&);
template Var<double> apply_layer(const Context<double>&, const LayerSpec&, const Var<double>&);

}  // namespace rfr
