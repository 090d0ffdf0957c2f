#include "rfr/partial_conv.hpp"

#include <string>
#include <vector>

namespace rfr {
namespace {

// Number of valid (channel, ky, kx) entries under each output window, summed
// across the mask's own channels.
template <typename T>
std::vector<std::size_t> window_counts(const Tensor<T>& mask, std::size_t kernel,
                                       std::size_t stride, std::size_t padding, std::size_t ho,
                                       std::size_t wo) {
  const Shape s = mask.shape();
  const long H = static_cast<long>(s.h);
  const long W = static_cast<long>(s.w);
  std::vector<std::size_t> counts(s.n * ho * wo, 0);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t total = 0;
        for (std::size_t c = 0; c < s.c; ++c) {
          for (std::size_t ky = 0; ky < kernel; ++ky) {
            const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(padding);
            if (iy < 0 || iy >= H) continue;
            for (std::size_t kx = 0; kx < kernel; ++kx) {
              const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(padding);
              if (ix < 0 || ix >= W) continue;
              if (mask.at(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) != T(0)) {
                ++total;
              }
            }
          }
        }
        counts[(n * ho + oy) * wo + ox] = total;
      }
    }
  }
  return counts;
}

}  // namespace

template <typename T>
void require_binary_mask(const Tensor<T>& mask, const char* where) {
  if (!is_binary(mask)) {
    throw ContractError(std::string(where) + ": mask must contain only 0 and 1");
  }
}

template <typename T>
Tensor<T> mask_update(const Tensor<T>& mask, std::size_t kernel, std::size_t stride,
                      std::size_t padding) {
  require_binary_mask(mask, "mask_update");
  const Shape s = mask.shape();
  const std::size_t ho = conv_output_size(s.h, kernel, stride, padding);
  const std::size_t wo = conv_output_size(s.w, kernel, stride, padding);
  const auto counts = window_counts(mask, kernel, stride, padding, ho, wo);
  Tensor<T> out(Shape{s.n, 1, ho, wo});
  auto o = out.data();
  for (std::size_t i = 0; i < counts.size(); ++i) o[i] = counts[i] > 0 ? T(1) : T(0);
  return out;
}

template <typename T>
PartialConvOutput<T> partial_conv(const Var<T>& x, const Tensor<T>& mask, const Var<T>& weight,
                                  const Var<T>& bias, std::size_t stride, std::size_t padding) {
  require_binary_mask(mask, "partial_conv");
  const Shape xs = x.shape();
  const Shape ms = mask.shape();
  if (ms.n != xs.n || ms.h != xs.h || ms.w != xs.w || (ms.c != 1 && ms.c != xs.c)) {
    throw DimensionError("partial_conv: mask " + ms.str() + " does not match features " +
                         xs.str() + " (mask needs 1 or " + std::to_string(xs.c) + " channels)");
  }
  const std::size_t k = weight.shape().h;
  const Var<T> masked = mul(x, Var<T>(mask));
  const Var<T> raw = conv2d(masked, weight, Var<T>(), stride, padding);
  const Shape os = raw.shape();
  const auto counts = window_counts(mask, k, stride, padding, os.h, os.w);

  // sum(1)/sum(m) over the k*k*c_in support; a single-channel mask stands for
  // c_in identical channels so its count scales by c_in.
  const double support = static_cast<double>(k * k * xs.c);
  const double per_entry = ms.c == 1 ? static_cast<double>(xs.c) : 1.0;
  Tensor<T> ratio(Shape{xs.n, 1, os.h, os.w});
  Tensor<T> updated(Shape{xs.n, 1, os.h, os.w});
  {
    auto r = ratio.data();
    auto u = updated.data();
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] == 0) continue;
      r[i] = static_cast<T>(support / (per_entry * static_cast<double>(counts[i])));
      u[i] = T(1);
    }
  }
  Var<T> out = mul(raw, Var<T>(ratio));
  if (bias.defined()) out = add_channel_bias(out, bias);
  out = mul(out, Var<T>(updated));
  return {out, updated};
}

template <typename T>
PartialConvOutput<T> partial_conv_layer(const Context<T>& ctx, const LayerSpec& spec,
                                        const Var<T>& x, const Tensor<T>& mask) {
  if (spec.kind != LayerKind::kPartialConv) {
    throw ContractError("partial_conv_layer: " + spec.name + " is not a partial convolution");
  }
  auto result = partial_conv(x, mask, ctx.param(spec.weight_name()), ctx.param(spec.bias_name()),
                             spec.stride, spec.padding);
  result.features = norm_act(ctx, spec, std::move(result.features));
  ctx.emit_trace(spec.name, result.features.shape());
  return result;
}

#define RFR_INSTANTIATE_PCONV(T)                                                                \
  template void require_binary_mask(const Tensor<T>&, const char*);                             \
  template Tensor<T> mask_update(const Tensor<T>&, std::size_t, std::size_t, std::size_t);      \
  template PartialConvOutput<T> partial_conv(const Var<T>&, const Tensor<T>&, const Var<T>&,    \
                                             const Var<T>&, std::size_t, std::size_t);          \
  template PartialConvOutput<T> partial_conv_layer(const Context<T>&, const LayerSpec&,         \
                                                   const Var<T>&, const Tensor<T>&);

RFR_INSTANTIATE_PCONV(float)
RFR_INSTANTIATE_PCONV(double)

}  // namespace rfr
