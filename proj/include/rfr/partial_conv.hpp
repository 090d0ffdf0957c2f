#pragma once

#include <cstddef>

#include "rfr/layers.hpp"

namespace rfr {

template <typename T>
struct PartialConvOutput {
  Var<T> features;
  Tensor<T> mask;  // (n,1,h',w'), binary
};

/// Renormalized masked convolution and its mask update.
///
/// At every output window with a non-zero mask sum:
///   out = W^T (x * m * sum(1)/sum(m)) + b
/// where sum(1) counts the full k*k*c_in support. Windows with no valid entry
/// produce exactly 0 (bias included) and an updated mask of 0.
///
/// `mask` is either single-channel, broadcast over the input channels, or
/// carries one channel per input channel. The mask is a constant: no gradient
/// flows through it.
template <typename T>
PartialConvOutput<T> partial_conv(const Var<T>& x, const Tensor<T>& mask, const Var<T>& weight,
                                  const Var<T>& bias, std::size_t stride, std::size_t padding);

/// Mask half of the partial convolution only: 1 where the k x k window holds
/// any valid entry. For stride 1 this is binary dilation of the valid set.
template <typename T>
Tensor<T> mask_update(const Tensor<T>& mask, std::size_t kernel, std::size_t stride,
                      std::size_t padding);

/// Partial convolution layer from a table row, followed by its normalization
/// and activation.
template <typename T>
PartialConvOutput<T> partial_conv_layer(const Context<T>& ctx, const LayerSpec& spec,
                                        const Var<T>& x, const Tensor<T>& mask);

/// Throws ContractError unless every element is 0 or 1.
template <typename T>
void require_binary_mask(const Tensor<T>& mask, const char* where);

}  // namespace rfr
