#pragma once

#include <cstdint>

#include <cstddef>

#include "rfr/autograd.hpp"
#include "rfr/tensor.hpp"

namespace rfr {

enum class BnMode { kTrain, kEval, kFrozen };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;
inline constexpr double kLeakySlope = 0.2;

/// floor((in + 2*padding - kernel)/stride) + 1, or throws DimensionError.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                             std::size_t padding);
/// (in - 1)*stride - 2*padding + kernel, or throws DimensionError.
std::size_t conv_transpose_output_size(std::size_t in, std::size_t kernel, std::size_t stride,
                                       std::size_t padding);

// Convolution is cross-correlation with zero padding. Weight layout is
// (out, in, k, k); bias, when defined, has shape (out, 1, 1, 1).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride,
              std::size_t padding);

// Adjoint of conv2d with the same geometry. Weight layout is (in, out, k, k).
template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
                        std::size_t stride, std::size_t padding);

/// Per-channel normalization. Train mode uses batch statistics and updates the
/// running buffers in place; eval and frozen modes use the running buffers.
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>& running_mean,
                  Tensor<T>& running_var, BnMode mode);

/// While alive, records on this thread which linear piece every relu,
/// leaky_relu and abs element selects. Equal signatures from two evaluations
/// mean both points lie on the same smooth piece of the computed function.
class BranchProbe {
 public:
  BranchProbe();
  ~BranchProbe();
  BranchProbe(const BranchProbe&) = delete;
  BranchProbe& operator=(const BranchProbe&) = delete;

  std::uint64_t signature() const { return hash_; }
  void note(unsigned piece);

 private:
  BranchProbe* outer_;
  std::uint64_t hash_ = 1469598103934665603ull;
};

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope = T(kLeakySlope));
template <typename T>
Var<T> abs(const Var<T>& x);
template <typename T>
Var<T> square(const Var<T>& x);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
/// Elementwise product. `b` may have a single channel, broadcast over a's channels.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> scale(const Var<T>& x, T factor);
/// Adds a (c,1,1,1) bias to every spatial position of channel c.
template <typename T>
Var<T> add_channel_bias(const Var<T>& x, const Var<T>& bias);
template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape);

template <typename T>
Var<T> sum(const Var<T>& x);
template <typename T>
Var<T> mean(const Var<T>& x);

/// Softmax across the channel axis at every (n, y, x).
template <typename T>
Var<T> softmax_channels(const Var<T>& x);

/// Divides each channel vector by max(norm, floor).
template <typename T>
Var<T> l2_normalize_channels(const Var<T>& x, T floor);

/// Batched matrix product. Each operand is viewed as (n, c, h*w); the result
/// has shape (n, rows, cols, 1).
template <typename T>
Var<T> bmm(const Var<T>& a, const Var<T>& b, bool transpose_a, bool transpose_b);

/// Mean over the side x side spatial window centred on each position, divided
/// by the number of in-bounds terms.
template <typename T>
Var<T> box_mean(const Var<T>& x, std::size_t side);

/// out = g*current + (1-g)*previous at positions where valid == 1, else current,
/// with g = sigmoid(gate_raw). `valid` is (n,1,h,w) and broadcasts over channels.
template <typename T>
Var<T> gated_blend(const Var<T>& current, const Var<T>& previous, const Var<T>& gate_raw,
                   const Tensor<T>& valid);

/// x / denom with a (n,1,h,w) constant denominator broadcast over channels;
/// positions where denom == 0 yield 0.
template <typename T>
Var<T> divide_masked(const Var<T>& x, const Tensor<T>& denom);

/// 2x2 average pooling with stride 2.
template <typename T>
Var<T> avg_pool2(const Var<T>& x);

/// Nearest-neighbour downsampling by an integer factor (top-left sample).
template <typename T>
Tensor<T> nearest_downsample(const Tensor<T>& x, std::size_t factor);

}  // namespace rfr
