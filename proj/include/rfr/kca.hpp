#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "rfr/layers.hpp"

namespace rfr {

// Knowledge-consistent attention.
//
// Score tensors have shape (n, h*w, h, w): the channel axis indexes the key
// location (x', y') in row-major order and the spatial axes index the query
// location (x, y). Softmax therefore runs across channels, query smoothing is
// a spatial box filter, and the per-query validity mask broadcasts over
// channels.

inline constexpr double kCosineNormFloor = 1e-8;

struct KcaConfig {
  std::size_t smoothing_side = 3;
};

template <typename T>
struct AttentionState {
  Var<T> prev_score;     // final scores of the previous recurrence
  Tensor<T> prev_valid;  // (n,1,h,w) validity at attention resolution
  std::size_t recurrence_index = 0;
};

/// Pairwise cosine similarity between channel vectors.
template <typename T>
Var<T> cosine_scores(const Var<T>& features);

/// Neighbourhood mean over queries (in-bounds count as denominator) followed
/// by softmax over keys.
template <typename T>
Var<T> smooth_and_softmax(const Var<T>& similarity, std::size_t side);

/// Blends current scores with the previous recurrence's final scores through
/// the gate sigmoid(lambda_raw) at queries that were valid last recurrence.
/// Recurrence 0 returns the current scores unchanged.
template <typename T>
Var<T> blend_scores(const Var<T>& current, const std::optional<AttentionState<T>>& state,
                    std::size_t recurrence_index, const Var<T>& lambda_raw);

/// Score-weighted reconstruction of every query feature from all keys.
template <typename T>
Var<T> reconstruct(const Var<T>& features, const Var<T>& score);

/// Pixel-wise (1x1) convolution over concat(reconstructed, features).
template <typename T>
Var<T> fuse(const Var<T>& reconstructed, const Var<T>& features, const Var<T>& weight,
            const Var<T>& bias);

template <typename T>
struct KcaOutput {
  Var<T> features;
  AttentionState<T> state;  // to be passed to the next recurrence
};

/// Full attention step. `valid` is the current recurrence's mask at attention
/// resolution; it becomes prev_valid for the next recurrence.
template <typename T>
KcaOutput<T> kca_forward(const Context<T>& ctx, const std::string& prefix, const Var<T>& features,
                         const Tensor<T>& valid, const std::optional<AttentionState<T>>& state,
                         std::size_t recurrence_index, const KcaConfig& config);

/// Registers `<prefix>.fuse.*` (1x1 conv, 2c -> c) and `<prefix>.lambda`
/// (raw gate, initialized to 0).
template <typename T>
void register_kca(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
                  std::uint64_t seed);

LayerSpec kca_fuse_spec(const std::string& prefix, std::size_t channels);

}  // namespace rfr
