#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "rfr/autograd.hpp"
#include "rfr/ops.hpp"

namespace rfr {

enum class LayerKind { kPartialConv, kConv, kDeconv };
enum class Activation { kNone, kRelu, kLeakyRelu };

const char* to_string(LayerKind kind);
const char* to_string(Activation act);

/// One row of an architecture table.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  bool batch_norm = false;
  Activation activation = Activation::kNone;

  std::string weight_name() const { return name + ".weight"; }
  std::string bias_name() const { return name + ".bias"; }
  std::string gamma_name() const { return name + ".bn.gamma"; }
  std::string beta_name() const { return name + ".bn.beta"; }
  std::string running_mean_name() const { return name + ".bn.running_mean"; }
  std::string running_var_name() const { return name + ".bn.running_var"; }
  /// Trainable scalars this layer contributes.
  std::size_t param_count() const;
};

/// Registers weight, bias and (optionally) normalization tensors. Weights use
/// Kaiming-uniform fan-in init drawn from a stream derived from (seed, name);
/// biases and beta start at zero, gamma at one.
template <typename T>
void register_layer(ParamStore<T>& store, const LayerSpec& spec, std::uint64_t seed);

using TraceFn = std::function<void(const std::string& name, const Shape& shape)>;

/// Execution context for one forward pass. Without a tape the pass is pure
/// inference and intermediates are released as soon as they are consumed.
template <typename T>
struct Context {
  ParamStore<T>* params = nullptr;
  Tape<T>* tape = nullptr;
  BnMode bn_mode = BnMode::kEval;
  TraceFn trace;

  Var<T> param(const std::string& name) const {
    if (tape) return tape->param(*params, name);
    return Var<T>(params->entry(name).value);
  }
  void emit_trace(const std::string& name, const Shape& shape) const {
    if (trace) trace(name, shape);
  }
};

/// Optional normalization followed by the activation named in the spec.
template <typename T>
Var<T> norm_act(const Context<T>& ctx, const LayerSpec& spec, Var<T> x);

/// Dense conv or transposed-conv layer with its normalization and activation.
template <typename T>
Var<T> apply_layer(const Context<T>& ctx, const LayerSpec& spec, const Var<T>& x);

}  // namespace rfr
