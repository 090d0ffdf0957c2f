#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rfr/rfr_module.hpp"

namespace rfr {

struct NetConfig {
  /// Number of stride-2 encoders in front of the RFR module (1 is the default
  /// network; each extra level adds one encoder and one matching decoder).
  std::size_t downsample_depth = 1;
  ReasoningConfig reasoning{};
  /// Expected input side; 0 accepts any side that satisfies the divisibility rule.
  std::size_t resolution = 256;
  /// Divisor applied to every feature channel count.
  std::size_t channel_scale = 1;

  /// Input sides must be multiples of this.
  std::size_t size_multiple() const;
};

/// One row of the assembled network for reporting. `source` names what feeds
/// the layer ("input", a layer name, or "cat(a,b)").
struct LayerDescriptor {
  std::string name;
  std::string kind;  // partial_conv, conv, deconv, rfr, concat_source
  std::string source;
  std::size_t kernel = 0;
  std::size_t stride = 0;
  std::size_t out_channels = 0;
  bool batch_norm = false;
  Activation activation = Activation::kNone;
  std::size_t params = 0;
};

template <typename T>
struct NetOutput {
  Var<T> prediction;    // raw network output
  Tensor<T> composite;  // mask*input + (1-mask)*prediction
  typename RfrModule::Output<T> reasoning;
};

template <typename T>
class NetworkGraph {
 public:
  NetworkGraph(const NetConfig& config, std::uint64_t seed);

  const NetConfig& config() const { return config_; }
  const RfrModule& module() const { return module_; }
  /// Image-resolution and encoder/decoder layers outside the RFR module, in
  /// execution order.
  const std::vector<LayerSpec>& outer_layers() const { return outer_; }
  const LayerSpec& layer(const std::string& name) const;

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// Rows in execution order, with the module's layers nested after "RFR".
  std::vector<LayerDescriptor> describe() const;
  std::size_t param_count() const;

  Context<T> context(Tape<T>* tape, BnMode mode, TraceFn trace = {});

  /// `masked` is (n,3,H,W) with holes zeroed; `mask` is (n,1,H,W), 1 = valid.
  NetOutput<T> forward(const Context<T>& ctx, const Tensor<T>& masked, const Tensor<T>& mask) const;
  /// Inference in eval mode without a tape.
  NetOutput<T> infer(const Tensor<T>& masked, const Tensor<T>& mask, TraceFn trace = {});

  /// Same architecture and values in another precision.
  template <typename U>
  NetworkGraph<U> cast() const;

 private:
  template <typename U>
  friend class NetworkGraph;
  NetworkGraph(const NetConfig& config, ParamStore<T> params);

  void check_input(const Tensor<T>& masked, const Tensor<T>& mask) const;

  NetConfig config_;
  RfrModule module_;
  std::vector<LayerSpec> outer_;
  ParamStore<T> params_;
};

/// Validates the configuration and builds seeded parameters.
template <typename T>
NetworkGraph<T> build(const NetConfig& config, std::uint64_t seed) {
  return NetworkGraph<T>(config, seed);
}

/// mask*input + (1-mask)*prediction with a (n,1,h,w) mask.
template <typename T>
Tensor<T> composite(const Tensor<T>& input, const Tensor<T>& prediction, const Tensor<T>& mask);

template <typename T>
template <typename U>
NetworkGraph<U> NetworkGraph<T>::cast() const {
  return NetworkGraph<U>(config_, params_.template cast<U>());
}

}  // namespace rfr
