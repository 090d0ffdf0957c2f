#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rfr/kca.hpp"
#include "rfr/layers.hpp"
#include "rfr/partial_conv.hpp"

namespace rfr {

enum class MergeMode { kAdaptive, kAverage, kLastOnly };

const char* to_string(MergeMode mode);
/// Accepts "adaptive", "average", "last" (or "last_only").
MergeMode parse_merge_mode(const std::string& text);

struct ReasoningConfig {
  std::size_t iter_num = 6;
  MergeMode merge_mode = MergeMode::kAdaptive;
  bool attention = true;
  std::size_t channel_scale = 1;
  KcaConfig kca{};
};

/// Per-recurrence feature maps F^i and their masks M^i.
template <typename T>
struct RecurrenceState {
  std::vector<Var<T>> features;
  std::vector<Tensor<T>> masks;

  std::size_t size() const { return features.size(); }
};

/// Recurrent feature reasoning module: shared parameters under a name prefix
/// (normally "rfr"), reused by every recurrence.
class RfrModule {
 public:
  RfrModule(std::string prefix, ReasoningConfig config);

  const ReasoningConfig& config() const { return config_; }
  const std::string& prefix() const { return prefix_; }
  std::size_t channels() const { return channels_; }
  /// Spatial reduction between module input and the attention layer.
  static constexpr std::size_t kBottleneckFactor = 8;

  /// Layer rows of the module in table order (KCA fusion excluded).
  const std::vector<LayerSpec>& layers() const { return layers_; }
  const LayerSpec& layer(const std::string& short_name) const;
  std::string kca_prefix() const { return prefix_ + ".KCA"; }

  template <typename T>
  void register_params(ParamStore<T>& store, std::uint64_t seed) const;

  /// Scalars owned by the module (independent of iter_num).
  std::size_t param_count() const;

  template <typename T>
  struct AreaResult {
    Var<T> features;
    Tensor<T> mask;
    Tensor<T> region;  // newly valid positions: updated mask minus input mask
  };
  /// Two cascaded k7 stride-1 partial convolutions.
  template <typename T>
  AreaResult<T> area_identify(const Context<T>& ctx, const Var<T>& features,
                              const Tensor<T>& mask) const;

  template <typename T>
  struct ReasonResult {
    Var<T> features;
    std::optional<AttentionState<T>> attention;
  };
  /// Encoder/decoder with skip concatenations and attention after the third
  /// last layer. `mask` (module resolution) supplies attention validity.
  template <typename T>
  ReasonResult<T> feature_reason(const Context<T>& ctx, const Var<T>& features,
                                 const Tensor<T>& mask,
                                 const std::optional<AttentionState<T>>& attention,
                                 std::size_t recurrence_index) const;

  template <typename T>
  struct Output {
    Var<T> merged;
    RecurrenceState<T> state;
    std::vector<Tensor<T>> regions;
    std::vector<Var<T>> scores;  // final attention scores per recurrence
  };
  /// Runs exactly iter_num recurrences then merges.
  template <typename T>
  Output<T> forward(const Context<T>& ctx, const Var<T>& features, const Tensor<T>& mask) const;

 private:
  std::string prefix_;
  ReasoningConfig config_;
  std::size_t channels_;
  std::vector<LayerSpec> layers_;
};

/// Adaptive: sum_i F^i*M^i / sum_i M^i (0 where no recurrence is valid);
/// average: plain mean of F^i; last-only: F^N.
template <typename T>
Var<T> merge_features(const RecurrenceState<T>& state, MergeMode mode);

}  // namespace rfr
