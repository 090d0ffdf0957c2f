#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "rfr/ops.hpp"

namespace rfr {

/// Fixed three-stage feature network standing in for a pretrained backbone.
/// Each stage is conv3x3 (pad 1) + ReLU + 2x2 average pooling; channel counts
/// are 8, 16, 32 and scales 1/2, 1/4, 1/8. Weights come from the seed and are
/// never trained: they enter every pass as constants.
template <typename T>
class FeatureExtractor {
 public:
  static constexpr std::array<std::size_t, 3> kChannels{8, 16, 32};

  explicit FeatureExtractor(std::uint64_t seed);

  /// Feature maps after each pooling stage; gradients flow to `image` only.
  std::vector<Var<T>> features(const Var<T>& image) const;

  const std::vector<Tensor<T>>& weights() const { return weights_; }
  const std::vector<Tensor<T>>& biases() const { return biases_; }

 private:
  std::vector<Tensor<T>> weights_;
  std::vector<Tensor<T>> biases_;
};

struct LossWeights {
  double hole = 6.0;
  double valid = 1.0;
  double perceptual = 0.1;
  double style = 180.0;
};

template <typename T>
struct LossTerms {
  Var<T> hole;
  Var<T> valid;
  Var<T> perceptual;
  Var<T> style;
  Var<T> total;
};

/// Scalar snapshot of LossTerms.
struct LossValues {
  double total = 0;
  double hole = 0;
  double valid = 0;
  double perceptual = 0;
  double style = 0;
};

/// Means over every element of |(1-M)(pred-gt)| and |M(pred-gt)|; the mask
/// is (n,1,h,w) and broadcasts over channels.
template <typename T>
std::pair<Var<T>, Var<T>> l1_region_losses(const Var<T>& pred, const Tensor<T>& gt,
                                           const Tensor<T>& mask);

/// sum_i mean |phi_i(gt) - phi_i(pred)|
template <typename T>
Var<T> perceptual_loss(const Var<T>& pred, const Tensor<T>& gt, const FeatureExtractor<T>& fx);

/// One stage of the style loss: (1/C^2) * || (G(gt) - G(pred)) / (H W C) ||_1,
/// averaged over the batch.
template <typename T>
Var<T> style_term(const Var<T>& phi_pred, const Var<T>& phi_gt);

/// sum_i (1/C_i^2) * || (G_i(gt) - G_i(pred)) / (H_i W_i C_i) ||_1 with
/// G_i = phi_i phi_i^T over the (C_i, H_i W_i) view.
template <typename T>
Var<T> style_loss(const Var<T>& pred, const Tensor<T>& gt, const FeatureExtractor<T>& fx);

template <typename T>
Var<T> total_loss(const Var<T>& hole, const Var<T>& valid, const Var<T>& perceptual,
                  const Var<T>& style, const LossWeights& w);
double total_loss(const LossValues& components, const LossWeights& w);

template <typename T>
LossTerms<T> compute_losses(const Var<T>& pred, const Tensor<T>& gt, const Tensor<T>& mask,
                            const FeatureExtractor<T>& fx, const LossWeights& w);

template <typename T>
LossValues values_of(const LossTerms<T>& terms);

}  // namespace rfr
