#pragma once

#include "rfr/tensor.hpp"

namespace rfr {

struct SsimConfig {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double data_range = 1.0;
};

/// 10*log10(1/MSE) for images in [0,1]; +infinity when the images are equal.
template <typename T>
double psnr(const Tensor<T>& pred, const Tensor<T>& gt);

/// Gaussian-window SSIM. Near borders the window is truncated to in-bounds
/// pixels and renormalized. The map is averaged over pixels, channels and batch.
template <typename T>
double ssim(const Tensor<T>& pred, const Tensor<T>& gt, const SsimConfig& cfg = {});

template <typename T>
double mean_l1(const Tensor<T>& pred, const Tensor<T>& gt);

struct ImageMetrics {
  double psnr = 0;
  double ssim = 0;
  double mean_l1 = 0;
};

template <typename T>
ImageMetrics metrics(const Tensor<T>& pred, const Tensor<T>& gt);

}  // namespace rfr
