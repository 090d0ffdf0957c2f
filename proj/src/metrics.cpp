#include "rfr/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace rfr {

template <typename T>
double psnr(const Tensor<T>& pred, const Tensor<T>& gt) {
  require_same_shape(pred.shape(), gt.shape(), "psnr");
  double sq = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = double(pred[i]) - double(gt[i]);
    sq += d * d;
  }
  const double mse = sq / static_cast<double>(pred.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

template <typename T>
double mean_l1(const Tensor<T>& pred, const Tensor<T>& gt) {
  require_same_shape(pred.shape(), gt.shape(), "mean_l1");
  double total = 0;
  for (std::size_t i = 0; i < pred.numel(); ++i) total += std::abs(double(pred[i]) - double(gt[i]));
  return total / static_cast<double>(pred.numel());
}

template <typename T>
double ssim(const Tensor<T>& pred, const Tensor<T>& gt, const SsimConfig& cfg) {
  require_same_shape(pred.shape(), gt.shape(), "ssim");
  if (cfg.window % 2 == 0) throw ConfigError("ssim window side must be odd");
  const Shape s = pred.shape();
  const long half = static_cast<long>(cfg.window / 2);
  std::vector<double> g(cfg.window);
  for (long i = -half; i <= half; ++i) {
    g[i + half] = std::exp(-double(i * i) / (2 * cfg.sigma * cfg.sigma));
  }
  const double c1 = std::pow(cfg.k1 * cfg.data_range, 2);
  const double c2 = std::pow(cfg.k2 * cfg.data_range, 2);
  const long H = static_cast<long>(s.h), W = static_cast<long>(s.w);

  double total = 0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (long y = 0; y < H; ++y) {
        for (long x = 0; x < W; ++x) {
          double wsum = 0, mx = 0, my = 0, xx = 0, yy = 0, xy = 0;
          for (long dy = -half; dy <= half; ++dy) {
            const long yy_ = y + dy;
            if (yy_ < 0 || yy_ >= H) continue;
            for (long dx = -half; dx <= half; ++dx) {
              const long xx_ = x + dx;
              if (xx_ < 0 || xx_ >= W) continue;
              const double w = g[dy + half] * g[dx + half];
              const double a = pred.at(n, c, yy_, xx_);
              const double b = gt.at(n, c, yy_, xx_);
              wsum += w;
              mx += w * a;
              my += w * b;
              xx += w * a * a;
              yy += w * b * b;
              xy += w * a * b;
            }
          }
          mx /= wsum;
          my /= wsum;
          const double vx = xx / wsum - mx * mx;
          const double vy = yy / wsum - my * my;
          const double cov = xy / wsum - mx * my;
          total += ((2 * mx * my + c1) * (2 * cov + c2)) /
                   ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
      }
    }
  }
  return total / static_cast<double>(s.numel());
}

template <typename T>
ImageMetrics metrics(const Tensor<T>& pred, const Tensor<T>& gt) {
  return {psnr(pred, gt), ssim(pred, gt), mean_l1(pred, gt)};
}

#define RFR_INSTANTIATE_METRICS(T)                                                \
  template double psnr(const Tensor<T>&, const Tensor<T>&);                       \
  template double ssim(const Tensor<T>&, const Tensor<T>&, const SsimConfig&);    \
  template double mean_l1(const Tensor<T>&, const Tensor<T>&);                    \
  template ImageMetrics metrics(const Tensor<T>&, const Tensor<T>&);

RFR_INSTANTIATE_METRICS(float)
RFR_INSTANTIATE_METRICS(double)

}  // namespace rfr
