#include "rfr/losses.hpp"

#include <cmath>

#include "rfr/random.hpp"

namespace rfr {

template <typename T>
FeatureExtractor<T>::FeatureExtractor(std::uint64_t seed) {
  std::size_t in = 3;
  for (std::size_t i = 0; i < kChannels.size(); ++i) {
    const std::size_t out = kChannels[i];
    Tensor<T> w(Shape{out, in, 3, 3});
    const double bound = std::sqrt(6.0 / static_cast<double>(in * 9));
    Rng rng(derive_seed(seed, "extractor.stage" + std::to_string(i)));
    for (T& v : w.data()) v = static_cast<T>(rng.uniform(-bound, bound));
    weights_.push_back(std::move(w));
    biases_.emplace_back(Shape{out, 1, 1, 1});
    in = out;
  }
}

template <typename T>
std::vector<Var<T>> FeatureExtractor<T>::features(const Var<T>& image) const {
  std::vector<Var<T>> out;
  Var<T> x = image;
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    x = avg_pool2(relu(conv2d(x, Var<T>(weights_[i]), Var<T>(biases_[i]), 1, 1)));
    out.push_back(x);
  }
  return out;
}

template <typename T>
std::pair<Var<T>, Var<T>> l1_region_losses(const Var<T>& pred, const Tensor<T>& gt,
                                           const Tensor<T>& mask) {
  require_same_shape(pred.shape(), gt.shape(), "l1_region_losses (prediction vs target)");
  const Shape s = gt.shape();
  require_same_shape(Shape{s.n, 1, s.h, s.w}, mask.shape(), "l1_region_losses (mask)");
  Tensor<T> hole_mask(mask.shape());
  auto hm = hole_mask.data();
  for (std::size_t i = 0; i < hm.size(); ++i) hm[i] = T(1) - mask[i];
  const Var<T> diff = sub(pred, Var<T>(gt));
  return {mean(abs(mul(diff, Var<T>(hole_mask)))), mean(abs(mul(diff, Var<T>(mask))))};
}

template <typename T>
Var<T> perceptual_loss(const Var<T>& pred, const Tensor<T>& gt, const FeatureExtractor<T>& fx) {
  require_same_shape(pred.shape(), gt.shape(), "perceptual_loss");
  const auto fp = fx.features(pred);
  const auto fg = fx.features(Var<T>(gt));
  Var<T> total;
  for (std::size_t i = 0; i < fp.size(); ++i) {
    const Var<T> term = mean(abs(sub(fg[i], fp[i])));
    total = i == 0 ? term : add(total, term);
  }
  return total;
}

template <typename T>
Var<T> style_term(const Var<T>& phi_pred, const Var<T>& phi_gt) {
  require_same_shape(phi_pred.shape(), phi_gt.shape(), "style_term");
  const Shape s = phi_pred.shape();
  const T norm = T(1) / static_cast<T>(s.c * s.h * s.w);
  const Var<T> gram_p = bmm(phi_pred, phi_pred, false, true);
  const Var<T> gram_g = bmm(phi_gt, phi_gt, false, true);
  // mean over the C x C entries supplies the outer 1/C^2 (and 1/n over the batch).
  return mean(abs(scale(sub(gram_g, gram_p), norm)));
}

template <typename T>
Var<T> style_loss(const Var<T>& pred, const Tensor<T>& gt, const FeatureExtractor<T>& fx) {
  require_same_shape(pred.shape(), gt.shape(), "style_loss");
  const auto fp = fx.features(pred);
  const auto fg = fx.features(Var<T>(gt));
  Var<T> total;
  for (std::size_t i = 0; i < fp.size(); ++i) {
    const Var<T> term = style_term(fp[i], fg[i]);
    total = i == 0 ? term : add(total, term);
  }
  return total;
}

template <typename T>
Var<T> total_loss(const Var<T>& hole, const Var<T>& valid, const Var<T>& perceptual,
                  const Var<T>& style, const LossWeights& w) {
  Var<T> out = scale(hole, T(w.hole));
  out = add(out, scale(valid, T(w.valid)));
  out = add(out, scale(style, T(w.style)));
  return add(out, scale(perceptual, T(w.perceptual)));
}

double total_loss(const LossValues& c, const LossWeights& w) {
  return w.hole * c.hole + w.valid * c.valid + w.style * c.style + w.perceptual * c.perceptual;
}

template <typename T>
LossTerms<T> compute_losses(const Var<T>& pred, const Tensor<T>& gt, const Tensor<T>& mask,
                            const FeatureExtractor<T>& fx, const LossWeights& w) {
  LossTerms<T> t;
  std::tie(t.hole, t.valid) = l1_region_losses(pred, gt, mask);
  t.perceptual = perceptual_loss(pred, gt, fx);
  t.style = style_loss(pred, gt, fx);
  t.total = total_loss(t.hole, t.valid, t.perceptual, t.style, w);
  return t;
}

template <typename T>
LossValues values_of(const LossTerms<T>& t) {
  return {double(t.total.value()[0]), double(t.hole.value()[0]), double(t.valid.value()[0]),
          double(t.perceptual.value()[0]), double(t.style.value()[0])};
}

#define RFR_INSTANTIATE_LOSSES(T)                                                                  \
  template class FeatureExtractor<T>;                                                              \
  template std::pair<Var<T>, Var<T>> l1_region_losses(const Var<T>&, const Tensor<T>&,             \
                                                      const Tensor<T>&);                           \
  template Var<T> perceptual_loss(const Var<T>&, const Tensor<T>&, const FeatureExtractor<T>&);    \
  template Var<T> style_term(const Var<T>&, const Var<T>&);                                        \
  template Var<T> style_loss(const Var<T>&, const Tensor<T>&, const FeatureExtractor<T>&);         \
  template Var<T> total_loss(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,           \
                             const LossWeights&);                                                  \
  template LossTerms<T> compute_losses(const Var<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                       const FeatureExtractor<T>&, const LossWeights&);            \
  template LossValues values_of(const LossTerms<T>&);

RFR_INSTANTIATE_LOSSES(float)
RFR_INSTANTIATE_LOSSES(double)

}  // namespace rfr
