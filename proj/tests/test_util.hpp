#pragma once

#include <cmath>

#include "rfr/random.hpp"
#include "rfr/tensor.hpp"

namespace rfr::testing {

template <typename T = double>
Tensor<T> random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<T> t(s);
  for (T& v : t.data()) v = T(rng.uniform(lo, hi));
  return t;
}

template <typename T = double>
Tensor<T> random_mask(Shape s, Rng& rng, double p_valid) {
  Tensor<T> t(s);
  for (T& v : t.data()) v = rng.uniform() < p_valid ? T(1) : T(0);
  return t;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst;
}

template <typename T>
double max_abs(const Tensor<T>& a) {
  double worst = 0;
  for (T v : a.values()) worst = std::max(worst, std::abs(double(v)));
  return worst;
}

template <typename T>
double dot(const Tensor<T>& a, const Tensor<T>& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) acc += double(a[i]) * double(b[i]);
  return acc;
}

}  // namespace rfr::testing
