#include "rfr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace rfr {

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

namespace memory {
namespace {
std::size_t g_live = 0;
std::size_t g_peak = 0;
}  // namespace

std::size_t live_bytes() { return g_live; }
std::size_t peak_bytes() { return g_peak; }
void reset_peak() { g_peak = g_live; }
void on_alloc(std::size_t bytes) {
  g_live += bytes;
  g_peak = std::max(g_peak, g_live);
}
void on_free(std::size_t bytes) { g_live -= bytes; }
}  // namespace memory

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill)
    : shape_(shape), storage_(std::make_shared<Storage>(shape.numel(), fill)) {}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::span<const T> values) : shape_(shape) {
  if (values.size() != shape.numel()) {
    throw DimensionError("tensor of shape " + shape.str() + " needs " +
                         std::to_string(shape.numel()) + " values, got " +
                         std::to_string(values.size()));
  }
  storage_ = std::make_shared<Storage>(values.begin(), values.end());
}

template <typename T>
std::span<const T> Tensor<T>::values() const {
  if (!storage_) return {};
  return {storage_->data(), storage_->size()};
}

template <typename T>
std::span<T> Tensor<T>::data() {
  if (!storage_) return {};
  if (storage_.use_count() > 1) storage_ = std::make_shared<Storage>(*storage_);
  return {storage_->data(), storage_->size()};
}

template <typename T>
Tensor<T> Tensor<T>::reshaped(Shape shape) const {
  if (shape.numel() != numel()) {
    throw DimensionError("cannot reshape " + shape_.str() + " to " + shape.str());
  }
  Tensor out = *this;
  out.shape_ = shape;
  return out;
}

template <typename T>
template <typename U>
Tensor<U> Tensor<T>::cast() const {
  Tensor<U> out(shape_);
  auto dst = out.data();
  auto src = values();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<U>(src[i]);
  return out;
}

void require_same_shape(const Shape& a, const Shape& b, const std::string& what) {
  if (a == b) return;
  std::string axes;
  if (a.n != b.n) axes += " n";
  if (a.c != b.c) axes += " c";
  if (a.h != b.h) axes += " h";
  if (a.w != b.w) axes += " w";
  throw DimensionError(what + ": shape " + a.str() + " vs " + b.str() + " differs on axes" + axes);
}

template <typename T>
bool is_binary(const Tensor<T>& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](T v) { return v == T(0) || v == T(1); });
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  return std::all_of(t.values().begin(), t.values().end(),
                     [](T v) { return std::isfinite(v); });
}

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!(a.shape() == b.shape())) return false;
  if (a.numel() == 0) return true;
  return std::memcmp(a.raw(), b.raw(), a.numel() * sizeof(T)) == 0;
}

template class Tensor<float>;
template class Tensor<double>;
template Tensor<double> Tensor<float>::cast<double>() const;
template Tensor<float> Tensor<double>::cast<float>() const;
template Tensor<float> Tensor<float>::cast<float>() const;
template Tensor<double> Tensor<double>::cast<double>() const;
template bool is_binary(const Tensor<float>&);
template bool is_binary(const Tensor<double>&);
template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);
template bool bit_equal(const Tensor<float>&, const Tensor<float>&);
template bool bit_equal(const Tensor<double>&, const Tensor<double>&);

}  // namespace rfr
