#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rfr {

// Error taxonomy shared by every module.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public IoError {
 public:
  using IoError::IoError;
};

/// Rank-4 extent (batch, channel, height, width).
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Live/peak byte counters for tensor storage. Used to compare activation
/// footprints between network configurations.
namespace memory {
std::size_t live_bytes();
std::size_t peak_bytes();
/// Resets the peak to the current live byte count.
void reset_peak();
void on_alloc(std::size_t bytes);
void on_free(std::size_t bytes);
}  // namespace memory

template <typename T>
struct CountingAllocator {
  using value_type = T;
  CountingAllocator() = default;
  template <typename U>
  CountingAllocator(const CountingAllocator<U>&) {}
  T* allocate(std::size_t count) {
    memory::on_alloc(count * sizeof(T));
    return std::allocator<T>{}.allocate(count);
  }
  void deallocate(T* ptr, std::size_t count) {
    memory::on_free(count * sizeof(T));
    std::allocator<T>{}.deallocate(ptr, count);
  }
  template <typename U>
  bool operator==(const CountingAllocator<U>&) const { return true; }
};

/// Dense row-major rank-4 tensor with shared copy-on-write storage. Copies are
/// cheap; mutation through `data()` detaches the storage first.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Storage = std::vector<T, CountingAllocator<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::span<const T> values);

  static Tensor zeros(Shape shape) { return Tensor(shape); }
  static Tensor full(Shape shape, T value) { return Tensor(shape, value); }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return shape_.numel(); }
  bool empty() const { return numel() == 0; }

  std::span<const T> values() const;
  std::span<T> data();
  const T* raw() const { return storage_ ? storage_->data() : nullptr; }

  T operator[](std::size_t i) const { return (*storage_)[i]; }
  T at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return (*storage_)[index(n, c, y, x)];
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data()[index(n, c, y, x)];
  }
  std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  /// Same storage viewed under a new shape with equal element count.
  Tensor reshaped(Shape shape) const;

  template <typename U>
  Tensor<U> cast() const;

  bool shares_storage_with(const Tensor& other) const {
    return storage_ && storage_ == other.storage_;
  }

 private:
  Shape shape_{};
  std::shared_ptr<Storage> storage_;
};

/// Throws DimensionError naming `what` when shapes differ.
void require_same_shape(const Shape& a, const Shape& b, const std::string& what);

/// True when every element is exactly 0 or 1.
template <typename T>
bool is_binary(const Tensor<T>& t);

template <typename T>
bool all_finite(const Tensor<T>& t);

template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace rfr
