#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rfr/tensor.hpp"

namespace rfr {

template <typename T>
struct ParamEntry {
  Tensor<T> value;
  Tensor<T> grad;
  bool frozen = false;
};

/// Named trainable parameters with gradient slots, plus non-trainable buffers
/// (normalization running statistics). Names iterate in sorted order.
template <typename T>
class ParamStore {
 public:
  void add(const std::string& name, Tensor<T> value) {
    if (params_.count(name) || buffers_.count(name)) {
      throw ContractError("duplicate parameter name: " + name);
    }
    Tensor<T> grad(value.shape());
    params_.emplace(name, ParamEntry<T>{std::move(value), std::move(grad), false});
  }
  void add_buffer(const std::string& name, Tensor<T> value) {
    if (params_.count(name) || buffers_.count(name)) {
      throw ContractError("duplicate buffer name: " + name);
    }
    buffers_.emplace(name, std::move(value));
  }

  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  bool contains_buffer(const std::string& name) const { return buffers_.count(name) > 0; }

  ParamEntry<T>& entry(const std::string& name) { return lookup(params_, name, "parameter"); }
  const ParamEntry<T>& entry(const std::string& name) const {
    return lookup(params_, name, "parameter");
  }
  Tensor<T>& buffer(const std::string& name) { return lookup(buffers_, name, "buffer"); }
  const Tensor<T>& buffer(const std::string& name) const {
    return lookup(buffers_, name, "buffer");
  }

  std::map<std::string, ParamEntry<T>>& params() { return params_; }
  const std::map<std::string, ParamEntry<T>>& params() const { return params_; }
  std::map<std::string, Tensor<T>>& buffers() { return buffers_; }
  const std::map<std::string, Tensor<T>>& buffers() const { return buffers_; }

  void zero_grad() {
    for (auto& [name, e] : params_) e.grad = Tensor<T>(e.value.shape());
  }

  /// Freezes every parameter whose name matches the predicate.
  void set_frozen(const std::function<bool(const std::string&)>& match, bool frozen) {
    for (auto& [name, e] : params_) {
      if (match(name)) e.frozen = frozen;
    }
  }

  std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& [name, e] : params_) total += e.value.numel();
    return total;
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, e] : params_) {
      out.add(name, e.value.template cast<U>());
      out.entry(name).frozen = e.frozen;
    }
    for (const auto& [name, b] : buffers_) out.add_buffer(name, b.template cast<U>());
    return out;
  }

 private:
  template <typename Map>
  static auto& lookup(Map& map, const std::string& name, const char* kind) {
    auto it = map.find(name);
    if (it == map.end()) throw ContractError(std::string("unknown ") + kind + ": " + name);
    return it->second;
  }

  std::map<std::string, ParamEntry<T>> params_;
  std::map<std::string, Tensor<T>> buffers_;
};

template <typename T>
class Tape;

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  std::function<void(const Tensor<T>&)> backward;
  ParamEntry<T>* sink = nullptr;

  void accumulate(const Tensor<T>& g) {
    if (grad.empty()) {
      grad = g;
      return;
    }
    auto dst = grad.data();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }
};

/// Handle to a value that may be recorded on a tape. A Var without a tape is a
/// constant and never receives a gradient.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tensor<T> value)  // NOLINT: implicit constants are convenient in op chains
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
  }
  Var(std::shared_ptr<Node<T>> node, Tape<T>* tape) : node_(std::move(node)), tape_(tape) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return tape_ != nullptr; }
  Tape<T>* tape() const { return tape_; }
  Node<T>* node() const { return requires_grad() ? node_.get() : nullptr; }
  /// Gradient accumulated by the last backward pass; empty when unreached.
  const Tensor<T>& grad() const { return node_->grad; }

 private:
  std::shared_ptr<Node<T>> node_;
  Tape<T>* tape_ = nullptr;
};

/// Ordered record of differentiable operations. Backward replays the record in
/// reverse and adds parameter gradients into their ParamStore slots.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Frozen parameters enter as constants.
  Var<T> param(ParamStore<T>& store, const std::string& name) {
    auto& e = store.entry(name);
    if (e.frozen) return Var<T>(e.value);
    auto node = std::make_shared<Node<T>>();
    node->value = e.value;
    node->sink = &e;
    nodes_.push_back(node);
    return Var<T>(node, this);
  }

  /// Differentiable leaf whose gradient is read back through Var::grad().
  Var<T> leaf(Tensor<T> value) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    nodes_.push_back(node);
    return Var<T>(node, this);
  }

  Var<T> record(Tensor<T> value, std::function<void(const Tensor<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->backward = std::move(backward);
    nodes_.push_back(node);
    return Var<T>(node, this);
  }

  void backward(const Var<T>& loss) {
    if (loss.tape() != this) throw ContractError("backward: loss was not recorded on this tape");
    if (loss.value().numel() != 1) {
      throw ContractError("backward: loss must be scalar, got shape " + loss.shape().str());
    }
    for (auto& n : nodes_) n->grad = Tensor<T>();
    loss.node()->grad = Tensor<T>(loss.shape(), T(1));
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node<T>& n = **it;
      if (n.grad.empty()) continue;
      if (n.backward) n.backward(n.grad);
      if (n.sink) {
        auto dst = n.sink->grad.data();
        auto src = n.grad.values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::shared_ptr<Node<T>>> nodes_;
};

}  // namespace rfr
