// Copyright 2026 The selftrain Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Dense row-major tensors and the reverse-mode tape.
//
// A Tensor is a cheap handle onto a shared node holding shape, data and an
// optional gradient buffer. Operations (see ops.hpp) record a backward
// closure on the thread's active Tape whenever one of their inputs requires
// a gradient; without an active tape they run as plain arithmetic.
//
//     Tape<double> tape;
//     TapeScope<double> scope(tape);
//     auto loss = sum(mul(w, w));
//     backward(loss);          // w.grad() == 2 w
//
// Parameters are leaf tensors with requires_grad set. Their gradients
// accumulate across backward passes until zero_grad() (adam_step does this).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <memory>
#include <new>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "selftrain/core/error.hpp"

namespace selftrain {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// 64-byte aligned allocation. Eigen's vectorised loops peel differently
// depending on where a buffer starts, so fixed alignment keeps results
// bitwise reproducible from run to run.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  // Plain malloc plus manual alignment: glibc's memalign path fragments the
  // heap badly under the alloc/free pattern of batched forward passes.
  T* allocate(std::size_t n) {
    constexpr std::size_t a = static_cast<std::size_t>(kAlign);
    void* raw = std::malloc(n * sizeof(T) + a + sizeof(void*));
    if (!raw) throw std::bad_alloc();
    auto addr = (reinterpret_cast<std::uintptr_t>(raw) + sizeof(void*) + a - 1) & ~(a - 1);
    reinterpret_cast<void**>(addr)[-1] = raw;
    return reinterpret_cast<T*>(addr);
  }
  void deallocate(T* p, std::size_t) noexcept {
    if (p) std::free(reinterpret_cast<void**>(p)[-1]);
  }
  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <class T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <class T>
struct TensorNode {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;  // empty until first accumulation
  bool requires_grad = false;

  std::span<T> ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  Tensor(Shape shape, const std::vector<T>& data, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer<T>(data.begin(), data.end()), requires_grad) {}
  Tensor(Shape shape, std::initializer_list<T> data, bool requires_grad = false)
      : Tensor(std::move(shape), Buffer<T>(data), requires_grad) {}

  Tensor(Shape shape, Buffer<T> data, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<T>>()) {
    for (auto d : shape)
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != data.size())
      throw DimensionError("shape " + shape_str(shape) + " does not match " +
                           std::to_string(data.size()) + " elements");
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), Buffer<T>(n, T(0)), requires_grad);
  }

  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    const auto n = shape_numel(shape);
    return Tensor(std::move(shape), Buffer<T>(n, value), requires_grad);
  }

  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  Buffer<T>& storage() { return node_->data; }

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool r) { node_->requires_grad = r; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  T& operator[](std::size_t i) { return node_->data[i]; }
  const T& operator[](std::size_t i) const { return node_->data[i]; }

  // Copy of the values with no gradient history.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  const std::shared_ptr<TensorNode<T>>& node() const { return node_; }
  bool same_node(const Tensor& o) const { return node_ == o.node_; }

 private:
  std::shared_ptr<TensorNode<T>> node_;
};

// Ordered log of executed operations. Each entry keeps the output node alive
// plus a closure that holds whatever inputs/intermediates its gradient needs.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(const Tensor<T>& out, std::function<void(std::span<const T>)> backward_fn) {
    entries_.push_back({out.node(), std::move(backward_fn)});
  }

  std::size_t size() const noexcept { return entries_.size(); }
  bool consumed() const noexcept { return consumed_; }

  bool contains(const Tensor<T>& t) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const Entry& e) { return e.out == t.node(); });
  }

  // Replays the recorded operations in reverse. Entries whose output never
  // received a gradient are skipped.
  void backward(const Tensor<T>& loss) {
    if (consumed_) throw ContractError("backward() called twice on the same tape without clear()");
    if (loss.numel() != 1)
      throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    if (!contains(loss)) throw ContractError("backward() loss was not produced on this tape");
    consumed_ = true;
    loss.node()->ensure_grad()[0] += T(1);
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if (it->out->grad.empty()) continue;
      it->backward(it->out->grad);
    }
  }

  // Drops every saved intermediate.
  void clear() {
    entries_.clear();
    consumed_ = false;
  }

  static Tape*& active() {
    thread_local Tape* current = nullptr;
    return current;
  }

 private:
  struct Entry {
    std::shared_ptr<TensorNode<T>> out;
    std::function<void(std::span<const T>)> backward;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

// Makes `tape` the active tape for the current thread for the scope's lifetime.
template <class T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::active()) { Tape<T>::active() = &tape; }
  ~TapeScope() { Tape<T>::active() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

// Suspends recording (inference).
template <class T>
class NoGradScope {
 public:
  NoGradScope() : previous_(Tape<T>::active()) { Tape<T>::active() = nullptr; }
  ~NoGradScope() { Tape<T>::active() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

template <class T>
void backward(const Tensor<T>& loss) {
  auto* tape = Tape<T>::active();
  if (!tape) throw ContractError("backward() without an active tape");
  tape->backward(loss);
}

// True when every gradient buffer on `params` is finite.
template <class T>
bool grads_finite(std::span<const Tensor<T>> params) {
  for (const auto& p : params)
    for (T g : p.grad())
      if (!std::isfinite(g)) return false;
  return true;
}

namespace detail {

template <class T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> inputs) {
  if (!Tape<T>::active()) return false;
  for (const auto* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

// Output tensor that participates in the tape when `track` is set.
template <class T>
Tensor<T> make_output(Shape shape, Buffer<T> data, bool track) {
  return Tensor<T>(std::move(shape), std::move(data), track);
}

template <class T>
void record(const Tensor<T>& out, std::function<void(std::span<const T>)> fn) {
  Tape<T>::active()->record(out, std::move(fn));
}

}  // namespace detail

}  // namespace selftrain
