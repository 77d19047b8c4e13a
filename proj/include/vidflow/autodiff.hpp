#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Tape records every executed op in execution order, which is also a valid
// topological order. Each node keeps its forward value and an adjoint rule;
// backward() walks the tape in reverse and accumulates gradients.
// Ops never mutate a recorded value.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "vidflow/tensor.hpp"

namespace vidflow {

template <class T>
class Tape;

/// Handle to a node on a tape. Cheap to copy.
template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

template <class T>
class Tape {
 public:
  /// Receives the gradient and the value of the node's output.
  using Backward = std::function<void(const Tensor<T>& grad_out, const Tensor<T>& out)>;

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// With recording disabled, ops compute values only (inference).
  void set_recording(bool on) { recording_ = on; }
  bool recording() const { return recording_; }

  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends an op result. `backward` is dropped when no input needs a gradient.
  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, Backward backward);
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
    return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(backward));
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  /// Mutable gradient buffer of `v` (allocated as zeros on first use).
  /// Empty span when `v` does not require a gradient.
  std::span<T> grad_buffer(Var<T> v);

  /// Gradient after backward(). Zeros for requires_grad leaves the loss does not depend on.
  Tensor<T> grad(Var<T> v) const;

  /// Reverse sweep from a single-element loss.
  void backward(Var<T> loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    bool requires_grad = false;
  };
  std::deque<Node> nodes_;  // stable references across push_back
  bool recording_ = true;
};

template <class T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(*this);
}

template <class T>
bool Var<T>::requires_grad() const {
  return tape->requires_grad(*this);
}

extern template class Tape<float>;
extern template class Tape<double>;

namespace ad {

// Elementwise binary ops. `b` may broadcast over leading axes of `a`
// (b.shape is a suffix of a.shape); no other broadcasting is supported.
template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);

template <class T> Var<T> scale(Var<T> a, T s);
template <class T> Var<T> sum(Var<T> a);
template <class T> Var<T> mean(Var<T> a);

/// a[..., m, k] x b[..., k, n]. Batch axes must match, or one side is a plain matrix.
template <class T> Var<T> matmul(Var<T> a, Var<T> b);

/// x[..., k] x w[k, n] + bias[n].
template <class T> Var<T> linear(Var<T> x, Var<T> w, Var<T> bias);

template <class T> Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);
template <class T> Var<T> concat(std::initializer_list<Var<T>> parts, std::size_t axis) {
  return concat<T>(std::span<const Var<T>>(parts.begin(), parts.size()), axis);
}
/// Half-open range [begin, end) along `axis`.
template <class T> Var<T> slice(Var<T> a, std::size_t axis, std::size_t begin, std::size_t end);
template <class T> Var<T> reshape(Var<T> a, Shape shape);
template <class T> Var<T> transpose_last_two(Var<T> a);
/// Output axis i is input axis perm[i].
template <class T> Var<T> permute(Var<T> a, std::span<const std::size_t> perm);
template <class T> Var<T> permute(Var<T> a, std::initializer_list<std::size_t> perm) {
  return permute<T>(a, std::span<const std::size_t>(perm.begin(), perm.size()));
}

/// Numerically stable (max-subtracted) softmax over the last axis.
template <class T> Var<T> softmax(Var<T> x);

template <class T> Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps);

/// tanh approximation: 0.5 x (1 + tanh(0.7978845608 (x + 0.044715 x^3))).
template <class T> Var<T> gelu(Var<T> x);

/// mean((a - b)^2) over all elements.
template <class T> Var<T> mse(Var<T> a, Var<T> b);

/// Attention core of MHSA on a packed projection qkv[..., tokens, 3d] (q | k | v,
/// each split into `heads` contiguous column groups). Returns merged heads [..., tokens, d].
template <class T> Var<T> multi_head_attention(Var<T> qkv, std::size_t heads);

template <class T>
struct AttentionParams {
  Var<T> qkv_weight;  // [d, 3d]
  Var<T> qkv_bias;    // [3d]
  Var<T> out_weight;  // [d, d]
  Var<T> out_bias;    // [d]
};

/// Multi-head self-attention over x[..., tokens, d] with scale 1/sqrt(d/heads).
template <class T> Var<T> mhsa(Var<T> x, const AttentionParams<T>& p, std::size_t heads);

}  // namespace ad
}  // namespace vidflow
