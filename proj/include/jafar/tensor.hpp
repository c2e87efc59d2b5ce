#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "jafar/error.hpp"

namespace jafar {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
class Tape;

/// Dense row-major array of up to four dimensions.
///
/// A tensor is "tracked" when it is bound to a tape node; tracked tensors
/// always have requires_grad set. Untracked tensors are plain values and
/// never receive gradients.
template <typename T>
struct Tensor {
  using value_type = T;
  Shape shape;
  std::vector<T> data;
  bool requires_grad = false;
  Tape<T>* tape = nullptr;
  int node = -1;

  Tensor() = default;
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    validate();
  }
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)) {
    validate_rank();
    data.assign(shape_numel(shape), fill);
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  std::size_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape.at(static_cast<std::size_t>(i)); }
  bool empty() const { return data.empty(); }
  bool tracked() const { return tape != nullptr && node >= 0; }

  T item() const {
    if (data.size() != 1) fail(ErrorKind::ShapeMismatch, "item() on tensor of shape " + shape_string(shape));
    return data[0];
  }

  /// Untracked copy holding the same values.
  Tensor detached() const { return Tensor(shape, data); }

  template <typename U>
  Tensor<U> cast() const {
    return Tensor<U>(shape, std::vector<U>(data.begin(), data.end()));
  }

 private:
  void validate_rank() const {
    if (shape.empty() || shape.size() > 4) {
      fail(ErrorKind::ShapeMismatch, "rank must be 1..4, got " + shape_string(shape));
    }
    for (int d : shape) {
      if (d <= 0) fail(ErrorKind::ShapeMismatch, "non-positive dimension in " + shape_string(shape));
    }
  }
  void validate() const {
    validate_rank();
    if (shape_numel(shape) != data.size()) {
      fail(ErrorKind::ShapeMismatch, "shape " + shape_string(shape) + " does not match " +
                                         std::to_string(data.size()) + " values");
    }
  }
};

enum class OpKind {
  Leaf,
  Add,
  Sub,
  Mul,
  Div,
  ScalarAdd,
  ScalarMul,
  ScalarDiv,
  Matmul,
  Transpose,
  Reshape,
  SoftmaxRows,
  Conv2d,
  Linear,
  ChannelLinear,
  Silu,
  AdaptiveAvgPool,
  Sum,
  Concat,
  Slice,
  SplitHeads,
  Rope,
  Custom,
};

/// Append-only record of differentiable operations.
///
/// Node inputs always precede the node. `backward` walks nodes in strict
/// reverse insertion order and may run once per recording; `reset` clears
/// the tape, which invalidates every tensor bound to it.
template <typename T>
class Tape {
 public:
  /// Receives the gradient of the node's output and pushes contributions to
  /// its inputs through `Tape::grad_slot`.
  using BackwardFn = std::function<void(std::span<const T> grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Binds `leaf` to a fresh leaf node.
  void watch(Tensor<T>& leaf) {
    if (leaf.tape != nullptr) fail(ErrorKind::ShapeMismatch, "tensor is already bound to a tape");
    leaf.node = push(OpKind::Leaf, {}, leaf.numel(), nullptr);
    leaf.tape = this;
    leaf.requires_grad = true;
  }

  int record(OpKind kind, std::vector<int> inputs, std::size_t numel, BackwardFn fn) {
    if (done_) fail(ErrorKind::DoubleBackward, "cannot record on a tape that was already back-propagated");
    return push(kind, std::move(inputs), numel, std::move(fn));
  }

  void backward(const Tensor<T>& loss) {
    if (loss.tape != this || loss.node < 0) {
      fail(ErrorKind::ShapeMismatch, "loss is not recorded on this tape");
    }
    if (loss.numel() != 1) fail(ErrorKind::NonScalarLoss, "loss has shape " + shape_string(loss.shape));
    if (done_) fail(ErrorKind::DoubleBackward, "backward already ran on this tape");
    done_ = true;
    grad_slot(loss.node)[0] += T(1);
    for (int i = loss.node; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      auto& g = grads_[static_cast<std::size_t>(i)];
      if (g.empty() || !n.backward) continue;
      n.backward(std::span<const T>(g), *this);
    }
  }

  /// Gradient accumulator for `node`, zero-initialised on first use. An empty
  /// span is returned for untracked inputs (node < 0).
  std::span<T> grad_slot(int node) {
    if (node < 0) return {};
    auto& g = grads_.at(static_cast<std::size_t>(node));
    if (g.empty()) g.assign(nodes_[static_cast<std::size_t>(node)].numel, T(0));
    return std::span<T>(g);
  }

  /// Gradient of a tracked tensor; zeros if it was not reached by backward.
  Tensor<T> grad(const Tensor<T>& t) const {
    if (t.tape != this || t.node < 0) fail(ErrorKind::ShapeMismatch, "tensor is not recorded on this tape");
    const auto& g = grads_.at(static_cast<std::size_t>(t.node));
    if (g.empty()) return Tensor<T>(t.shape, T(0));
    return Tensor<T>(t.shape, g);
  }

  OpKind kind(int node) const { return nodes_.at(static_cast<std::size_t>(node)).kind; }
  const std::vector<int>& inputs(int node) const { return nodes_.at(static_cast<std::size_t>(node)).inputs; }
  std::size_t size() const { return nodes_.size(); }
  bool backpropagated() const { return done_; }

  void reset() {
    nodes_.clear();
    grads_.clear();
    done_ = false;
  }

 private:
  struct Node {
    OpKind kind;
    std::vector<int> inputs;
    std::size_t numel;
    BackwardFn backward;
  };

  int push(OpKind kind, std::vector<int> inputs, std::size_t numel, BackwardFn fn) {
    const int id = static_cast<int>(nodes_.size());
    for (int in : inputs) {
      if (in >= id) fail(ErrorKind::ShapeMismatch, "tape input does not precede its node");
    }
    nodes_.push_back(Node{kind, std::move(inputs), numel, std::move(fn)});
    grads_.emplace_back();
    return id;
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<T>> grads_;
  bool done_ = false;
};

/// Builds the result of an operation. When any input is tracked the result is
/// recorded on that tape with `backward`; otherwise it is a plain value and
/// `backward` is discarded.
template <typename T>
Tensor<T> record_op(OpKind kind, Shape shape, std::vector<T> values,
                    std::initializer_list<const Tensor<T>*> inputs,
                    typename Tape<T>::BackwardFn backward) {
  Tensor<T> out(std::move(shape), std::move(values));
  Tape<T>* tape = nullptr;
  std::vector<int> ids;
  ids.reserve(inputs.size());
  for (const Tensor<T>* in : inputs) {
    if (in->tracked()) {
      if (tape != nullptr && tape != in->tape) fail(ErrorKind::ShapeMismatch, "inputs live on different tapes");
      tape = in->tape;
      ids.push_back(in->node);
    } else {
      ids.push_back(-1);
    }
  }
  if (tape == nullptr) return out;
  out.node = tape->record(kind, std::move(ids), out.numel(), std::move(backward));
  out.tape = tape;
  out.requires_grad = true;
  return out;
}

}  // namespace jafar
