#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "stormdiff/kernels.hpp"
#include "stormdiff/tensor.hpp"

namespace stormdiff {

enum class Op : std::uint8_t {
  kLeaf,
  kConv2d,           // (x, w[, b]); attrs.pad
  kConvTranspose2d,  // (x, w[, b]); attrs.stride == kernel
  kGroupNorm,        // (x, gamma, beta); attrs.groups, attrs.eps
  kSilu,
  kLinear,  // (x, w[, b])
  kMaxPool2,
  kAvgPool,  // attrs.kernel
  kConcat,   // channel axis
  kAdd,
  kMul,
  kScale,             // attrs.scalar
  kBroadcastSpatial,  // (B, C) -> (B, C, attrs.shape[0], attrs.shape[1])
  kReshape,           // attrs.shape
  kMse,               // mean squared difference -> scalar
  kSum,               // -> scalar
  kCustom,
};

const char* op_name(Op op);

struct OpAttrs {
  int pad = 0;
  int stride = 1;
  int kernel = 1;
  int groups = 1;
  double eps = 1e-5;
  double scalar = 1.0;
  Shape shape;
};

/// Handle to a value recorded on a Tape.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the node
/// list is already topologically sorted and backward is one reverse sweep.
///
/// A tape and its values belong to one thread at a time.
template <typename T>
class Tape {
 public:
  /// Accumulates into the input gradients that are non-null.
  using CustomBackward =
      std::function<void(const Tensor<T>& grad_out, std::span<Tensor<T>* const> grad_in)>;

  Var leaf(Tensor<T> value, bool requires_grad = false);
  Var apply(Op op, std::span<const Var> inputs, const OpAttrs& attrs = {});
  Var apply(Op op, std::initializer_list<Var> inputs, const OpAttrs& attrs = {}) {
    return apply(op, std::span<const Var>(inputs.begin(), inputs.size()), attrs);
  }
  /// Records an externally computed value with a caller-supplied backward.
  Var custom(std::vector<Var> inputs, Tensor<T> value, CustomBackward backward);

  Var conv2d(Var x, Var w, Var b, int pad) {
    OpAttrs a;
    a.pad = pad;
    return apply(Op::kConv2d, {x, w, b}, a);
  }
  Var conv_transpose2d(Var x, Var w, Var b, int stride) {
    OpAttrs a;
    a.stride = stride;
    return apply(Op::kConvTranspose2d, {x, w, b}, a);
  }
  Var group_norm(Var x, Var gamma, Var beta, int groups) {
    OpAttrs a;
    a.groups = groups;
    return apply(Op::kGroupNorm, {x, gamma, beta}, a);
  }
  Var silu(Var x) { return apply(Op::kSilu, {x}); }
  Var linear(Var x, Var w, Var b) { return apply(Op::kLinear, {x, w, b}); }
  Var linear(Var x, Var w) { return apply(Op::kLinear, {x, w}); }
  Var max_pool2(Var x) { return apply(Op::kMaxPool2, {x}); }
  Var avg_pool(Var x, int k) {
    OpAttrs a;
    a.kernel = k;
    return apply(Op::kAvgPool, {x}, a);
  }
  Var concat(Var a, Var b) { return apply(Op::kConcat, {a, b}); }
  Var add(Var a, Var b) { return apply(Op::kAdd, {a, b}); }
  Var mul(Var a, Var b) { return apply(Op::kMul, {a, b}); }
  Var scale(Var v, double s) {
    OpAttrs a;
    a.scalar = s;
    return apply(Op::kScale, {v}, a);
  }
  Var broadcast_spatial(Var v, std::size_t h, std::size_t w) {
    return apply(Op::kBroadcastSpatial, {v}, {.shape = {h, w}});
  }
  Var reshape(Var a, Shape dims) { return apply(Op::kReshape, {a}, {.shape = std::move(dims)}); }
  Var mse(Var a, Var b) { return apply(Op::kMse, {a, b}); }
  Var sum(Var a) { return apply(Op::kSum, {a}); }

  /// Seeds d(loss)/d(loss) = 1 and propagates to every node that requires
  /// gradients. Throws std::invalid_argument unless loss holds one element.
  void backward(Var loss);

  const Tensor<T>& value(Var v) const { return node(v).value; }
  /// Zero-filled tensor when no gradient reached v.
  Tensor<T> grad(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  Op op(Var v) const { return node(v).op; }
  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Op op = Op::kLeaf;
    std::vector<std::int32_t> inputs;
    OpAttrs attrs;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::vector<T> saved_a, saved_b;
    std::vector<std::int32_t> saved_idx;
    CustomBackward custom;
  };

  const Node& node(Var v) const;
  Node& node(Var v);
  const Tensor<T>& in(const Node& n, std::size_t i) const { return nodes_[n.inputs[i]].value; }
  Tensor<T>* in_grad(const Node& n, std::size_t i);
  void backward_node(Node& n);

  std::vector<Node> nodes_;
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace stormdiff
