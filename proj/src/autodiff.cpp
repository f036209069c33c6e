#include "stormdiff/autodiff.hpp"

#include <stdexcept>
#include <string>

namespace stormdiff {

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConv2d: return "conv2d";
    case Op::kConvTranspose2d: return "conv_transpose2d";
    case Op::kGroupNorm: return "group_norm";
    case Op::kSilu: return "silu";
    case Op::kLinear: return "linear";
    case Op::kMaxPool2: return "max_pool2";
    case Op::kAvgPool: return "avg_pool";
    case Op::kConcat: return "concat";
    case Op::kAdd: return "add";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kBroadcastSpatial: return "broadcast_spatial";
    case Op::kReshape: return "reshape";
    case Op::kMse: return "mse";
    case Op::kSum: return "sum";
    case Op::kCustom: return "custom";
  }
  return "?";
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw std::out_of_range("tape: invalid variable id " + std::to_string(v.id));
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
  return const_cast<Node&>(std::as_const(*this).node(v));
}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Tape<T>::custom(std::vector<Var> inputs, Tensor<T> value, CustomBackward backward) {
  Node n;
  n.op = Op::kCustom;
  for (Var v : inputs) {
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || node(v).requires_grad;
  }
  n.value = std::move(value);
  n.custom = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Tape<T>::apply(Op op, std::span<const Var> inputs, const OpAttrs& attrs) {
  Node n;
  n.op = op;
  n.attrs = attrs;
  for (Var v : inputs) {
    if (!v.valid()) continue;  // absent optional input, e.g. no bias
    node(v);                   // bounds check
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  const std::size_t arity = n.inputs.size();
  auto need = [&](std::size_t lo, std::size_t hi) {
    if (arity < lo || arity > hi) {
      throw std::invalid_argument(std::string(op_name(op)) + ": expected " + std::to_string(lo) +
                                  (lo == hi ? "" : "-" + std::to_string(hi)) + " inputs, got " +
                                  std::to_string(arity));
    }
  };
  auto same_shape = [&]() {
    if (in(n, 0).dims != in(n, 1).dims) {
      throw kernels::ShapeError(std::string(op_name(op)) + ": shape mismatch " +
                                shape_str(in(n, 0).dims) + " vs " + shape_str(in(n, 1).dims));
    }
  };
  auto opt = [&](std::size_t i) -> const Tensor<T>* { return arity > i ? &in(n, i) : nullptr; };

  switch (op) {
    case Op::kLeaf:
    case Op::kCustom:
      throw std::invalid_argument("tape: use leaf()/custom() for this op");
    case Op::kConv2d:
      need(2, 3);
      n.value = kernels::conv2d(in(n, 0), in(n, 1), opt(2), attrs.pad);
      break;
    case Op::kConvTranspose2d:
      need(2, 3);
      n.value = kernels::conv_transpose2d(in(n, 0), in(n, 1), opt(2), attrs.stride);
      break;
    case Op::kGroupNorm:
      need(3, 3);
      n.value = kernels::group_norm(in(n, 0), in(n, 1), in(n, 2), attrs.groups,
                                    static_cast<T>(attrs.eps), n.saved_a, n.saved_b);
      break;
    case Op::kSilu:
      need(1, 1);
      n.value = kernels::silu(in(n, 0));
      break;
    case Op::kLinear:
      need(2, 3);
      n.value = kernels::linear(in(n, 0), in(n, 1), opt(2));
      break;
    case Op::kMaxPool2:
      need(1, 1);
      n.value = kernels::max_pool2(in(n, 0), n.saved_idx);
      break;
    case Op::kAvgPool:
      need(1, 1);
      n.value = kernels::avg_pool(in(n, 0), attrs.kernel);
      break;
    case Op::kConcat:
      need(2, 2);
      n.value = kernels::concat_channels(in(n, 0), in(n, 1));
      break;
    case Op::kAdd:
    case Op::kMul: {
      need(2, 2);
      same_shape();
      const auto& a = in(n, 0);
      const auto& b = in(n, 1);
      n.value = Tensor<T>(a.dims);
      if (op == Op::kAdd) {
        for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] + b[i];
      } else {
        for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] * b[i];
      }
      break;
    }
    case Op::kScale: {
      need(1, 1);
      const auto& a = in(n, 0);
      const T s = static_cast<T>(attrs.scalar);
      n.value = Tensor<T>(a.dims);
      for (std::size_t i = 0; i < a.size(); ++i) n.value[i] = a[i] * s;
      break;
    }
    case Op::kBroadcastSpatial:
      need(1, 1);
      if (attrs.shape.size() != 2) {
        throw kernels::ShapeError("broadcast_spatial: attrs.shape must be (h, w)");
      }
      n.value = kernels::broadcast_spatial(in(n, 0), attrs.shape[0], attrs.shape[1]);
      break;
    case Op::kReshape:
      need(1, 1);
      if (numel(attrs.shape) != in(n, 0).size()) {
        throw kernels::ShapeError("reshape: cannot view " + shape_str(in(n, 0).dims) + " as " +
                                  shape_str(attrs.shape));
      }
      n.value = Tensor<T>(attrs.shape, in(n, 0).values);
      break;
    case Op::kMse: {
      need(2, 2);
      same_shape();
      const auto& a = in(n, 0);
      const auto& b = in(n, 1);
      if (a.size() == 0) throw kernels::ShapeError("mse: empty inputs");
      T acc = 0;
      for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
      n.value = Tensor<T>({1}, {acc / static_cast<T>(a.size())});
      break;
    }
    case Op::kSum: {
      need(1, 1);
      T acc = 0;
      for (T v : in(n, 0).values) acc += v;
      n.value = Tensor<T>({1}, {acc});
      break;
    }
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

template <typename T>
Tensor<T>* Tape<T>::in_grad(const Node& n, std::size_t i) {
  if (i >= n.inputs.size()) return nullptr;
  Node& src = nodes_[n.inputs[i]];
  if (!src.requires_grad) return nullptr;
  if (src.grad.dims != src.value.dims) src.grad = Tensor<T>(src.value.dims);
  return &src.grad;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  Node& root = node(loss);
  if (root.value.size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                shape_str(root.value.dims));
  }
  if (!root.requires_grad) return;
  root.grad = Tensor<T>(root.value.dims, T(1));
  for (std::size_t k = static_cast<std::size_t>(loss.id) + 1; k-- > 0;) {
    Node& n = nodes_[k];
    if (n.op == Op::kLeaf || !n.requires_grad || n.grad.dims != n.value.dims) continue;
    backward_node(n);
  }
}

template <typename T>
void Tape<T>::backward_node(Node& n) {
  const Tensor<T>& g = n.grad;
  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kCustom: {
      std::vector<Tensor<T>*> grads;
      for (std::size_t i = 0; i < n.inputs.size(); ++i) grads.push_back(in_grad(n, i));
      n.custom(g, grads);
      break;
    }
    case Op::kConv2d:
      kernels::conv2d_backward(in(n, 0), in(n, 1), n.attrs.pad, g, in_grad(n, 0), in_grad(n, 1),
                               in_grad(n, 2));
      break;
    case Op::kConvTranspose2d:
      kernels::conv_transpose2d_backward(in(n, 0), in(n, 1), n.attrs.stride, g, in_grad(n, 0),
                                         in_grad(n, 1), in_grad(n, 2));
      break;
    case Op::kGroupNorm:
      kernels::group_norm_backward(in(n, 0), in(n, 1), n.attrs.groups, n.saved_a, n.saved_b, g,
                                   in_grad(n, 0), in_grad(n, 1), in_grad(n, 2));
      break;
    case Op::kSilu:
      if (auto* dx = in_grad(n, 0)) kernels::silu_backward(in(n, 0), g, *dx);
      break;
    case Op::kLinear:
      kernels::linear_backward(in(n, 0), in(n, 1), g, in_grad(n, 0), in_grad(n, 1),
                               in_grad(n, 2));
      break;
    case Op::kMaxPool2:
      if (auto* dx = in_grad(n, 0)) kernels::max_pool2_backward(n.saved_idx, g, *dx);
      break;
    case Op::kAvgPool:
      if (auto* dx = in_grad(n, 0)) kernels::avg_pool_backward(g, n.attrs.kernel, *dx);
      break;
    case Op::kConcat: {
      const std::size_t B = g.dim(0);
      const std::size_t na = in(n, 0).size() / B, nb = in(n, 1).size() / B;
      if (auto* da = in_grad(n, 0)) {
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < na; ++i) (*da)[b * na + i] += g[b * (na + nb) + i];
      }
      if (auto* db = in_grad(n, 1)) {
        for (std::size_t b = 0; b < B; ++b)
          for (std::size_t i = 0; i < nb; ++i) (*db)[b * nb + i] += g[b * (na + nb) + na + i];
      }
      break;
    }
    case Op::kAdd:
      for (std::size_t k = 0; k < 2; ++k) {
        if (auto* d = in_grad(n, k)) {
          for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
        }
      }
      break;
    case Op::kMul: {
      const auto& a = in(n, 0);
      const auto& b = in(n, 1);
      if (auto* da = in_grad(n, 0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*da)[i] += g[i] * b[i];
      }
      if (auto* db = in_grad(n, 1)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*db)[i] += g[i] * a[i];
      }
      break;
    }
    case Op::kScale:
      if (auto* d = in_grad(n, 0)) {
        const T s = static_cast<T>(n.attrs.scalar);
        for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i] * s;
      }
      break;
    case Op::kBroadcastSpatial:
      if (auto* d = in_grad(n, 0)) {
        const std::size_t hw = n.attrs.shape[0] * n.attrs.shape[1];
        for (std::size_t i = 0; i < d->size(); ++i) {
          T acc = 0;
          for (std::size_t p = 0; p < hw; ++p) acc += g[i * hw + p];
          (*d)[i] += acc;
        }
      }
      break;
    case Op::kReshape:
      if (auto* d = in_grad(n, 0)) {
        for (std::size_t i = 0; i < g.size(); ++i) (*d)[i] += g[i];
      }
      break;
    case Op::kMse: {
      const auto& a = in(n, 0);
      const auto& b = in(n, 1);
      const T c = T(2) * g[0] / static_cast<T>(a.size());
      if (auto* da = in_grad(n, 0)) {
        for (std::size_t i = 0; i < a.size(); ++i) (*da)[i] += c * (a[i] - b[i]);
      }
      if (auto* db = in_grad(n, 1)) {
        for (std::size_t i = 0; i < a.size(); ++i) (*db)[i] -= c * (a[i] - b[i]);
      }
      break;
    }
    case Op::kSum:
      if (auto* d = in_grad(n, 0)) {
        for (std::size_t i = 0; i < d->size(); ++i) (*d)[i] += g[0];
      }
      break;
  }
}

template <typename T>
Tensor<T> Tape<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.dims == n.value.dims) return n.grad;
  return Tensor<T>(n.value.dims);
}

template class Tape<float>;
template class Tape<double>;

}  // namespace stormdiff
