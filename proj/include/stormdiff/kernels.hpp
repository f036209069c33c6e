#pragma once

#include <cstdint>
#include <vector>

#include "stormdiff/tensor.hpp"

// Forward and backward kernels for the differentiable primitives. Backward
// functions accumulate (+=) into whichever gradient outputs are non-null, so
// fan-out sums fall out naturally. Reductions over the batch run in fixed
// chunks of kBatchChunk items and are summed in chunk order, which keeps
// results independent of the worker count.
namespace stormdiff::kernels {

inline constexpr std::size_t kBatchChunk = 8;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// x (B, Cin, H, W), w (Cout, Cin, kh, kw), stride 1, zero padding `pad`.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int pad);
template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, int pad, const Tensor<T>& dy,
                     Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* dbias);

/// Transposed convolution with kernel == stride (non-overlapping tiles).
/// x (B, Cin, H, W), w (Cout, Cin, s, s) -> (B, Cout, H*s, W*s).
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                           int stride);
template <typename T>
void conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& w, int stride,
                               const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dw,
                               Tensor<T>* dbias);

/// x (B, C, ...) normalized over (C/groups, ...) per item; per-channel affine.
/// mean/rstd receive B*groups statistics for the backward pass.
template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     int groups, T eps, std::vector<T>& mean, std::vector<T>& rstd);
template <typename T>
void group_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma, int groups,
                         const std::vector<T>& mean, const std::vector<T>& rstd,
                         const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dgamma,
                         Tensor<T>* dbeta);

template <typename T>
Tensor<T> silu(const Tensor<T>& x);
template <typename T>
void silu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx);

/// x (B, in), w (out, in), optional bias (out) -> (B, out).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias);
template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                     Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* dbias);

/// 2x2 max pool, stride 2. argmax holds the flat input index chosen per
/// output; ties go to the first maximal element in row-major window order.
template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x, std::vector<std::int32_t>& argmax);
template <typename T>
void max_pool2_backward(const std::vector<std::int32_t>& argmax, const Tensor<T>& dy,
                        Tensor<T>& dx);

/// k x k average pool, stride k.
template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, int k);
template <typename T>
void avg_pool_backward(const Tensor<T>& dy, int k, Tensor<T>& dx);

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// v (B, C) -> (B, C, H, W) by repetition over the spatial grid.
template <typename T>
Tensor<T> broadcast_spatial(const Tensor<T>& v, std::size_t h, std::size_t w);

}  // namespace stormdiff::kernels
