#include "stormdiff/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "stormdiff/parallel.hpp"

namespace stormdiff {

std::string shape_str(const Shape& dims) {
  std::string s = "(";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(dims[i]);
  }
  return s + ")";
}

}  // namespace stormdiff

namespace stormdiff::kernels {
namespace {

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapR = Eigen::Map<MatR<T>>;
template <typename T>
using CMapR = Eigen::Map<const MatR<T>>;

[[noreturn]] void shape_fail(const std::string& op, const std::string& detail) {
  throw ShapeError(op + ": " + detail);
}

void require_rank(const std::string& op, const char* name, const Shape& dims, std::size_t rank) {
  if (dims.size() != rank) {
    shape_fail(op, std::string(name) + " must have rank " + std::to_string(rank) + ", got " +
                       shape_str(dims));
  }
}

std::size_t chunk_count(std::size_t batch) { return (batch + kBatchChunk - 1) / kBatchChunk; }

struct ConvGeom {
  std::size_t B, Cin, H, W, Cout, kh, kw, Ho, Wo, pad;
  std::size_t K() const { return Cin * kh * kw; }
  std::size_t P() const { return Ho * Wo; }
};

template <typename T>
ConvGeom conv_geom(const Tensor<T>& x, const Tensor<T>& w, int pad) {
  const std::string op = "conv2d";
  require_rank(op, "input", x.dims, 4);
  require_rank(op, "weight", w.dims, 4);
  if (pad < 0) shape_fail(op, "negative padding");
  if (w.dim(1) != x.dim(1)) {
    shape_fail(op, "weight in_ch " + std::to_string(w.dim(1)) + " != input channels " +
                       std::to_string(x.dim(1)) + " (input " + shape_str(x.dims) + ", weight " +
                       shape_str(w.dims) + ")");
  }
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3), 0, 0,
             static_cast<std::size_t>(pad)};
  if (g.H + 2 * g.pad < g.kh || g.W + 2 * g.pad < g.kw) {
    shape_fail(op, "kernel " + shape_str(w.dims) + " larger than padded input " +
                       shape_str(x.dims));
  }
  g.Ho = g.H + 2 * g.pad - g.kh + 1;
  g.Wo = g.W + 2 * g.pad - g.kw + 1;
  return g;
}

// Writes the im2col matrix of item b into columns [col_off, col_off + P) of a
// (K x ld) row-major buffer.
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col, std::size_t ld, std::size_t col_off) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.Cin; ++c) {
    const T* xc = x + c * g.H * g.W;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * ld + col_off;
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ki) - pad;
          T* dst = row + oy * g.Wo;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.H)) {
            std::fill(dst, dst + g.Wo, T(0));
            continue;
          }
          const T* src = xc + iy * g.W;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kj) - pad;
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.W)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, std::size_t ld, std::size_t col_off, const ConvGeom& g, T* dx) {
  const auto pad = static_cast<std::ptrdiff_t>(g.pad);
  for (std::size_t c = 0; c < g.Cin; ++c) {
    T* dxc = dx + c * g.H * g.W;
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * ld + col_off;
        for (std::size_t oy = 0; oy < g.Ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy + ki) - pad;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.H)) continue;
          const T* src = row + oy * g.Wo;
          T* dst = dxc + iy * g.W;
          for (std::size_t ox = 0; ox < g.Wo; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox + kj) - pad;
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.W)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void check_bias(const std::string& op, const Tensor<T>* bias, std::size_t n) {
  if (bias && (bias->rank() != 1 || bias->dim(0) != n)) {
    shape_fail(op, "bias " + shape_str(bias->dims) + " does not match " + std::to_string(n) +
                       " output channels");
  }
}

template <typename T>
void ensure_like(Tensor<T>* g, const Shape& dims) {
  if (g && g->dims != dims) *g = Tensor<T>(dims);
}

// Sums per-chunk partial buffers in chunk order into `out`.
template <typename T>
void reduce_partials(const std::vector<std::vector<T>>& partials, T* out) {
  for (const auto& p : partials) {
    for (std::size_t i = 0; i < p.size(); ++i) out[i] += p[i];
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int pad) {
  const ConvGeom g = conv_geom(x, w, pad);
  check_bias("conv2d", bias, g.Cout);
  Tensor<T> y({g.B, g.Cout, g.Ho, g.Wo});
  const std::size_t K = g.K(), P = g.P();
  CMapR<T> wm(w.data(), g.Cout, K);
  parallel_for(chunk_count(g.B), [&](std::size_t chunk) {
    const std::size_t b0 = chunk * kBatchChunk;
    const std::size_t nb = std::min(kBatchChunk, g.B - b0);
    const std::size_t ld = nb * P;
    MatR<T> col(K, ld);
    for (std::size_t i = 0; i < nb; ++i) {
      im2col(x.data() + (b0 + i) * g.Cin * g.H * g.W, g, col.data(), ld, i * P);
    }
    MatR<T> out(g.Cout, ld);
    out.noalias() = wm * col;
    for (std::size_t i = 0; i < nb; ++i) {
      T* yb = y.data() + (b0 + i) * g.Cout * P;
      for (std::size_t o = 0; o < g.Cout; ++o) {
        const T bo = bias ? (*bias)[o] : T(0);
        const T* src = out.data() + o * ld + i * P;
        for (std::size_t p = 0; p < P; ++p) yb[o * P + p] = src[p] + bo;
      }
    }
  });
  return y;
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, int pad, const Tensor<T>& dy,
                     Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* dbias) {
  const ConvGeom g = conv_geom(x, w, pad);
  if (dy.dims != Shape{g.B, g.Cout, g.Ho, g.Wo}) {
    shape_fail("conv2d backward", "grad " + shape_str(dy.dims) + " does not match output");
  }
  ensure_like(dx, x.dims);
  ensure_like(dw, w.dims);
  if (dbias && dbias->dims != Shape{g.Cout}) *dbias = Tensor<T>({g.Cout});
  const std::size_t K = g.K(), P = g.P();
  const std::size_t chunks = chunk_count(g.B);
  CMapR<T> wm(w.data(), g.Cout, K);
  std::vector<std::vector<T>> dw_part(dw ? chunks : 0);
  parallel_for(chunks, [&](std::size_t chunk) {
    const std::size_t b0 = chunk * kBatchChunk;
    const std::size_t nb = std::min(kBatchChunk, g.B - b0);
    const std::size_t ld = nb * P;
    MatR<T> dym(g.Cout, ld);
    for (std::size_t i = 0; i < nb; ++i) {
      const T* src = dy.data() + (b0 + i) * g.Cout * P;
      for (std::size_t o = 0; o < g.Cout; ++o) {
        std::copy(src + o * P, src + (o + 1) * P, dym.data() + o * ld + i * P);
      }
    }
    if (dw) {
      MatR<T> col(K, ld);
      for (std::size_t i = 0; i < nb; ++i) {
        im2col(x.data() + (b0 + i) * g.Cin * g.H * g.W, g, col.data(), ld, i * P);
      }
      MatR<T> part(g.Cout, K);
      part.noalias() = dym * col.transpose();
      dw_part[chunk].assign(part.data(), part.data() + part.size());
    }
    if (dx) {
      MatR<T> dcol(K, ld);
      dcol.noalias() = wm.transpose() * dym;
      for (std::size_t i = 0; i < nb; ++i) {
        col2im_add(dcol.data(), ld, i * P, g, dx->data() + (b0 + i) * g.Cin * g.H * g.W);
      }
    }
  });
  if (dw) reduce_partials(dw_part, dw->data());
  if (dbias) {
    for (std::size_t b = 0; b < g.B; ++b) {
      for (std::size_t o = 0; o < g.Cout; ++o) {
        const T* src = dy.data() + (b * g.Cout + o) * P;
        T s = 0;
        for (std::size_t p = 0; p < P; ++p) s += src[p];
        (*dbias)[o] += s;
      }
    }
  }
}

// ---------------------------------------------------------------------------
// conv_transpose2d (kernel == stride)

namespace {

struct TconvGeom {
  std::size_t B, Cin, H, W, Cout, s;
};

template <typename T>
TconvGeom tconv_geom(const Tensor<T>& x, const Tensor<T>& w, int stride) {
  const std::string op = "conv_transpose2d";
  require_rank(op, "input", x.dims, 4);
  require_rank(op, "weight", w.dims, 4);
  if (stride < 1) shape_fail(op, "stride must be >= 1");
  const auto s = static_cast<std::size_t>(stride);
  if (w.dim(2) != s || w.dim(3) != s) {
    shape_fail(op, "kernel " + shape_str(w.dims) + " must equal stride " + std::to_string(s));
  }
  if (w.dim(1) != x.dim(1)) {
    shape_fail(op, "weight in_ch " + std::to_string(w.dim(1)) + " != input channels " +
                       std::to_string(x.dim(1)) + " (input " + shape_str(x.dims) + ")");
  }
  return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), s};
}

// (Cout, Cin, s, s) -> row-major (Cout*s*s, Cin)
template <typename T>
MatR<T> tconv_weight_matrix(const Tensor<T>& w, const TconvGeom& g) {
  const std::size_t ss = g.s * g.s;
  MatR<T> m(g.Cout * ss, g.Cin);
  for (std::size_t o = 0; o < g.Cout; ++o)
    for (std::size_t c = 0; c < g.Cin; ++c)
      for (std::size_t k = 0; k < ss; ++k) m(o * ss + k, c) = w[(o * g.Cin + c) * ss + k];
  return m;
}

}  // namespace

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias,
                           int stride) {
  const TconvGeom g = tconv_geom(x, w, stride);
  check_bias("conv_transpose2d", bias, g.Cout);
  const std::size_t s = g.s, HW = g.H * g.W, Ho = g.H * s, Wo = g.W * s;
  Tensor<T> y({g.B, g.Cout, Ho, Wo});
  const MatR<T> wm = tconv_weight_matrix(w, g);
  parallel_for(g.B, [&](std::size_t b) {
    CMapR<T> xb(x.data() + b * g.Cin * HW, g.Cin, HW);
    MatR<T> z(g.Cout * s * s, HW);
    z.noalias() = wm * xb;
    T* yb = y.data() + b * g.Cout * Ho * Wo;
    for (std::size_t o = 0; o < g.Cout; ++o) {
      const T bo = bias ? (*bias)[o] : T(0);
      for (std::size_t p = 0; p < s; ++p)
        for (std::size_t q = 0; q < s; ++q) {
          const T* zr = z.data() + ((o * s + p) * s + q) * HW;
          for (std::size_t i = 0; i < g.H; ++i)
            for (std::size_t j = 0; j < g.W; ++j)
              yb[(o * Ho + i * s + p) * Wo + j * s + q] = zr[i * g.W + j] + bo;
        }
    }
  });
  return y;
}

template <typename T>
void conv_transpose2d_backward(const Tensor<T>& x, const Tensor<T>& w, int stride,
                               const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dw,
                               Tensor<T>* dbias) {
  const TconvGeom g = tconv_geom(x, w, stride);
  const std::size_t s = g.s, ss = s * s, HW = g.H * g.W, Ho = g.H * s, Wo = g.W * s;
  if (dy.dims != Shape{g.B, g.Cout, Ho, Wo}) {
    shape_fail("conv_transpose2d backward", "grad " + shape_str(dy.dims) + " does not match output");
  }
  ensure_like(dx, x.dims);
  ensure_like(dw, w.dims);
  if (dbias && dbias->dims != Shape{g.Cout}) *dbias = Tensor<T>({g.Cout});
  const MatR<T> wm = tconv_weight_matrix(w, g);
  const std::size_t chunks = chunk_count(g.B);
  std::vector<std::vector<T>> dw_part(dw ? chunks : 0);
  parallel_for(chunks, [&](std::size_t chunk) {
    const std::size_t b0 = chunk * kBatchChunk;
    const std::size_t nb = std::min(kBatchChunk, g.B - b0);
    MatR<T> part;
    if (dw) part = MatR<T>::Zero(g.Cout * ss, g.Cin);
    MatR<T> gm(g.Cout * ss, HW);
    for (std::size_t b = b0; b < b0 + nb; ++b) {
      const T* dyb = dy.data() + b * g.Cout * Ho * Wo;
      for (std::size_t o = 0; o < g.Cout; ++o)
        for (std::size_t p = 0; p < s; ++p)
          for (std::size_t q = 0; q < s; ++q) {
            T* gr = gm.data() + ((o * s + p) * s + q) * HW;
            for (std::size_t i = 0; i < g.H; ++i)
              for (std::size_t j = 0; j < g.W; ++j)
                gr[i * g.W + j] = dyb[(o * Ho + i * s + p) * Wo + j * s + q];
          }
      CMapR<T> xb(x.data() + b * g.Cin * HW, g.Cin, HW);
      if (dw) part.noalias() += gm * xb.transpose();
      if (dx) {
        MapR<T> dxb(dx->data() + b * g.Cin * HW, g.Cin, HW);
        dxb.noalias() += wm.transpose() * gm;
      }
    }
    if (dw) {
      std::vector<T> flat(g.Cout * g.Cin * ss);
      for (std::size_t o = 0; o < g.Cout; ++o)
        for (std::size_t c = 0; c < g.Cin; ++c)
          for (std::size_t k = 0; k < ss; ++k) flat[(o * g.Cin + c) * ss + k] = part(o * ss + k, c);
      dw_part[chunk] = std::move(flat);
    }
  });
  if (dw) reduce_partials(dw_part, dw->data());
  if (dbias) {
    for (std::size_t b = 0; b < g.B; ++b)
      for (std::size_t o = 0; o < g.Cout; ++o) {
        const T* src = dy.data() + (b * g.Cout + o) * Ho * Wo;
        T acc = 0;
        for (std::size_t p = 0; p < Ho * Wo; ++p) acc += src[p];
        (*dbias)[o] += acc;
      }
  }
}

// ---------------------------------------------------------------------------
// group_norm

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     int groups, T eps, std::vector<T>& mean, std::vector<T>& rstd) {
  const std::string op = "group_norm";
  if (x.rank() < 2) shape_fail(op, "input must have rank >= 2, got " + shape_str(x.dims));
  const std::size_t B = x.dim(0), C = x.dim(1);
  const std::size_t S = x.size() / std::max<std::size_t>(1, B * C);
  if (groups < 1 || C % static_cast<std::size_t>(groups) != 0) {
    shape_fail(op, std::to_string(C) + " channels not divisible into " + std::to_string(groups) +
                       " groups");
  }
  if (gamma.dims != Shape{C} || beta.dims != Shape{C}) {
    shape_fail(op, "affine params " + shape_str(gamma.dims) + "/" + shape_str(beta.dims) +
                       " must be (" + std::to_string(C) + ")");
  }
  const std::size_t G = static_cast<std::size_t>(groups), cpg = C / G, n = cpg * S;
  Tensor<T> y(x.dims);
  mean.assign(B * G, T(0));
  rstd.assign(B * G, T(0));
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t gi = 0; gi < G; ++gi) {
      const std::size_t off = (b * C + gi * cpg) * S;
      const T* xs = x.data() + off;
      T sum = 0;
      for (std::size_t i = 0; i < n; ++i) sum += xs[i];
      const T mu = sum / static_cast<T>(n);
      T ss = 0;
      for (std::size_t i = 0; i < n; ++i) ss += (xs[i] - mu) * (xs[i] - mu);
      const T r = T(1) / std::sqrt(ss / static_cast<T>(n) + eps);
      mean[b * G + gi] = mu;
      rstd[b * G + gi] = r;
      for (std::size_t c = 0; c < cpg; ++c) {
        const std::size_t ch = gi * cpg + c;
        const T ga = gamma[ch], be = beta[ch];
        const T* xc = xs + c * S;
        T* yc = y.data() + off + c * S;
        for (std::size_t i = 0; i < S; ++i) yc[i] = (xc[i] - mu) * r * ga + be;
      }
    }
  }
  return y;
}

template <typename T>
void group_norm_backward(const Tensor<T>& x, const Tensor<T>& gamma, int groups,
                         const std::vector<T>& mean, const std::vector<T>& rstd,
                         const Tensor<T>& dy, Tensor<T>* dx, Tensor<T>* dgamma,
                         Tensor<T>* dbeta) {
  const std::size_t B = x.dim(0), C = x.dim(1), S = x.size() / (B * C);
  const std::size_t G = static_cast<std::size_t>(groups), cpg = C / G, n = cpg * S;
  ensure_like(dx, x.dims);
  ensure_like(dgamma, gamma.dims);
  ensure_like(dbeta, gamma.dims);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t gi = 0; gi < G; ++gi) {
      const std::size_t off = (b * C + gi * cpg) * S;
      const T mu = mean[b * G + gi], r = rstd[b * G + gi];
      T sum_dxhat = 0, sum_dxhat_xhat = 0;
      for (std::size_t c = 0; c < cpg; ++c) {
        const std::size_t ch = gi * cpg + c;
        const T* xc = x.data() + off + c * S;
        const T* gc = dy.data() + off + c * S;
        T dga = 0, dbe = 0;
        for (std::size_t i = 0; i < S; ++i) {
          const T xhat = (xc[i] - mu) * r;
          const T dxhat = gc[i] * gamma[ch];
          sum_dxhat += dxhat;
          sum_dxhat_xhat += dxhat * xhat;
          dga += gc[i] * xhat;
          dbe += gc[i];
        }
        if (dgamma) (*dgamma)[ch] += dga;
        if (dbeta) (*dbeta)[ch] += dbe;
      }
      if (!dx) continue;
      const T m1 = sum_dxhat / static_cast<T>(n), m2 = sum_dxhat_xhat / static_cast<T>(n);
      for (std::size_t c = 0; c < cpg; ++c) {
        const std::size_t ch = gi * cpg + c;
        const T* xc = x.data() + off + c * S;
        const T* gc = dy.data() + off + c * S;
        T* dc = dx->data() + off + c * S;
        for (std::size_t i = 0; i < S; ++i) {
          const T xhat = (xc[i] - mu) * r;
          dc[i] += r * (gc[i] * gamma[ch] - m1 - xhat * m2);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// elementwise, linear, pooling, layout

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> y(x.dims);
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / (T(1) + std::exp(-x[i]));
  return y;
}

template <typename T>
void silu_backward(const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>& dx) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    const T sig = T(1) / (T(1) + std::exp(-x[i]));
    dx[i] += dy[i] * sig * (T(1) + x[i] * (T(1) - sig));
  }
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
  const std::string op = "linear";
  require_rank(op, "input", x.dims, 2);
  require_rank(op, "weight", w.dims, 2);
  if (w.dim(1) != x.dim(1)) {
    shape_fail(op, "weight " + shape_str(w.dims) + " incompatible with input " + shape_str(x.dims));
  }
  check_bias(op, bias, w.dim(0));
  const std::size_t B = x.dim(0), in = x.dim(1), out = w.dim(0);
  Tensor<T> y({B, out});
  MapR<T> ym(y.data(), B, out);
  ym.noalias() = CMapR<T>(x.data(), B, in) * CMapR<T>(w.data(), out, in).transpose();
  if (bias) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < out; ++o) ym(b, o) += (*bias)[o];
  }
  return y;
}

template <typename T>
void linear_backward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy,
                     Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* dbias) {
  const std::size_t B = x.dim(0), in = x.dim(1), out = w.dim(0);
  CMapR<T> g(dy.data(), B, out);
  if (dx) {
    ensure_like(dx, x.dims);
    MapR<T>(dx->data(), B, in).noalias() += g * CMapR<T>(w.data(), out, in);
  }
  if (dw) {
    ensure_like(dw, w.dims);
    MapR<T>(dw->data(), out, in).noalias() += g.transpose() * CMapR<T>(x.data(), B, in);
  }
  if (dbias) {
    if (dbias->dims != Shape{out}) *dbias = Tensor<T>({out});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t o = 0; o < out; ++o) (*dbias)[o] += g(b, o);
  }
}

template <typename T>
Tensor<T> max_pool2(const Tensor<T>& x, std::vector<std::int32_t>& argmax) {
  require_rank("max_pool2", "input", x.dims, 4);
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2) shape_fail("max_pool2", "spatial dims of " + shape_str(x.dims) + " must be even");
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor<T> y({B, C, Ho, Wo});
  argmax.resize(y.size());
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        std::size_t best = bc * H * W + (2 * i) * W + 2 * j;
        for (std::size_t di = 0; di < 2; ++di)
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = bc * H * W + (2 * i + di) * W + 2 * j + dj;
            if (x[idx] > x[best]) best = idx;
          }
        const std::size_t o = (bc * Ho + i) * Wo + j;
        y[o] = x[best];
        argmax[o] = static_cast<std::int32_t>(best);
      }
  }
  return y;
}

template <typename T>
void max_pool2_backward(const std::vector<std::int32_t>& argmax, const Tensor<T>& dy,
                        Tensor<T>& dx) {
  for (std::size_t o = 0; o < dy.size(); ++o) dx[static_cast<std::size_t>(argmax[o])] += dy[o];
}

template <typename T>
Tensor<T> avg_pool(const Tensor<T>& x, int k) {
  require_rank("avg_pool", "input", x.dims, 4);
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const auto ks = static_cast<std::size_t>(k);
  if (k < 1 || H % ks || W % ks) {
    shape_fail("avg_pool", "kernel " + std::to_string(k) + " does not tile " + shape_str(x.dims));
  }
  const std::size_t Ho = H / ks, Wo = W / ks;
  Tensor<T> y({B, C, Ho, Wo});
  const T inv = T(1) / static_cast<T>(ks * ks);
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        T s = 0;
        for (std::size_t di = 0; di < ks; ++di)
          for (std::size_t dj = 0; dj < ks; ++dj) s += x[bc * H * W + (i * ks + di) * W + j * ks + dj];
        y[(bc * Ho + i) * Wo + j] = s * inv;
      }
  return y;
}

template <typename T>
void avg_pool_backward(const Tensor<T>& dy, int k, Tensor<T>& dx) {
  const std::size_t B = dx.dim(0), C = dx.dim(1), H = dx.dim(2), W = dx.dim(3);
  const auto ks = static_cast<std::size_t>(k);
  const std::size_t Ho = H / ks, Wo = W / ks;
  const T inv = T(1) / static_cast<T>(ks * ks);
  for (std::size_t bc = 0; bc < B * C; ++bc)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        const T g = dy[(bc * Ho + i) * Wo + j] * inv;
        for (std::size_t di = 0; di < ks; ++di)
          for (std::size_t dj = 0; dj < ks; ++dj) dx[bc * H * W + (i * ks + di) * W + j * ks + dj] += g;
      }
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || a.rank() != b.rank() || a.dim(0) != b.dim(0) ||
      !std::equal(a.dims.begin() + 2, a.dims.end(), b.dims.begin() + 2)) {
    shape_fail("concat_channels", "cannot join " + shape_str(a.dims) + " and " + shape_str(b.dims));
  }
  Shape dims = a.dims;
  dims[1] += b.dim(1);
  Tensor<T> y(dims);
  const std::size_t B = a.dim(0), na = a.size() / B, nb = b.size() / B;
  for (std::size_t i = 0; i < B; ++i) {
    std::copy(a.data() + i * na, a.data() + (i + 1) * na, y.data() + i * (na + nb));
    std::copy(b.data() + i * nb, b.data() + (i + 1) * nb, y.data() + i * (na + nb) + na);
  }
  return y;
}

template <typename T>
Tensor<T> broadcast_spatial(const Tensor<T>& v, std::size_t h, std::size_t w) {
  require_rank("broadcast_spatial", "input", v.dims, 2);
  Tensor<T> y({v.dim(0), v.dim(1), h, w});
  for (std::size_t i = 0; i < v.size(); ++i) std::fill_n(y.data() + i * h * w, h * w, v[i]);
  return y;
}

#define STORMDIFF_INSTANTIATE(T)                                                                 \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, int);         \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, int, const Tensor<T>&,      \
                                Tensor<T>*, Tensor<T>*, Tensor<T>*);                            \
  template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, int); \
  template void conv_transpose2d_backward(const Tensor<T>&, const Tensor<T>&, int,              \
                                          const Tensor<T>&, Tensor<T>*, Tensor<T>*, Tensor<T>*); \
  template Tensor<T> group_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, int, T,   \
                                std::vector<T>&, std::vector<T>&);                              \
  template void group_norm_backward(const Tensor<T>&, const Tensor<T>&, int,                    \
                                    const std::vector<T>&, const std::vector<T>&,               \
                                    const Tensor<T>&, Tensor<T>*, Tensor<T>*, Tensor<T>*);      \
  template Tensor<T> silu(const Tensor<T>&);                                                    \
  template void silu_backward(const Tensor<T>&, const Tensor<T>&, Tensor<T>&);                  \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);              \
  template void linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                Tensor<T>*, Tensor<T>*, Tensor<T>*);                            \
  template Tensor<T> max_pool2(const Tensor<T>&, std::vector<std::int32_t>&);                   \
  template void max_pool2_backward(const std::vector<std::int32_t>&, const Tensor<T>&,          \
                                   Tensor<T>&);                                                 \
  template Tensor<T> avg_pool(const Tensor<T>&, int);                                           \
  template void avg_pool_backward(const Tensor<T>&, int, Tensor<T>&);                           \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> broadcast_spatial(const Tensor<T>&, std::size_t, std::size_t);

STORMDIFF_INSTANTIATE(float)
STORMDIFF_INSTANTIATE(double)

#undef STORMDIFF_INSTANTIATE

}  // namespace stormdiff::kernels
