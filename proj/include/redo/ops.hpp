#pragma once

// Differentiable tensor ops recorded on a Graph. Four-dimensional values are NCHW.

#include <algorithm>
#include <cmath>
#include <vector>

#include "redo/blas.hpp"
#include "redo/graph.hpp"
#include "redo/spectral.hpp"

namespace redo::op {

namespace detail {

// Valid output columns [lo, hi) for kernel offset `kx`: 0 <= ox * stride - pad + kx < width.
inline void valid_range(int kx, int stride, int pad, int width, int out_w, int& lo, int& hi) {
  lo = std::max(0, (pad - kx + stride - 1) / stride);
  hi = std::min(out_w, (width - 1 + pad - kx) / stride + 1);
  if (width - 1 + pad - kx < 0) hi = 0;
  if (hi < lo) hi = lo;
}

template <class T>
void im2col(const T* x, int channels, int height, int width, int k, int stride, int pad, int out_h, int out_w,
            T* col) {
  const int n = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * n;
        int lo, hi;
        valid_range(kx, stride, pad, width, out_w, lo, hi);
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + oy * out_w;
          if (iy < 0 || iy >= height || lo >= hi) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * height + iy) * width - pad + kx;
          std::fill(dst, dst + lo, T(0));
          if (stride == 1) {
            std::copy(src + lo, src + hi, dst + lo);
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox] = src[ox * stride];
          }
          std::fill(dst + hi, dst + out_w, T(0));
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, int channels, int height, int width, int k, int stride, int pad, int out_h, int out_w,
                T* x) {
  const int n = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + (static_cast<std::size_t>(c * k + ky) * k + kx) * n;
        int lo, hi;
        valid_range(kx, stride, pad, width, out_w, lo, hi);
        if (lo >= hi) continue;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= height) continue;
          T* dst = x + (static_cast<std::size_t>(c) * height + iy) * width - pad + kx;
          const T* src = row + oy * out_w;
          if (stride == 1) {
            for (int ox = lo; ox < hi; ++ox) dst[ox] += src[ox];
          } else {
            for (int ox = lo; ox < hi; ++ox) dst[ox * stride] += src[ox];
          }
        }
      }
    }
  }
}

inline int reflect_index(int i, int n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * n - 2 - i;
  return i;
}

template <class T>
void require4(const Tensor<T>& t, const char* what) {
  require(t.rank() == 4, std::string(what) + ": expected NCHW tensor, got " + to_string(t.shape()));
}

}  // namespace detail

/// 2-D convolution with zero padding. `w` is [out, in, k, k]; `b` is optional [out].
template <class T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, int stride, int pad) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(w);
  detail::require4(xv, "conv2d input");
  require(wv.rank() == 4 && wv.dim(2) == wv.dim(3), "conv2d weight must be [out,in,k,k]");
  const int batch = xv.dim(0), cin = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
  const int cout = wv.dim(0), k = wv.dim(2);
  require(wv.dim(1) == cin, "conv2d channel mismatch: input " + to_string(xv.shape()) + " weight " + to_string(wv.shape()));
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (wd + 2 * pad - k) / stride + 1;
  require(oh > 0 && ow > 0, "conv2d output would be empty");
  const int n = oh * ow, kk = cin * k * k;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);
  Tensor<T> out({batch, cout, oh, ow});
  std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kk) * n);
  for (int bi = 0; bi < batch; ++bi) {
    const T* xb = xv.data() + static_cast<std::size_t>(bi) * cin * h * wd;
    const T* src = xb;
    if (!pointwise) {
      detail::im2col(xb, cin, h, wd, k, stride, pad, oh, ow, col.data());
      src = col.data();
    }
    T* ob = out.data() + static_cast<std::size_t>(bi) * cout * n;
    blas::gemm(false, false, cout, n, kk, T(1), wv.data(), kk, src, n, T(0), ob, n);
    if (b.valid()) {
      const T* bv = g.value(b).data();
      for (int c = 0; c < cout; ++c)
        for (int i = 0; i < n; ++i) ob[c * n + i] += bv[c];
    }
  }
  return g.record(std::move(out), {x, w, b}, [=](Graph<T>& g, const Tensor<T>& go) {
    const Tensor<T>& xv = g.value(x);
    const Tensor<T>& wv = g.value(w);
    Tensor<T>* gx = g.grad_buffer(x);
    Tensor<T>* gw = g.grad_buffer(w);
    Tensor<T>* gb = b.valid() ? g.grad_buffer(b) : nullptr;
    std::vector<T> col(pointwise ? 0 : static_cast<std::size_t>(kk) * n);
    std::vector<T> dcol(pointwise || !gx ? 0 : static_cast<std::size_t>(kk) * n);
    for (int bi = 0; bi < batch; ++bi) {
      const T* gob = go.data() + static_cast<std::size_t>(bi) * cout * n;
      const T* xb = xv.data() + static_cast<std::size_t>(bi) * cin * h * wd;
      if (gw) {
        const T* src = xb;
        if (!pointwise) {
          detail::im2col(xb, cin, h, wd, k, stride, pad, oh, ow, col.data());
          src = col.data();
        }
        blas::gemm(false, true, cout, kk, n, T(1), gob, n, src, n, T(1), gw->data(), kk);
      }
      if (gx) {
        T* gxb = gx->data() + static_cast<std::size_t>(bi) * cin * h * wd;
        if (pointwise) {
          blas::gemm(true, false, kk, n, cout, T(1), wv.data(), kk, gob, n, T(1), gxb, n);
        } else {
          blas::gemm(true, false, kk, n, cout, T(1), wv.data(), kk, gob, n, T(0), dcol.data(), n);
          detail::col2im_add(dcol.data(), cin, h, wd, k, stride, pad, oh, ow, gxb);
        }
      }
      if (gb)
        for (int c = 0; c < cout; ++c) {
          T s = 0;
          for (int i = 0; i < n; ++i) s += gob[c * n + i];
          (*gb)[c] += s;
        }
    }
  });
}

/// Reflection padding by `pad` pixels on every side (pad < height, width).
template <class T>
Var pad_reflect(Graph<T>& g, Var x, int pad) {
  const Tensor<T>& xv = g.value(x);
  detail::require4(xv, "pad_reflect");
  const int batch = xv.dim(0), ch = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  require(pad < h && pad < w, "reflection pad must be smaller than the spatial size");
  const int oh = h + 2 * pad, ow = w + 2 * pad;
  Tensor<T> out({batch, ch, oh, ow});
  for (int p = 0; p < batch * ch; ++p) {
    const T* src = xv.data() + static_cast<std::size_t>(p) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      const int sy = detail::reflect_index(y - pad, h);
      for (int xx = 0; xx < ow; ++xx) dst[y * ow + xx] = src[sy * w + detail::reflect_index(xx - pad, w)];
    }
  }
  return g.record(std::move(out), {x}, [=](Graph<T>& g, const Tensor<T>& go) {
    Tensor<T>* gx = g.grad_buffer(x);
    for (int p = 0; p < batch * ch; ++p) {
      const T* src = go.data() + static_cast<std::size_t>(p) * oh * ow;
      T* dst = gx->data() + static_cast<std::size_t>(p) * h * w;
      for (int y = 0; y < oh; ++y) {
        const int sy = detail::reflect_index(y - pad, h);
        for (int xx = 0; xx < ow; ++xx) dst[sy * w + detail::reflect_index(xx - pad, w)] += src[y * ow + xx];
      }
    }
  });
}

/// y = x W^T + b for x [batch, in], W [out, in], optional b [out].
template <class T>
Var linear(Graph<T>& g, Var x, Var w, Var b) {
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(w);
  require(xv.rank() == 2 && wv.rank() == 2 && xv.dim(1) == wv.dim(1),
          "linear shape mismatch: " + to_string(xv.shape()) + " x " + to_string(wv.shape()));
  const int batch = xv.dim(0), in = xv.dim(1), outd = wv.dim(0);
  Tensor<T> out({batch, outd});
  blas::gemm(false, true, batch, outd, in, T(1), xv.data(), in, wv.data(), in, T(0), out.data(), outd);
  if (b.valid()) {
    const T* bv = g.value(b).data();
    for (int i = 0; i < batch; ++i)
      for (int o = 0; o < outd; ++o) out[static_cast<std::size_t>(i) * outd + o] += bv[o];
  }
  return g.record(std::move(out), {x, w, b}, [=](Graph<T>& g, const Tensor<T>& go) {
    if (Tensor<T>* gx = g.grad_buffer(x))
      blas::gemm(false, false, batch, in, outd, T(1), go.data(), outd, g.value(w).data(), in, T(1), gx->data(), in);
    if (Tensor<T>* gw = g.grad_buffer(w))
      blas::gemm(true, false, outd, in, batch, T(1), go.data(), outd, g.value(x).data(), in, T(1), gw->data(), in);
    if (b.valid())
      if (Tensor<T>* gb = g.grad_buffer(b))
        for (int i = 0; i < batch; ++i)
          for (int o = 0; o < outd; ++o) (*gb)[o] += go[static_cast<std::size_t>(i) * outd + o];
  });
}

namespace detail {

template <class T, class F, class D>
Var unary(Graph<T>& g, Var x, F f, D dfdx_from_xy) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  return g.record(std::move(out), {x}, [=](Graph<T>& g, const Tensor<T>& go) {
    Tensor<T>* gx = g.grad_buffer(x);
    const Tensor<T>& xv = g.value(x);
    for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += go[i] * dfdx_from_xy(xv[i], f(xv[i]));
  });
}

}  // namespace detail

template <class T>
Var relu(Graph<T>& g, Var x) {
  return detail::unary(
      g, x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Var tanh(Graph<T>& g, Var x) {
  return detail::unary(
      g, x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Var sigmoid(Graph<T>& g, Var x) {
  return detail::unary(
      g, x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Var add(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  require(av.shape() == bv.shape(), "add shape mismatch: " + to_string(av.shape()) + " vs " + to_string(bv.shape()));
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return g.record(std::move(out), {a, b}, [=](Graph<T>& g, const Tensor<T>& go) {
    for (Var p : {a, b})
      if (Tensor<T>* gp = g.grad_buffer(p))
        for (std::size_t i = 0; i < go.size(); ++i) (*gp)[i] += go[i];
  });
}

/// Multiplies by the single value held in `s` (shape [1]).
template <class T>
Var mul_scalar(Graph<T>& g, Var x, Var s) {
  const Tensor<T>& xv = g.value(x);
  require(g.value(s).size() == 1, "mul_scalar expects a one-element scale");
  const T sv = g.value(s)[0];
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = sv * xv[i];
  return g.record(std::move(out), {x, s}, [=](Graph<T>& g, const Tensor<T>& go) {
    const Tensor<T>& xv = g.value(x);
    if (Tensor<T>* gx = g.grad_buffer(x))
      for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += sv * go[i];
    if (Tensor<T>* gs = g.grad_buffer(s)) {
      T acc = 0;
      for (std::size_t i = 0; i < xv.size(); ++i) acc += go[i] * xv[i];
      (*gs)[0] += acc;
    }
  });
}

/// Identity forward; multiplies the incoming gradient by `factor` on the way back.
template <class T>
Var grad_scale(Graph<T>& g, Var x, T factor) {
  Tensor<T> out = g.value(x);
  return g.record(std::move(out), {x}, [=](Graph<T>& g, const Tensor<T>& go) {
    Tensor<T>* gx = g.grad_buffer(x);
    for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += factor * go[i];
  });
}

template <class T>
Var reshape(Graph<T>& g, Var x, Shape shape) {
  Tensor<T> out = g.value(x);
  out.reshape(std::move(shape));
  return g.record(std::move(out), {x}, [=](Graph<T>& g, const Tensor<T>& go) {
    Tensor<T>* gx = g.grad_buffer(x);
    for (std::size_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i];
  });
}

namespace detail {

// Normalizes groups of `count` values strided by `stride`; group g starts at base(g).
template <class T>
struct NormStats {
  std::vector<T> mean;
  std::vector<T> inv_std;
};

}  // namespace detail

/// Per-sample, per-channel normalization over H x W, no affine parameters.
template <class T>
Var instance_norm(Graph<T>& g, Var x, T eps = T(1e-5)) {
  const Tensor<T>& xv = g.value(x);
  detail::require4(xv, "instance_norm");
  const int groups = xv.dim(0) * xv.dim(1);
  const int n = xv.dim(2) * xv.dim(3);
  Tensor<T> out(xv.shape());
  std::vector<T> inv_std(static_cast<std::size_t>(groups));
  for (int p = 0; p < groups; ++p) {
    const T* src = xv.data() + static_cast<std::size_t>(p) * n;
    T mean = 0;
    for (int i = 0; i < n; ++i) mean += src[i];
    mean /= n;
    T var = 0;
    for (int i = 0; i < n; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= n;
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[p] = is;
    T* dst = out.data() + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < n; ++i) dst[i] = (src[i] - mean) * is;
  }
  Var y = g.record(std::move(out), {x}, {});
  // The backward needs the normalized output, which lives on the node itself.
  return g.record(g.value(y), {y}, [=](Graph<T>& g, const Tensor<T>& go) {
    Tensor<T>* gx = g.grad_buffer(x);
    if (!gx) return;
    const Tensor<T>& xhat = g.value(y);
    for (int p = 0; p < groups; ++p) {
      const T* gop = go.data() + static_cast<std::size_t>(p) * n;
      const T* xh = xhat.data() + static_cast<std::size_t>(p) * n;
      T sum_g = 0, sum_gx = 0;
      for (int i = 0; i < n; ++i) {
        sum_g += gop[i];
        sum_gx += gop[i] * xh[i];
      }
      T* dst = gx->data() + static_cast<std::size_t>(p) * n;
      const T scale = inv_std[p] / n;
      for (int i = 0; i < n; ++i) dst[i] += scale * (n * gop[i] - sum_g - xh[i] * sum_gx);
    }
  });
}

/// Per-channel normalization over (N, H, W), no affine parameters.
/// Training mode uses batch statistics and folds them into the running buffers;
/// eval mode normalizes with the running buffers.
template <class T>
Var batch_norm(Graph<T>& g, Var x, Tensor<T>& running_mean, Tensor<T>& running_var, T momentum = T(0.1),
               T eps = T(1e-5), bool update_running = true) {
  const Tensor<T>& xv = g.value(x);
  detail::require4(xv, "batch_norm");
  const int batch = xv.dim(0), ch = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  require(static_cast<int>(running_mean.size()) == ch && static_cast<int>(running_var.size()) == ch,
          "batch_norm running statistics have the wrong channel count");
  const bool train = g.training();
  if (train && batch < 2) throw ContractError("batch_norm in training mode needs a batch of at least 2");
  const int n = batch * hw;
  std::vector<T> mean(static_cast<std::size_t>(ch)), inv_std(static_cast<std::size_t>(ch));
  for (int c = 0; c < ch; ++c) {
    if (train) {
      T m = 0;
      for (int b = 0; b < batch; ++b) {
        const T* src = xv.data() + (static_cast<std::size_t>(b) * ch + c) * hw;
        for (int i = 0; i < hw; ++i) m += src[i];
      }
      m /= n;
      T v = 0;
      for (int b = 0; b < batch; ++b) {
        const T* src = xv.data() + (static_cast<std::size_t>(b) * ch + c) * hw;
        for (int i = 0; i < hw; ++i) v += (src[i] - m) * (src[i] - m);
      }
      const T biased = v / n;
      const T unbiased = n > 1 ? v / (n - 1) : biased;
      mean[c] = m;
      inv_std[c] = T(1) / std::sqrt(biased + eps);
      if (update_running) {
        running_mean[c] = (T(1) - momentum) * running_mean[c] + momentum * m;
        running_var[c] = (T(1) - momentum) * running_var[c] + momentum * unbiased;
      }
    } else {
      mean[c] = running_mean[c];
      inv_std[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }
  Tensor<T> out(xv.shape());
  for (int b = 0; b < batch; ++b)
    for (int c = 0; c < ch; ++c) {
      const std::size_t off = (static_cast<std::size_t>(b) * ch + c) * hw;
      for (int i = 0; i < hw; ++i) out[off + i] = (xv[off + i] - mean[c]) * inv_std[c];
    }
  Var y = g.record(std::move(out), {x}, {});
  return g.record(g.value(y), {y}, [=](Graph<T>& g, const Tensor<T>& go) {
    Tensor<T>* gx = g.grad_buffer(x);
    if (!gx) return;
    const Tensor<T>& xhat = g.value(y);
    for (int c = 0; c < ch; ++c) {
      if (!train) {
        for (int b = 0; b < batch; ++b) {
          const std::size_t off = (static_cast<std::size_t>(b) * ch + c) * hw;
          for (int i = 0; i < hw; ++i) (*gx)[off + i] += go[off + i] * inv_std[c];
        }
        continue;
      }
      T sum_g = 0, sum_gx = 0;
      for (int b = 0; b < batch; ++b) {
        const std::size_t off = (static_cast<std::size_t>(b) * ch + c) * hw;
        for (int i = 0; i < hw; ++i) {
          sum_g += go[off + i];
          sum_gx += go[off + i] * xhat[off + i];
        }
      }
      const T scale = inv_std[c] / n;
      for (int b = 0; b < batch; ++b) {
        const std::size_t off = (static_cast<std::size_t>(b) * ch + c) * hw;
        for (int i = 0; i < hw; ++i) (*gx)[off + i] += scale * (n * go[off + i] - sum_g - xhat[off + i] * sum_gx);
      }
    }
  });
}

/// y[b,c,:,:] = x[b,c,:,:] * gamma[b,c] + beta[b,c].
template <class T>
Var channel_affine(Graph<T>& g, Var x, Var gamma, Var beta) {
  const Tensor<T>& xv = g.value(x);
  detail::require4(xv, "channel_affine");
  const int batch = xv.dim(0), ch = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  const Tensor<T>& gv = g.value(gamma);
  const Tensor<T>& bv = g.value(beta);
  require(gv.shape() == Shape{batch, ch} && bv.shape() == Shape{batch, ch}, "channel_affine expects [batch, channels] maps");
  Tensor<T> out(xv.shape());
  for (int p = 0; p < batch * ch; ++p) {
    const std::size_t off = static_cast<std::size_t>(p) * hw;
    for (int i = 0; i < hw; ++i) out[off + i] = xv[off + i] * gv[p] + bv[p];
  }
  return g.record(std::move(out), {x, gamma, beta}, [=](Graph<T>& g, const Tensor<T>& go) {
    const Tensor<T>& xv = g.value(x);
    const Tensor<T>& gv = g.value(gamma);
    Tensor<T>* gx = g.grad_buffer(x);
    Tensor<T>* gg = g.grad_buffer(gamma);
    Tensor<T>* gb = g.grad_buffer(beta);
    for (int p = 0; p < batch * ch; ++p) {
      const std::size_t off = static_cast<std::size_t>(p) * hw;
      T sg = 0, sgx = 0;
      for (int i = 0; i < hw; ++i) {
        sg += go[off + i];
        sgx += go[off + i] * xv[off + i];
        if (gx) (*gx)[off + i] += go[off + i] * gv[p];
      }
      if (gg) (*gg)[p] += sgx;
      if (gb) (*gb)[p] += sg;
    }
  });
}

/// Non-overlapping k x k average pooling; spatial dims must be divisible by k.
template <class T>
Var avg_pool(Graph<T>& g, Var x, int k) {
  const Tensor<T>& xv = g.value(x);
  detail::require4(xv, "avg_pool");
  const int planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  require(h % k == 0 && w % k == 0, "avg_pool: spatial size not divisible by the window");
  const int oh = h / k, ow = w / k;
  const T inv = T(1) / (k * k);
  Tensor<T> out({xv.dim(0), xv.dim(1), oh, ow});
  for (int p = 0; p < planes; ++p) {
    const T* src = xv.data() + static_cast<std::size_t>(p) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(p) * oh * ow;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) dst[(y / k) * ow + xx / k] += src[y * w + xx] * inv;
  }
  return g.record(std::move(out), {x}, [=](Graph<T>& g, const Tensor<T>& go) {
    Tensor<T>* gx = g.grad_buffer(x);
    for (int p = 0; p < planes; ++p) {
      const T* src = go.data() + static_cast<std::size_t>(p) * oh * ow;
      T* dst = gx->data() + static_cast<std::size_t>(p) * h * w;
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) dst[y * w + xx] += src[(y / k) * ow + xx / k] * inv;
    }
  });
}

namespace detail {

inline int bin_start(int i, int in, int bins) { return (i * in) / bins; }
inline int bin_end(int i, int in, int bins) { return ((i + 1) * in + bins - 1) / bins; }

}  // namespace detail

/// Average-pools each plane into bins x bins cells. Cell (i, j) covers rows
/// [floor(i*h/bins), ceil((i+1)*h/bins)), so sizes need not be divisible.
template <class T>
Var adaptive_avg_pool(Graph<T>& g, Var x, int bins) {
  const Tensor<T>& xv = g.value(x);
  detail::require4(xv, "adaptive_avg_pool");
  const int planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  require(bins >= 1 && bins <= h && bins <= w, "adaptive_avg_pool: bin count exceeds spatial size");
  Tensor<T> out({xv.dim(0), xv.dim(1), bins, bins});
  for (int p = 0; p < planes; ++p) {
    const T* src = xv.data() + static_cast<std::size_t>(p) * h * w;
    for (int i = 0; i < bins; ++i)
      for (int j = 0; j < bins; ++j) {
        const int y0 = detail::bin_start(i, h, bins), y1 = detail::bin_end(i, h, bins);
        const int x0 = detail::bin_start(j, w, bins), x1 = detail::bin_end(j, w, bins);
        T s = 0;
        for (int y = y0; y < y1; ++y)
          for (int xx = x0; xx < x1; ++xx) s += src[y * w + xx];
        out[(static_cast<std::size_t>(p) * bins + i) * bins + j] = s / T((y1 - y0) * (x1 - x0));
      }
  }
  return g.record(std::move(out), {x}, [=](Graph<T>& g, const Tensor<T>& go) {
    Tensor<T>* gx = g.grad_buffer(x);
    for (int p = 0; p < planes; ++p) {
      T* dst = gx->data() + static_cast<std::size_t>(p) * h * w;
      for (int i = 0; i < bins; ++i)
        for (int j = 0; j < bins; ++j) {
          const int y0 = detail::bin_start(i, h, bins), y1 = detail::bin_end(i, h, bins);
          const int x0 = detail::bin_start(j, w, bins), x1 = detail::bin_end(j, w, bins);
          const T gv = go[(static_cast<std::size_t>(p) * bins + i) * bins + j] / T((y1 - y0) * (x1 - x0));
          for (int y = y0; y < y1; ++y)
            for (int xx = x0; xx < x1; ++xx) dst[y * w + xx] += gv;
        }
    }
  });
}

/// Nearest-neighbour resampling to out_h x out_w: source index floor(o * in / out).
template <class T>
Var resize_nearest(Graph<T>& g, Var x, int out_h, int out_w) {
  const Tensor<T>& xv = g.value(x);
  detail::require4(xv, "resize_nearest");
  const int planes = xv.dim(0) * xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  std::vector<int> ys(static_cast<std::size_t>(out_h)), xs(static_cast<std::size_t>(out_w));
  for (int y = 0; y < out_h; ++y) ys[y] = static_cast<int>((static_cast<long>(y) * h) / out_h);
  for (int xx = 0; xx < out_w; ++xx) xs[xx] = static_cast<int>((static_cast<long>(xx) * w) / out_w);
  Tensor<T> out({xv.dim(0), xv.dim(1), out_h, out_w});
  for (int p = 0; p < planes; ++p) {
    const T* src = xv.data() + static_cast<std::size_t>(p) * h * w;
    T* dst = out.data() + static_cast<std::size_t>(p) * out_h * out_w;
    for (int y = 0; y < out_h; ++y)
      for (int xx = 0; xx < out_w; ++xx) dst[y * out_w + xx] = src[ys[y] * w + xs[xx]];
  }
  return g.record(std::move(out), {x}, [=](Graph<T>& g, const Tensor<T>& go) {
    Tensor<T>* gx = g.grad_buffer(x);
    for (int p = 0; p < planes; ++p) {
      const T* src = go.data() + static_cast<std::size_t>(p) * out_h * out_w;
      T* dst = gx->data() + static_cast<std::size_t>(p) * h * w;
      for (int y = 0; y < out_h; ++y)
        for (int xx = 0; xx < out_w; ++xx) dst[ys[y] * w + xs[xx]] += src[y * out_w + xx];
    }
  });
}

template <class T>
Var upsample2(Graph<T>& g, Var x) {
  return resize_nearest(g, x, g.value(x).dim(2) * 2, g.value(x).dim(3) * 2);
}

template <class T>
Var concat_channels(Graph<T>& g, const std::vector<Var>& parts) {
  require(!parts.empty(), "concat_channels needs at least one input");
  const Tensor<T>& first = g.value(parts[0]);
  detail::require4(first, "concat_channels");
  const int batch = first.dim(0), h = first.dim(2), w = first.dim(3), hw = h * w;
  std::vector<int> chans;
  int total = 0;
  for (Var p : parts) {
    const Tensor<T>& v = g.value(p);
    require(v.rank() == 4 && v.dim(0) == batch && v.dim(2) == h && v.dim(3) == w, "concat_channels shape mismatch");
    chans.push_back(v.dim(1));
    total += v.dim(1);
  }
  Tensor<T> out({batch, total, h, w});
  for (int b = 0; b < batch; ++b) {
    int c0 = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const Tensor<T>& v = g.value(parts[k]);
      const T* src = v.data() + static_cast<std::size_t>(b) * chans[k] * hw;
      std::copy(src, src + static_cast<std::size_t>(chans[k]) * hw,
                out.data() + (static_cast<std::size_t>(b) * total + c0) * hw);
      c0 += chans[k];
    }
  }
  return g.record(std::move(out), parts, [=](Graph<T>& g, const Tensor<T>& go) {
    for (int b = 0; b < batch; ++b) {
      int c0 = 0;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        if (Tensor<T>* gp = g.grad_buffer(parts[k])) {
          const T* src = go.data() + (static_cast<std::size_t>(b) * total + c0) * hw;
          T* dst = gp->data() + static_cast<std::size_t>(b) * chans[k] * hw;
          for (std::size_t i = 0; i < static_cast<std::size_t>(chans[k]) * hw; ++i) dst[i] += src[i];
        }
        c0 += chans[k];
      }
    }
  });
}

/// Extracts channel `k` of an NCHW tensor as [N, 1, H, W].
template <class T>
Var select_channel(Graph<T>& g, Var x, int k) {
  const Tensor<T>& xv = g.value(x);
  detail::require4(xv, "select_channel");
  const int batch = xv.dim(0), ch = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  require(k >= 0 && k < ch, "select_channel index out of range");
  Tensor<T> out({batch, 1, xv.dim(2), xv.dim(3)});
  for (int b = 0; b < batch; ++b)
    std::copy_n(xv.data() + (static_cast<std::size_t>(b) * ch + k) * hw, hw, out.data() + static_cast<std::size_t>(b) * hw);
  return g.record(std::move(out), {x}, [=](Graph<T>& g, const Tensor<T>& go) {
    Tensor<T>* gx = g.grad_buffer(x);
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < hw; ++i) (*gx)[(static_cast<std::size_t>(b) * ch + k) * hw + i] += go[static_cast<std::size_t>(b) * hw + i];
  });
}

/// Sums each plane: [N, C, H, W] -> [N, C].
template <class T>
Var sum_spatial(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  detail::require4(xv, "sum_spatial");
  const int planes = xv.dim(0) * xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor<T> out({xv.dim(0), xv.dim(1)});
  for (int p = 0; p < planes; ++p) {
    T s = 0;
    for (int i = 0; i < hw; ++i) s += xv[static_cast<std::size_t>(p) * hw + i];
    out[p] = s;
  }
  return g.record(std::move(out), {x}, [=](Graph<T>& g, const Tensor<T>& go) {
    Tensor<T>* gx = g.grad_buffer(x);
    for (int p = 0; p < planes; ++p)
      for (int i = 0; i < hw; ++i) (*gx)[static_cast<std::size_t>(p) * hw + i] += go[p];
  });
}

/// Softmax over the channel axis at every pixel.
template <class T>
Var softmax_channels(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  detail::require4(xv, "softmax_channels");
  const int batch = xv.dim(0), ch = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor<T> out(xv.shape());
  for (int b = 0; b < batch; ++b) {
    const std::size_t base = static_cast<std::size_t>(b) * ch * hw;
    for (int i = 0; i < hw; ++i) {
      T mx = xv[base + i];
      for (int c = 1; c < ch; ++c) mx = std::max(mx, xv[base + static_cast<std::size_t>(c) * hw + i]);
      T s = 0;
      for (int c = 0; c < ch; ++c) {
        const T e = std::exp(xv[base + static_cast<std::size_t>(c) * hw + i] - mx);
        out[base + static_cast<std::size_t>(c) * hw + i] = e;
        s += e;
      }
      for (int c = 0; c < ch; ++c) out[base + static_cast<std::size_t>(c) * hw + i] /= s;
    }
  }
  Var y = g.record(std::move(out), {x}, {});
  return g.record(g.value(y), {y}, [=](Graph<T>& g, const Tensor<T>& go) {
    Tensor<T>* gx = g.grad_buffer(x);
    if (!gx) return;
    const Tensor<T>& yv = g.value(y);
    for (int b = 0; b < batch; ++b) {
      const std::size_t base = static_cast<std::size_t>(b) * ch * hw;
      for (int i = 0; i < hw; ++i) {
        T dot = 0;
        for (int c = 0; c < ch; ++c) {
          const std::size_t o = base + static_cast<std::size_t>(c) * hw + i;
          dot += go[o] * yv[o];
        }
        for (int c = 0; c < ch; ++c) {
          const std::size_t o = base + static_cast<std::size_t>(c) * hw + i;
          (*gx)[o] += yv[o] * (go[o] - dot);
        }
      }
    }
  });
}

/// Two-region masks from one logit channel: (sigmoid(l), 1 - sigmoid(l)).
template <class T>
Var sigmoid_pair(Graph<T>& g, Var logits) {
  const Tensor<T>& lv = g.value(logits);
  detail::require4(lv, "sigmoid_pair");
  require(lv.dim(1) == 1, "sigmoid_pair expects a single logit channel");
  const int batch = lv.dim(0), hw = lv.dim(2) * lv.dim(3);
  Tensor<T> out({batch, 2, lv.dim(2), lv.dim(3)});
  for (int b = 0; b < batch; ++b)
    for (int i = 0; i < hw; ++i) {
      const T s = T(1) / (T(1) + std::exp(-lv[static_cast<std::size_t>(b) * hw + i]));
      out[(static_cast<std::size_t>(b) * 2) * hw + i] = s;
      out[(static_cast<std::size_t>(b) * 2 + 1) * hw + i] = T(1) - s;
    }
  Var y = g.record(std::move(out), {logits}, {});
  return g.record(g.value(y), {y}, [=](Graph<T>& g, const Tensor<T>& go) {
    Tensor<T>* gx = g.grad_buffer(logits);
    if (!gx) return;
    const Tensor<T>& yv = g.value(y);
    for (int b = 0; b < batch; ++b)
      for (int i = 0; i < hw; ++i) {
        const std::size_t o1 = (static_cast<std::size_t>(b) * 2) * hw + i;
        const T s = yv[o1];
        (*gx)[static_cast<std::size_t>(b) * hw + i] += (go[o1] - go[o1 + hw]) * s * (T(1) - s);
      }
  });
}

/// Batched matrix product over [B, rows, cols] tensors with optional transposes.
template <class T>
Var bmm(Graph<T>& g, Var a, Var b, bool trans_a = false, bool trans_b = false) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  require(av.rank() == 3 && bv.rank() == 3 && av.dim(0) == bv.dim(0), "bmm expects two [B, r, c] tensors");
  const int batch = av.dim(0);
  const int m = trans_a ? av.dim(2) : av.dim(1);
  const int k = trans_a ? av.dim(1) : av.dim(2);
  const int kb = trans_b ? bv.dim(2) : bv.dim(1);
  const int n = trans_b ? bv.dim(1) : bv.dim(2);
  require(k == kb, "bmm inner dimension mismatch");
  const int lda = av.dim(2), ldb = bv.dim(2);
  const std::size_t sa = av.size() / batch, sb = bv.size() / batch, sc = static_cast<std::size_t>(m) * n;
  Tensor<T> out({batch, m, n});
  for (int i = 0; i < batch; ++i)
    blas::gemm(trans_a, trans_b, m, n, k, T(1), av.data() + i * sa, lda, bv.data() + i * sb, ldb, T(0),
               out.data() + i * sc, n);
  return g.record(std::move(out), {a, b}, [=](Graph<T>& g, const Tensor<T>& go) {
    const Tensor<T>& av = g.value(a);
    const Tensor<T>& bv = g.value(b);
    Tensor<T>* ga = g.grad_buffer(a);
    Tensor<T>* gb = g.grad_buffer(b);
    for (int i = 0; i < batch; ++i) {
      const T* gi = go.data() + i * sc;
      const T* ai = av.data() + i * sa;
      const T* bi = bv.data() + i * sb;
      if (ga) {
        if (!trans_a)
          blas::gemm(false, !trans_b, m, k, n, T(1), gi, n, bi, ldb, T(1), ga->data() + i * sa, lda);
        else
          blas::gemm(trans_b, true, k, m, n, T(1), bi, ldb, gi, n, T(1), ga->data() + i * sa, lda);
      }
      if (gb) {
        if (!trans_b)
          blas::gemm(!trans_a, false, k, n, m, T(1), ai, lda, gi, n, T(1), gb->data() + i * sb, ldb);
        else
          blas::gemm(true, trans_a, n, k, m, T(1), gi, n, ai, lda, T(1), gb->data() + i * sb, ldb);
      }
    }
  });
}

/// Softmax over the last axis.
template <class T>
Var softmax_rows(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  const int n = xv.dim(xv.rank() - 1);
  const std::size_t rows = xv.size() / n;
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = xv.data() + r * n;
    T* dst = out.data() + r * n;
    const T mx = *std::max_element(src, src + n);
    T s = 0;
    for (int i = 0; i < n; ++i) s += (dst[i] = std::exp(src[i] - mx));
    for (int i = 0; i < n; ++i) dst[i] /= s;
  }
  Var y = g.record(std::move(out), {x}, {});
  return g.record(g.value(y), {y}, [=](Graph<T>& g, const Tensor<T>& go) {
    Tensor<T>* gx = g.grad_buffer(x);
    if (!gx) return;
    const Tensor<T>& yv = g.value(y);
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (int i = 0; i < n; ++i) dot += go[r * n + i] * yv[r * n + i];
      for (int i = 0; i < n; ++i) (*gx)[r * n + i] += yv[r * n + i] * (go[r * n + i] - dot);
    }
  });
}

/// W / sigma(W) with sigma estimated by one power-iteration step against the
/// persistent vector `u` (updated in training mode). The weight is viewed as
/// shape[0] x (the rest). Gradients treat u and v as constants.
template <class T>
Var spectral_norm(Graph<T>& g, Var w, Tensor<T>& u, bool update) {
  const Tensor<T>& wv = g.value(w);
  const int rows = wv.dim(0);
  const int cols = static_cast<int>(wv.size() / rows);
  require(static_cast<int>(u.size()) == rows, "spectral_norm u vector has the wrong length");
  SpectralEstimate<T> est = spectral_step<T>(wv.span(), rows, cols, u.span(), update);
  Tensor<T> out(wv.shape());
  const T sigma = est.sigma;
  for (std::size_t i = 0; i < wv.size(); ++i) out[i] = wv[i] / sigma;
  if (est.degenerate) {
    return g.record(std::move(out), {w}, [=](Graph<T>& g, const Tensor<T>& go) {
      Tensor<T>* gw = g.grad_buffer(w);
      for (std::size_t i = 0; i < go.size(); ++i) (*gw)[i] += go[i];
    });
  }
  std::vector<T> uu(u.data(), u.data() + rows);
  return g.record(std::move(out), {w}, [=, v = std::move(est.v)](Graph<T>& g, const Tensor<T>& go) {
    Tensor<T>* gw = g.grad_buffer(w);
    const Tensor<T>& wv = g.value(w);
    T dot = 0;
    for (std::size_t i = 0; i < go.size(); ++i) dot += go[i] * wv[i];
    const T coef = dot / (sigma * sigma);
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * cols + c;
        (*gw)[i] += go[i] / sigma - coef * uu[r] * v[c];
      }
  });
}

template <class T>
Var spectral_norm(Graph<T>& g, Var w, Tensor<T>& u) {
  return spectral_norm(g, w, u, g.training());
}

/// Replaces region `region` (0-based) of `image` by `appearance`:
/// out = image + masks[region] * (appearance - image). Under the per-pixel
/// simplex this equals the full composition with every other slot set to image.
template <class T>
Var redraw_region(Graph<T>& g, Var image, Var masks, Var appearance, int region) {
  const Tensor<T>& iv = g.value(image);
  const Tensor<T>& mv = g.value(masks);
  const Tensor<T>& av = g.value(appearance);
  detail::require4(iv, "redraw_region");
  const int batch = iv.dim(0), ch = iv.dim(1), hw = iv.dim(2) * iv.dim(3);
  const int n = mv.dim(1);
  require(av.shape() == iv.shape() && mv.rank() == 4 && mv.dim(0) == batch && mv.dim(2) == iv.dim(2) &&
              mv.dim(3) == iv.dim(3),
          "redraw_region shape mismatch");
  require(region >= 0 && region < n, "redraw_region index out of range");
  Tensor<T> out(iv.shape());
  for (int b = 0; b < batch; ++b) {
    const T* m = mv.data() + (static_cast<std::size_t>(b) * n + region) * hw;
    for (int c = 0; c < ch; ++c) {
      const std::size_t off = (static_cast<std::size_t>(b) * ch + c) * hw;
      for (int i = 0; i < hw; ++i) out[off + i] = iv[off + i] + m[i] * (av[off + i] - iv[off + i]);
    }
  }
  return g.record(std::move(out), {image, masks, appearance}, [=](Graph<T>& g, const Tensor<T>& go) {
    const Tensor<T>& iv = g.value(image);
    const Tensor<T>& mv = g.value(masks);
    const Tensor<T>& av = g.value(appearance);
    Tensor<T>* gi = g.grad_buffer(image);
    Tensor<T>* gm = g.grad_buffer(masks);
    Tensor<T>* ga = g.grad_buffer(appearance);
    for (int b = 0; b < batch; ++b) {
      const std::size_t moff = (static_cast<std::size_t>(b) * n + region) * hw;
      for (int c = 0; c < ch; ++c) {
        const std::size_t off = (static_cast<std::size_t>(b) * ch + c) * hw;
        for (int i = 0; i < hw; ++i) {
          const T m = mv[moff + i];
          const T gv = go[off + i];
          if (gi) (*gi)[off + i] += gv * (T(1) - m);
          if (ga) (*ga)[off + i] += gv * m;
          if (gm) (*gm)[moff + i] += gv * (av[off + i] - iv[off + i]);
        }
      }
    }
  });
}

}  // namespace redo::op
