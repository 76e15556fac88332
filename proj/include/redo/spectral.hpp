#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "redo/blas.hpp"

namespace redo {

template <class T>
struct SpectralEstimate {
  T sigma = T(1);
  std::vector<T> v;
  bool degenerate = false;  // zero matrix: sigma is reported as 1 and W passes through unchanged
};

/// One power-iteration step on the rows x cols matrix `w` (row-major):
/// v <- normalize(W^T u), u <- normalize(W v), sigma = u^T W v.
/// When `update` is false, u is left as-is and only v is refreshed.
template <class T>
SpectralEstimate<T> spectral_step(std::span<const T> w, int rows, int cols, std::span<T> u, bool update) {
  SpectralEstimate<T> est;
  est.v.assign(static_cast<std::size_t>(cols), T(0));
  std::vector<T>& v = est.v;
  blas::gemm(true, false, cols, 1, rows, T(1), w.data(), cols, u.data(), 1, T(0), v.data(), 1);
  T vn = 0;
  for (T x : v) vn += x * x;
  vn = std::sqrt(vn);
  if (!(vn > T(0))) {
    est.degenerate = true;
    return est;
  }
  for (T& x : v) x /= vn;
  std::vector<T> wv(static_cast<std::size_t>(rows));
  blas::gemm(false, false, rows, 1, cols, T(1), w.data(), cols, v.data(), 1, T(0), wv.data(), 1);
  if (update) {
    T un = 0;
    for (T x : wv) un += x * x;
    un = std::sqrt(un);
    if (!(un > T(0))) {
      est.degenerate = true;
      return est;
    }
    for (int i = 0; i < rows; ++i) u[i] = wv[i] / un;
  }
  T sigma = 0;
  for (int i = 0; i < rows; ++i) sigma += u[i] * wv[i];
  if (!(std::abs(sigma) > T(0))) {
    est.degenerate = true;
    return est;
  }
  est.sigma = sigma;
  return est;
}

}  // namespace redo
