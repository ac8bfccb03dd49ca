// kernels.hpp — dense numeric kernels.
//
// Every kernel exists twice: a serial reference under kernels::serial and an
// OpenMP row-parallel version under kernels::par. The parallel versions
// partition work by output element only; the per-element reduction order is
// identical to the serial code, so both paths produce bit-identical results
// for any thread count. Dispatching wrappers pick a path based on the global
// thread setting and problem size. tools/bench_kernels compares the two.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mlab::kernels {

inline int& thread_setting() {
  static int n = 0;  // 0 = use OpenMP default
  return n;
}

inline void set_threads(int n) { thread_setting() = n; }

inline int threads() {
#ifdef _OPENMP
  int n = thread_setting();
  return n > 0 ? n : omp_get_max_threads();
#else
  return 1;
#endif
}

// Work threshold below which the dispatcher stays serial.
constexpr long kParGrain = 1 << 14;

namespace serial {

// C (MxN) = A (MxK) * B (KxN), row-major. If accumulate, C += A*B.
template <typename S>
void gemm_nn(int M, int N, int K, const S* A, const S* B, S* C, bool accumulate) {
  for (int i = 0; i < M; ++i) {
    S* c = C + size_t(i) * N;
    if (!accumulate)
      for (int j = 0; j < N; ++j) c[j] = S(0);
    const S* a = A + size_t(i) * K;
    for (int k = 0; k < K; ++k) {
      const S aik = a[k];
      const S* b = B + size_t(k) * N;
      for (int j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

// C (MxN) = A^T (A is KxM) * B (KxN).
template <typename S>
void gemm_tn(int M, int N, int K, const S* A, const S* B, S* C, bool accumulate) {
  for (int i = 0; i < M; ++i) {
    S* c = C + size_t(i) * N;
    if (!accumulate)
      for (int j = 0; j < N; ++j) c[j] = S(0);
    for (int k = 0; k < K; ++k) {
      const S aik = A[size_t(k) * M + i];
      const S* b = B + size_t(k) * N;
      for (int j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

// C (MxN) = A (MxK) * B^T (B is NxK). B is transposed into a scratch buffer
// so the inner loop runs over independent output columns (a strict-FP dot
// product cannot vectorize); the per-element accumulation order (k ascending)
// is unchanged.
template <typename S>
void gemm_nt(int M, int N, int K, const S* A, const S* B, S* C, bool accumulate) {
  std::vector<S> bt(size_t(K) * N);
  for (int j = 0; j < N; ++j)
    for (int k = 0; k < K; ++k) bt[size_t(k) * N + j] = B[size_t(j) * K + k];
  for (int i = 0; i < M; ++i) {
    S* c = C + size_t(i) * N;
    if (!accumulate)
      for (int j = 0; j < N; ++j) c[j] = S(0);
    const S* a = A + size_t(i) * K;
    for (int k = 0; k < K; ++k) {
      const S aik = a[k];
      const S* b = bt.data() + size_t(k) * N;
      for (int j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

// y (T_out x Cout) = conv1d(x (T x Cin), w (Kw x Cin x Cout)) with left pad.
template <typename S>
void conv1d(int T, int Cin, int Cout, int Kw, int stride, int pad_left, int T_out,
            const S* x, const S* w, S* y) {
  for (int t = 0; t < T_out; ++t) {
    S* yr = y + size_t(t) * Cout;
    for (int o = 0; o < Cout; ++o) yr[o] = S(0);
    const int t0 = t * stride - pad_left;
    for (int k = 0; k < Kw; ++k) {
      const int ti = t0 + k;
      if (ti < 0 || ti >= T) continue;
      const S* xr = x + size_t(ti) * Cin;
      const S* wk = w + size_t(k) * Cin * Cout;
      for (int ci = 0; ci < Cin; ++ci) {
        const S xv = xr[ci];
        const S* wo = wk + size_t(ci) * Cout;
        for (int o = 0; o < Cout; ++o) yr[o] += xv * wo[o];
      }
    }
  }
}

// Gradient w.r.t. conv input. dx (T x Cin) += dy (T_out x Cout) * w.
// Weights are transposed to (k, o, ci) so the inner accumulation runs over
// output columns; per-element order (o ascending) matches the direct form.
template <typename S>
void conv1d_dx(int T, int Cin, int Cout, int Kw, int stride, int pad_left, int T_out,
               const S* dy, const S* w, S* dx) {
  std::vector<S> wt(size_t(Kw) * Cout * Cin);
  for (int k = 0; k < Kw; ++k)
    for (int ci = 0; ci < Cin; ++ci)
      for (int o = 0; o < Cout; ++o)
        wt[(size_t(k) * Cout + o) * Cin + ci] = w[(size_t(k) * Cin + ci) * Cout + o];
  for (int ti = 0; ti < T; ++ti) {
    S* dxr = dx + size_t(ti) * Cin;
    for (int k = 0; k < Kw; ++k) {
      // ti = t*stride - pad_left + k  =>  t = (ti + pad_left - k) / stride
      const int num = ti + pad_left - k;
      if (num < 0 || num % stride != 0) continue;
      const int t = num / stride;
      if (t < 0 || t >= T_out) continue;
      const S* dyr = dy + size_t(t) * Cout;
      const S* wk = wt.data() + size_t(k) * Cout * Cin;
      for (int o = 0; o < Cout; ++o) {
        const S g = dyr[o];
        const S* wo = wk + size_t(o) * Cin;
        for (int ci = 0; ci < Cin; ++ci) dxr[ci] += g * wo[ci];
      }
    }
  }
}

// Gradient w.r.t. conv weight. dw (Kw x Cin x Cout) += x ⊗ dy.
template <typename S>
void conv1d_dw(int T, int Cin, int Cout, int Kw, int stride, int pad_left, int T_out,
               const S* x, const S* dy, S* dw) {
  for (int k = 0; k < Kw; ++k) {
    S* dwk = dw + size_t(k) * Cin * Cout;
    for (int t = 0; t < T_out; ++t) {
      const int ti = t * stride - pad_left + k;
      if (ti < 0 || ti >= T) continue;
      const S* xr = x + size_t(ti) * Cin;
      const S* dyr = dy + size_t(t) * Cout;
      for (int ci = 0; ci < Cin; ++ci) {
        const S xv = xr[ci];
        S* dwo = dwk + size_t(ci) * Cout;
        for (int o = 0; o < Cout; ++o) dwo[o] += xv * dyr[o];
      }
    }
  }
}

// Row-wise softmax over the last dimension, numerically stable.
template <typename S>
void softmax_rows(int R, int C, const S* x, S* y) {
  for (int i = 0; i < R; ++i) {
    const S* xr = x + size_t(i) * C;
    S* yr = y + size_t(i) * C;
    S m = xr[0];
    for (int j = 1; j < C; ++j) m = std::max(m, xr[j]);
    S sum = S(0);
    for (int j = 0; j < C; ++j) {
      yr[j] = std::exp(xr[j] - m);
      sum += yr[j];
    }
    const S inv = S(1) / sum;
    for (int j = 0; j < C; ++j) yr[j] *= inv;
  }
}

}  // namespace serial

namespace par {

template <typename S>
void gemm_nn(int M, int N, int K, const S* A, const S* B, S* C, bool accumulate) {
#pragma omp parallel for schedule(static) num_threads(threads())
  for (int i = 0; i < M; ++i)
    serial::gemm_nn(1, N, K, A + size_t(i) * K, B, C + size_t(i) * N, accumulate);
}

template <typename S>
void gemm_tn(int M, int N, int K, const S* A, const S* B, S* C, bool accumulate) {
#pragma omp parallel for schedule(static) num_threads(threads())
  for (int i = 0; i < M; ++i) {
    S* c = C + size_t(i) * N;
    if (!accumulate)
      for (int j = 0; j < N; ++j) c[j] = S(0);
    for (int k = 0; k < K; ++k) {
      const S aik = A[size_t(k) * M + i];
      const S* b = B + size_t(k) * N;
      for (int j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

template <typename S>
void gemm_nt(int M, int N, int K, const S* A, const S* B, S* C, bool accumulate) {
  std::vector<S> bt(size_t(K) * N);
  for (int j = 0; j < N; ++j)
    for (int k = 0; k < K; ++k) bt[size_t(k) * N + j] = B[size_t(j) * K + k];
#pragma omp parallel for schedule(static) num_threads(threads())
  for (int i = 0; i < M; ++i) {
    S* c = C + size_t(i) * N;
    if (!accumulate)
      for (int j = 0; j < N; ++j) c[j] = S(0);
    const S* a = A + size_t(i) * K;
    for (int k = 0; k < K; ++k) {
      const S aik = a[k];
      const S* b = bt.data() + size_t(k) * N;
      for (int j = 0; j < N; ++j) c[j] += aik * b[j];
    }
  }
}

template <typename S>
void conv1d(int T, int Cin, int Cout, int Kw, int stride, int pad_left, int T_out,
            const S* x, const S* w, S* y) {
#pragma omp parallel for schedule(static) num_threads(threads())
  for (int t = 0; t < T_out; ++t) {
    S* yr = y + size_t(t) * Cout;
    for (int o = 0; o < Cout; ++o) yr[o] = S(0);
    const int t0 = t * stride - pad_left;
    for (int k = 0; k < Kw; ++k) {
      const int ti = t0 + k;
      if (ti < 0 || ti >= T) continue;
      const S* xr = x + size_t(ti) * Cin;
      const S* wk = w + size_t(k) * Cin * Cout;
      for (int ci = 0; ci < Cin; ++ci) {
        const S xv = xr[ci];
        const S* wo = wk + size_t(ci) * Cout;
        for (int o = 0; o < Cout; ++o) yr[o] += xv * wo[o];
      }
    }
  }
}

template <typename S>
void conv1d_dx(int T, int Cin, int Cout, int Kw, int stride, int pad_left, int T_out,
               const S* dy, const S* w, S* dx) {
  std::vector<S> wt(size_t(Kw) * Cout * Cin);
  for (int k = 0; k < Kw; ++k)
    for (int ci = 0; ci < Cin; ++ci)
      for (int o = 0; o < Cout; ++o)
        wt[(size_t(k) * Cout + o) * Cin + ci] = w[(size_t(k) * Cin + ci) * Cout + o];
#pragma omp parallel for schedule(static) num_threads(threads())
  for (int ti = 0; ti < T; ++ti) {
    S* dxr = dx + size_t(ti) * Cin;
    for (int k = 0; k < Kw; ++k) {
      const int num = ti + pad_left - k;
      if (num < 0 || num % stride != 0) continue;
      const int t = num / stride;
      if (t < 0 || t >= T_out) continue;
      const S* dyr = dy + size_t(t) * Cout;
      const S* wk = wt.data() + size_t(k) * Cout * Cin;
      for (int o = 0; o < Cout; ++o) {
        const S g = dyr[o];
        const S* wo = wk + size_t(o) * Cin;
        for (int ci = 0; ci < Cin; ++ci) dxr[ci] += g * wo[ci];
      }
    }
  }
}

template <typename S>
void conv1d_dw(int T, int Cin, int Cout, int Kw, int stride, int pad_left, int T_out,
               const S* x, const S* dy, S* dw) {
  // Race-free: each (k, ci) owns a disjoint slice of dw.
#pragma omp parallel for collapse(2) schedule(static) num_threads(threads())
  for (int k = 0; k < Kw; ++k) {
    for (int ci = 0; ci < Cin; ++ci) {
      S* dwo = dw + (size_t(k) * Cin + ci) * Cout;
      for (int t = 0; t < T_out; ++t) {
        const int ti = t * stride - pad_left + k;
        if (ti < 0 || ti >= T) continue;
        const S xv = x[size_t(ti) * Cin + ci];
        const S* dyr = dy + size_t(t) * Cout;
        for (int o = 0; o < Cout; ++o) dwo[o] += xv * dyr[o];
      }
    }
  }
}

template <typename S>
void softmax_rows(int R, int C, const S* x, S* y) {
#pragma omp parallel for schedule(static) num_threads(threads())
  for (int i = 0; i < R; ++i)
    serial::softmax_rows(1, C, x + size_t(i) * C, y + size_t(i) * C);
}

}  // namespace par

// ---- dispatching wrappers ----

inline bool use_parallel(long work) {
#ifdef _OPENMP
  return threads() > 1 && work >= kParGrain;
#else
  (void)work;
  return false;
#endif
}

template <typename S>
void gemm_nn(int M, int N, int K, const S* A, const S* B, S* C, bool acc = false) {
  if (use_parallel(long(M) * N * K) && M > 1)
    par::gemm_nn(M, N, K, A, B, C, acc);
  else
    serial::gemm_nn(M, N, K, A, B, C, acc);
}

template <typename S>
void gemm_tn(int M, int N, int K, const S* A, const S* B, S* C, bool acc = false) {
  if (use_parallel(long(M) * N * K) && M > 1)
    par::gemm_tn(M, N, K, A, B, C, acc);
  else
    serial::gemm_tn(M, N, K, A, B, C, acc);
}

template <typename S>
void gemm_nt(int M, int N, int K, const S* A, const S* B, S* C, bool acc = false) {
  if (use_parallel(long(M) * N * K) && M > 1)
    par::gemm_nt(M, N, K, A, B, C, acc);
  else
    serial::gemm_nt(M, N, K, A, B, C, acc);
}

template <typename S>
void conv1d(int T, int Cin, int Cout, int Kw, int stride, int pad_left, int T_out,
            const S* x, const S* w, S* y) {
  if (use_parallel(long(T_out) * Cin * Cout * Kw) && T_out > 1)
    par::conv1d(T, Cin, Cout, Kw, stride, pad_left, T_out, x, w, y);
  else
    serial::conv1d(T, Cin, Cout, Kw, stride, pad_left, T_out, x, w, y);
}

template <typename S>
void conv1d_dx(int T, int Cin, int Cout, int Kw, int stride, int pad_left, int T_out,
               const S* dy, const S* w, S* dx) {
  if (use_parallel(long(T) * Cin * Cout * Kw) && T > 1)
    par::conv1d_dx(T, Cin, Cout, Kw, stride, pad_left, T_out, dy, w, dx);
  else
    serial::conv1d_dx(T, Cin, Cout, Kw, stride, pad_left, T_out, dy, w, dx);
}

template <typename S>
void conv1d_dw(int T, int Cin, int Cout, int Kw, int stride, int pad_left, int T_out,
               const S* x, const S* dy, S* dw) {
  if (use_parallel(long(T_out) * Cin * Cout * Kw) && Kw * Cin > 1)
    par::conv1d_dw(T, Cin, Cout, Kw, stride, pad_left, T_out, x, dy, dw);
  else
    serial::conv1d_dw(T, Cin, Cout, Kw, stride, pad_left, T_out, x, dy, dw);
}

template <typename S>
void softmax_rows(int R, int C, const S* x, S* y) {
  if (use_parallel(long(R) * C) && R > 1)
    par::softmax_rows(R, C, x, y);
  else
    serial::softmax_rows(R, C, x, y);
}

}  // namespace mlab::kernels
