// Serial reference vs OpenMP kernels: results must be bit-identical for any
// thread count, since the parallel versions only partition output elements.
#include "doctest.h"
#include "motionlab/kernels.hpp"
#include "motionlab/rng.hpp"

#include <vector>

using namespace mlab;

namespace {

std::vector<float> random_vec(size_t n, RngStream& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = float(rng.gauss());
  return v;
}

}  // namespace

TEST_CASE("gemm variants match serial bit-exactly across thread counts") {
  RngStream rng(7);
  for (int threads : {2, 3, 7}) {
    kernels::set_threads(threads);
    for (auto [M, N, K] : {std::tuple{17, 31, 23}, {64, 64, 64}, {1, 40, 9}, {33, 1, 5}}) {
      auto A = random_vec(size_t(M) * K, rng);
      auto B = random_vec(size_t(K) * N, rng);
      std::vector<float> Cs(size_t(M) * N), Cp(size_t(M) * N);
      kernels::serial::gemm_nn(M, N, K, A.data(), B.data(), Cs.data(), false);
      kernels::par::gemm_nn(M, N, K, A.data(), B.data(), Cp.data(), false);
      CHECK(Cs == Cp);

      auto At = random_vec(size_t(K) * M, rng);
      kernels::serial::gemm_tn(M, N, K, At.data(), B.data(), Cs.data(), false);
      kernels::par::gemm_tn(M, N, K, At.data(), B.data(), Cp.data(), false);
      CHECK(Cs == Cp);

      auto Bt = random_vec(size_t(N) * K, rng);
      kernels::serial::gemm_nt(M, N, K, A.data(), Bt.data(), Cs.data(), false);
      kernels::par::gemm_nt(M, N, K, A.data(), Bt.data(), Cp.data(), false);
      CHECK(Cs == Cp);
    }
  }
  kernels::set_threads(0);
}

TEST_CASE("gemm_nn against naive triple loop") {
  RngStream rng(3);
  const int M = 9, N = 11, K = 13;
  auto A = random_vec(size_t(M) * K, rng);
  auto B = random_vec(size_t(K) * N, rng);
  std::vector<float> C(size_t(M) * N);
  kernels::gemm_nn(M, N, K, A.data(), B.data(), C.data());
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      double acc = 0;
      for (int k = 0; k < K; ++k) acc += double(A[size_t(i) * K + k]) * double(B[size_t(k) * N + j]);
      CHECK(C[size_t(i) * N + j] == doctest::Approx(acc).epsilon(1e-4));
    }
}

TEST_CASE("transposed gemm identities") {
  RngStream rng(11);
  const int M = 8, N = 6, K = 10;
  auto A = random_vec(size_t(M) * K, rng);
  auto B = random_vec(size_t(K) * N, rng);
  // A^T stored: At[k][i] = A[i][k]
  std::vector<float> At(size_t(K) * M), Bt(size_t(N) * K);
  for (int i = 0; i < M; ++i)
    for (int k = 0; k < K; ++k) At[size_t(k) * M + i] = A[size_t(i) * K + k];
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < N; ++j) Bt[size_t(j) * K + k] = B[size_t(k) * N + j];
  std::vector<float> C1(size_t(M) * N), C2(size_t(M) * N), C3(size_t(M) * N);
  kernels::gemm_nn(M, N, K, A.data(), B.data(), C1.data());
  kernels::gemm_tn(M, N, K, At.data(), B.data(), C2.data());
  kernels::gemm_nt(M, N, K, A.data(), Bt.data(), C3.data());
  for (size_t i = 0; i < C1.size(); ++i) {
    CHECK(C1[i] == doctest::Approx(C2[i]).epsilon(1e-5));
    CHECK(C1[i] == doctest::Approx(C3[i]).epsilon(1e-5));
  }
}

TEST_CASE("conv1d serial vs parallel and against direct sum") {
  RngStream rng(5);
  const int T = 20, Cin = 7, Cout = 5, Kw = 3;
  for (auto [stride, pad_left, pad_right] : {std::tuple{1, 2, 0}, {1, 1, 1}, {2, 0, 0}, {4, 0, 0}}) {
    if ((T + pad_left + pad_right - Kw) % stride != 0 && stride > 1) continue;
    const int T_out = (T + pad_left + pad_right - Kw) / stride + 1;
    auto x = random_vec(size_t(T) * Cin, rng);
    auto w = random_vec(size_t(Kw) * Cin * Cout, rng);
    std::vector<float> ys(size_t(T_out) * Cout), yp(size_t(T_out) * Cout);
    kernels::serial::conv1d(T, Cin, Cout, Kw, stride, pad_left, T_out, x.data(), w.data(), ys.data());
    kernels::set_threads(3);
    kernels::par::conv1d(T, Cin, Cout, Kw, stride, pad_left, T_out, x.data(), w.data(), yp.data());
    kernels::set_threads(0);
    CHECK(ys == yp);
    for (int t = 0; t < T_out; ++t)
      for (int o = 0; o < Cout; ++o) {
        double acc = 0;
        for (int k = 0; k < Kw; ++k) {
          int ti = t * stride - pad_left + k;
          if (ti < 0 || ti >= T) continue;
          for (int ci = 0; ci < Cin; ++ci)
            acc += double(x[size_t(ti) * Cin + ci]) * double(w[(size_t(k) * Cin + ci) * Cout + o]);
        }
        CHECK(ys[size_t(t) * Cout + o] == doctest::Approx(acc).epsilon(1e-4));
      }
  }
}

TEST_CASE("conv1d backward kernels serial vs parallel bit-exact") {
  RngStream rng(9);
  const int T = 24, Cin = 6, Cout = 4, Kw = 3, stride = 1, pad_left = 2;
  const int T_out = T;
  auto x = random_vec(size_t(T) * Cin, rng);
  auto w = random_vec(size_t(Kw) * Cin * Cout, rng);
  auto dy = random_vec(size_t(T_out) * Cout, rng);
  std::vector<float> dxs(size_t(T) * Cin, 0), dxp(size_t(T) * Cin, 0);
  std::vector<float> dws(size_t(Kw) * Cin * Cout, 0), dwp(size_t(Kw) * Cin * Cout, 0);
  kernels::serial::conv1d_dx(T, Cin, Cout, Kw, stride, pad_left, T_out, dy.data(), w.data(), dxs.data());
  kernels::serial::conv1d_dw(T, Cin, Cout, Kw, stride, pad_left, T_out, x.data(), dy.data(), dws.data());
  kernels::set_threads(4);
  kernels::par::conv1d_dx(T, Cin, Cout, Kw, stride, pad_left, T_out, dy.data(), w.data(), dxp.data());
  kernels::par::conv1d_dw(T, Cin, Cout, Kw, stride, pad_left, T_out, x.data(), dy.data(), dwp.data());
  kernels::set_threads(0);
  CHECK(dxs == dxp);
  CHECK(dws == dwp);
}

TEST_CASE("softmax rows serial vs parallel, sums to one") {
  RngStream rng(13);
  const int R = 33, C = 17;
  auto x = random_vec(size_t(R) * C, rng);
  std::vector<float> ys(x.size()), yp(x.size());
  kernels::serial::softmax_rows(R, C, x.data(), ys.data());
  kernels::set_threads(5);
  kernels::par::softmax_rows(R, C, x.data(), yp.data());
  kernels::set_threads(0);
  CHECK(ys == yp);
  for (int i = 0; i < R; ++i) {
    double s = 0;
    for (int j = 0; j < C; ++j) s += double(ys[size_t(i) * C + j]);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
  }
}
