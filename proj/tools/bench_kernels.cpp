// bench_kernels — wall-clock comparison of serial vs OpenMP kernels.
//
// Prints one row per (kernel, size): serial ms, parallel ms, speedup, and an
// exact-match check between the two paths.
#include <chrono>
#include <cstdio>
#include <vector>

#include "motionlab/kernels.hpp"
#include "motionlab/rng.hpp"

using namespace mlab;
using Clock = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm
  auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<float> rand_vec(size_t n, RngStream& rng) {
  std::vector<float> v(n);
  for (auto& x : v) x = float(rng.gauss());
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  int threads = 0;
  if (argc > 1) threads = std::atoi(argv[1]);
  kernels::set_threads(threads);
  std::printf("threads: %d\n", kernels::threads());
  std::printf("%-28s %10s %10s %8s %s\n", "kernel", "serial ms", "omp ms", "speedup", "match");

  RngStream rng(1);
  for (int n : {64, 128, 256, 512}) {
    auto A = rand_vec(size_t(n) * n, rng), B = rand_vec(size_t(n) * n, rng);
    std::vector<float> Cs(size_t(n) * n), Cp(size_t(n) * n);
    const int reps = n <= 128 ? 50 : 10;
    double ts = time_ms([&] { kernels::serial::gemm_nn(n, n, n, A.data(), B.data(), Cs.data(), false); }, reps);
    double tp = time_ms([&] { kernels::par::gemm_nn(n, n, n, A.data(), B.data(), Cp.data(), false); }, reps);
    std::printf("%-28s %10.3f %10.3f %7.2fx %s\n",
                ("gemm_nn " + std::to_string(n) + "^3").c_str(), ts, tp, ts / tp,
                Cs == Cp ? "bit-exact" : "MISMATCH");
  }

  for (int T : {128, 512}) {
    const int Cin = 64, Cout = 64, Kw = 3;
    auto x = rand_vec(size_t(T) * Cin, rng);
    auto w = rand_vec(size_t(Kw) * Cin * Cout, rng);
    std::vector<float> ys(size_t(T) * Cout), yp(size_t(T) * Cout);
    double ts = time_ms([&] { kernels::serial::conv1d(T, Cin, Cout, Kw, 1, 1, T, x.data(), w.data(), ys.data()); }, 50);
    double tp = time_ms([&] { kernels::par::conv1d(T, Cin, Cout, Kw, 1, 1, T, x.data(), w.data(), yp.data()); }, 50);
    std::printf("%-28s %10.3f %10.3f %7.2fx %s\n",
                ("conv1d T=" + std::to_string(T) + " c64x64").c_str(), ts, tp, ts / tp,
                ys == yp ? "bit-exact" : "MISMATCH");
  }

  {
    const int R = 4096, C = 256;
    auto x = rand_vec(size_t(R) * C, rng);
    std::vector<float> ys(x.size()), yp(x.size());
    double ts = time_ms([&] { kernels::serial::softmax_rows(R, C, x.data(), ys.data()); }, 20);
    double tp = time_ms([&] { kernels::par::softmax_rows(R, C, x.data(), yp.data()); }, 20);
    std::printf("%-28s %10.3f %10.3f %7.2fx %s\n", "softmax_rows 4096x256", ts, tp, ts / tp,
                ys == yp ? "bit-exact" : "MISMATCH");
  }
  return 0;
}
