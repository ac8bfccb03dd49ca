// ops.hpp — differentiable op builders over TapeT.
//
// Conventions: tensors are row-major; "rows" means the trailing matrix view
// (rank-1 is a single row). Elementwise binary ops accept equal shapes, a
// scalar right side, or a right side whose shape is a suffix of the left's
// (broadcast over leading dims only; anything else needs an explicit expand).
#pragma once

#include <cmath>
#include <memory>

#include "motionlab/kernels.hpp"
#include "motionlab/tape.hpp"

namespace mlab::ops {

template <typename S>
using V = VarT<S>;

namespace detail {

inline bool is_suffix(const Shape& a, const Shape& b) {
  if (b.size() > a.size()) return false;
  for (size_t i = 0; i < b.size(); ++i)
    if (b[b.size() - 1 - i] != a[a.size() - 1 - i]) return false;
  return true;
}

enum class Bcast { same, scalar, suffix };

template <typename S>
Bcast binary_mode(const char* op, const TensorT<S>& a, const TensorT<S>& b) {
  if (a.shape == b.shape) return Bcast::same;
  if (b.numel() == 1) return Bcast::scalar;
  if (is_suffix(a.shape, b.shape)) return Bcast::suffix;
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape) + " vs " +
                   shape_str(b.shape));
}

}  // namespace detail

// ---- elementwise binary ----

template <typename S>
V<S> add(V<S> a, V<S> b) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  const auto& bv = t.val(b.id);
  auto mode = detail::binary_mode("add", av, bv);
  TensorT<S> out = av;
  const size_t bn = bv.numel();
  if (mode == detail::Bcast::same) {
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] += bv.data[i];
  } else if (mode == detail::Bcast::scalar) {
    for (auto& v : out.data) v += bv.data[0];
  } else {
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] += bv.data[i % bn];
  }
  return t.emplace(std::move(out), {a.id, b.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    if (tp.node(a.id).needs_grad) {
      auto& ga = tp.grad_buf(a.id);
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.node(b.id).needs_grad) {
      auto& gb = tp.grad_buf(b.id);
      if (mode == detail::Bcast::same)
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      else if (mode == detail::Bcast::scalar)
        for (size_t i = 0; i < g.size(); ++i) gb[0] += g[i];
      else
        for (size_t i = 0; i < g.size(); ++i) gb[i % bn] += g[i];
    }
  });
}

template <typename S>
V<S> mul(V<S> a, V<S> b) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  const auto& bv = t.val(b.id);
  auto mode = detail::binary_mode("mul", av, bv);
  TensorT<S> out = av;
  const size_t bn = bv.numel();
  if (mode == detail::Bcast::same) {
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] *= bv.data[i];
  } else if (mode == detail::Bcast::scalar) {
    for (auto& v : out.data) v *= bv.data[0];
  } else {
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] *= bv.data[i % bn];
  }
  return t.emplace(std::move(out), {a.id, b.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    const auto& avd = tp.val(a.id).data;
    const auto& bvd = tp.val(b.id).data;
    if (tp.node(a.id).needs_grad) {
      auto& ga = tp.grad_buf(a.id);
      if (mode == detail::Bcast::same)
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bvd[i];
      else if (mode == detail::Bcast::scalar)
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bvd[0];
      else
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bvd[i % bn];
    }
    if (tp.node(b.id).needs_grad) {
      auto& gb = tp.grad_buf(b.id);
      if (mode == detail::Bcast::same)
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * avd[i];
      else if (mode == detail::Bcast::scalar)
        for (size_t i = 0; i < g.size(); ++i) gb[0] += g[i] * avd[i];
      else
        for (size_t i = 0; i < g.size(); ++i) gb[i % bn] += g[i] * avd[i];
    }
  });
}

template <typename S>
V<S> scale(V<S> a, double c) {
  auto& t = *a.tape;
  TensorT<S> out = t.val(a.id);
  for (auto& v : out.data) v = S(v * S(c));
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    auto& ga = tp.grad_buf(a.id);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * S(c);
  });
}

template <typename S>
V<S> add_scalar(V<S> a, double c) {
  auto& t = *a.tape;
  TensorT<S> out = t.val(a.id);
  for (auto& v : out.data) v = S(v + S(c));
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    auto& ga = tp.grad_buf(a.id);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename S>
V<S> sub(V<S> a, V<S> b) {
  return add(a, scale(b, -1.0));
}

// ---- elementwise unary ----

namespace detail {

template <typename S, typename F, typename DF>
V<S> unary(V<S> a, F f, DF df) {
  auto& t = *a.tape;
  TensorT<S> out = t.val(a.id);
  for (auto& v : out.data) v = f(v);
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    const auto& x = tp.val(a.id).data;
    const auto& y = tp.val(id).data;
    auto& ga = tp.grad_buf(a.id);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace detail

template <typename S>
V<S> relu(V<S> a) {
  return detail::unary(
      a, [](S x) { return x > S(0) ? x : S(0); },
      [](S x, S) { return x > S(0) ? S(1) : S(0); });
}

// tanh-approximation GELU. The scalar forms are shared with the cache-side
// inference path so both compute identical floats.
inline double gelu_value(double x) {
  constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
  return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}
inline double gelu_derivative(double x) {
  constexpr double k = 0.7978845608028654;
  const double u = k * (x + 0.044715 * x * x * x);
  const double th = std::tanh(u);
  const double du = k * (1.0 + 3.0 * 0.044715 * x * x);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
}

template <typename S>
V<S> gelu(V<S> a) {
  return detail::unary(
      a, [](S x) { return S(gelu_value(double(x))); },
      [](S x, S) { return S(gelu_derivative(double(x))); });
}

template <typename S>
V<S> tanh_op(V<S> a) {
  return detail::unary(
      a, [](S x) { return S(std::tanh(double(x))); },
      [](S, S y) { return S(1) - y * y; });
}

template <typename S>
V<S> exp_op(V<S> a) {
  return detail::unary(
      a, [](S x) { return S(std::exp(double(x))); }, [](S, S y) { return y; });
}

template <typename S>
V<S> log_op(V<S> a) {
  return detail::unary(
      a, [](S x) { return S(std::log(double(x))); }, [](S x, S) { return S(1) / x; });
}

template <typename S>
V<S> square(V<S> a) {
  return detail::unary(
      a, [](S x) { return x * x; }, [](S x, S) { return S(2) * x; });
}

// ---- matrix products ----

template <typename S>
V<S> matmul(V<S> a, V<S> b) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  const auto& bv = t.val(b.id);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw ShapeError("matmul: need (M,K)x(K,N), got " + shape_str(av.shape) + " x " +
                     shape_str(bv.shape));
  const int M = av.dim(0), K = av.dim(1), N = bv.dim(1);
  TensorT<S> out({M, N});
  kernels::gemm_nn(M, N, K, av.data.data(), bv.data.data(), out.data.data());
  return t.emplace(std::move(out), {a.id, b.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    const auto& avd = tp.val(a.id).data;
    const auto& bvd = tp.val(b.id).data;
    if (tp.node(a.id).needs_grad)
      kernels::gemm_nt(M, K, N, g.data(), bvd.data(), tp.grad_buf(a.id).data(), true);
    if (tp.node(b.id).needs_grad)
      kernels::gemm_tn(K, N, M, avd.data(), g.data(), tp.grad_buf(b.id).data(), true);
  });
}

template <typename S>
V<S> bmm(V<S> a, V<S> b) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  const auto& bv = t.val(b.id);
  if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(1))
    throw ShapeError("bmm: need (B,M,K)x(B,K,N), got " + shape_str(av.shape) + " x " +
                     shape_str(bv.shape));
  const int B = av.dim(0), M = av.dim(1), K = av.dim(2), N = bv.dim(2);
  TensorT<S> out({B, M, N});
  for (int i = 0; i < B; ++i)
    kernels::gemm_nn(M, N, K, av.data.data() + size_t(i) * M * K,
                     bv.data.data() + size_t(i) * K * N, out.data.data() + size_t(i) * M * N);
  return t.emplace(std::move(out), {a.id, b.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    const auto& avd = tp.val(a.id).data;
    const auto& bvd = tp.val(b.id).data;
    for (int i = 0; i < B; ++i) {
      const S* gi = g.data() + size_t(i) * M * N;
      if (tp.node(a.id).needs_grad)
        kernels::gemm_nt(M, K, N, gi, bvd.data() + size_t(i) * K * N,
                         tp.grad_buf(a.id).data() + size_t(i) * M * K, true);
      if (tp.node(b.id).needs_grad)
        kernels::gemm_tn(K, N, M, avd.data() + size_t(i) * M * K, gi,
                         tp.grad_buf(b.id).data() + size_t(i) * K * N, true);
    }
  });
}

// ---- layout ops ----

template <typename S>
V<S> reshape(V<S> a, Shape shape) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  if (shape_numel(shape) != av.numel())
    throw ShapeError("reshape: cannot view " + shape_str(av.shape) + " as " + shape_str(shape));
  TensorT<S> out(shape, av.data);
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    auto& ga = tp.grad_buf(a.id);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename S>
V<S> transpose(V<S> a) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  if (av.rank() != 2) throw ShapeError("transpose: need rank-2, got " + shape_str(av.shape));
  const int R = av.dim(0), C = av.dim(1);
  TensorT<S> out({C, R});
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) out.data[size_t(j) * R + i] = av.data[size_t(i) * C + j];
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    auto& ga = tp.grad_buf(a.id);
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < C; ++j) ga[size_t(i) * C + j] += g[size_t(j) * R + i];
  });
}

// (B,M,N) -> (B,N,M)
template <typename S>
V<S> transpose_last2(V<S> a) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  if (av.rank() != 3) throw ShapeError("transpose_last2: need rank-3, got " + shape_str(av.shape));
  const int B = av.dim(0), M = av.dim(1), N = av.dim(2);
  TensorT<S> out({B, N, M});
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < N; ++j)
        out.data[(size_t(b) * N + j) * M + i] = av.data[(size_t(b) * M + i) * N + j];
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    auto& ga = tp.grad_buf(a.id);
    for (int b = 0; b < B; ++b)
      for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j)
          ga[(size_t(b) * M + i) * N + j] += g[(size_t(b) * N + j) * M + i];
  });
}

// (A,B,C) -> (B,A,C)
template <typename S>
V<S> permute102(V<S> a) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  if (av.rank() != 3) throw ShapeError("permute102: need rank-3, got " + shape_str(av.shape));
  const int A = av.dim(0), B = av.dim(1), C = av.dim(2);
  TensorT<S> out({B, A, C});
  for (int i = 0; i < A; ++i)
    for (int j = 0; j < B; ++j)
      for (int c = 0; c < C; ++c)
        out.data[(size_t(j) * A + i) * C + c] = av.data[(size_t(i) * B + j) * C + c];
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    auto& ga = tp.grad_buf(a.id);
    for (int i = 0; i < A; ++i)
      for (int j = 0; j < B; ++j)
        for (int c = 0; c < C; ++c)
          ga[(size_t(i) * B + j) * C + c] += g[(size_t(j) * A + i) * C + c];
  });
}

template <typename S>
V<S> slice_rows(V<S> a, int r0, int r1) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  if (av.rank() < 2) throw ShapeError("slice_rows: need rank>=2, got " + shape_str(av.shape));
  const int R = av.dim(0);
  if (r0 < 0 || r1 > R || r0 >= r1)
    throw ShapeError(format("slice_rows: range [%d,%d) out of %d rows", r0, r1, R));
  Shape sh = av.shape;
  sh[0] = r1 - r0;
  const size_t rowsz = av.numel() / size_t(R);
  TensorT<S> out(sh);
  std::copy(av.data.begin() + long(r0 * rowsz), av.data.begin() + long(r1 * rowsz),
            out.data.begin());
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    auto& ga = tp.grad_buf(a.id);
    for (size_t i = 0; i < g.size(); ++i) ga[size_t(r0) * rowsz + i] += g[i];
  });
}

template <typename S>
V<S> slice_cols(V<S> a, int c0, int c1) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  const int R = av.rows(), C = av.cols();
  if (c0 < 0 || c1 > C || c0 >= c1)
    throw ShapeError(format("slice_cols: range [%d,%d) out of %d cols", c0, c1, C));
  Shape sh = av.shape;
  sh.back() = c1 - c0;
  TensorT<S> out(sh);
  for (int i = 0; i < R; ++i)
    for (int j = c0; j < c1; ++j)
      out.data[size_t(i) * (c1 - c0) + (j - c0)] = av.data[size_t(i) * C + j];
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    auto& ga = tp.grad_buf(a.id);
    for (int i = 0; i < R; ++i)
      for (int j = c0; j < c1; ++j)
        ga[size_t(i) * C + j] += g[size_t(i) * (c1 - c0) + (j - c0)];
  });
}

template <typename S>
V<S> concat_rows(const std::vector<V<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  auto& t = *parts[0].tape;
  Shape sh = t.val(parts[0].id).shape;
  if (sh.size() < 2) throw ShapeError("concat_rows: need rank>=2 inputs");
  int total_rows = 0;
  std::vector<int> ids;
  for (const auto& p : parts) {
    const auto& v = t.val(p.id);
    if (v.rank() != int(sh.size()))
      throw ShapeError("concat_rows: rank mismatch");
    for (size_t d = 1; d < sh.size(); ++d)
      if (v.shape[d] != sh[d])
        throw ShapeError("concat_rows: trailing dims differ: " + shape_str(v.shape) + " vs " +
                         shape_str(sh));
    total_rows += v.dim(0);
    ids.push_back(p.id);
  }
  Shape osh = sh;
  osh[0] = total_rows;
  TensorT<S> out(osh);
  size_t off = 0;
  for (const auto& p : parts) {
    const auto& v = t.val(p.id);
    std::copy(v.data.begin(), v.data.end(), out.data.begin() + long(off));
    off += v.numel();
  }
  return t.emplace(std::move(out), ids, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    size_t o = 0;
    for (int in_id : tp.node(id).inputs) {
      const size_t n = tp.val(in_id).numel();
      if (tp.node(in_id).needs_grad) {
        auto& gi = tp.grad_buf(in_id);
        for (size_t i = 0; i < n; ++i) gi[i] += g[o + i];
      }
      o += n;
    }
  });
}

// Stack rank-1 vectors into a (N, C) matrix.
template <typename S>
V<S> stack_rows(const std::vector<V<S>>& parts) {
  if (parts.empty()) throw ShapeError("stack_rows: no inputs");
  auto& t = *parts[0].tape;
  const int C = t.val(parts[0].id).cols();
  std::vector<int> ids;
  for (const auto& p : parts) {
    const auto& v = t.val(p.id);
    if (v.rank() != 1 || v.cols() != C) throw ShapeError("stack_rows: need rank-1 of equal size");
    ids.push_back(p.id);
  }
  TensorT<S> out({int(parts.size()), C});
  for (size_t i = 0; i < parts.size(); ++i)
    std::copy(t.val(parts[i].id).data.begin(), t.val(parts[i].id).data.end(),
              out.data.begin() + long(i * size_t(C)));
  return t.emplace(std::move(out), ids, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    const auto& ins = tp.node(id).inputs;
    for (size_t i = 0; i < ins.size(); ++i) {
      if (!tp.node(ins[i]).needs_grad) continue;
      auto& gi = tp.grad_buf(ins[i]);
      for (int j = 0; j < C; ++j) gi[size_t(j)] += g[i * size_t(C) + size_t(j)];
    }
  });
}

// Nearest-neighbor temporal upsample: each row repeated k times.
template <typename S>
V<S> repeat_rows(V<S> a, int k) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  if (av.rank() != 2) throw ShapeError("repeat_rows: need rank-2");
  const int R = av.dim(0), C = av.dim(1);
  TensorT<S> out({R * k, C});
  for (int i = 0; i < R; ++i)
    for (int r = 0; r < k; ++r)
      std::copy(av.data.begin() + long(size_t(i) * C), av.data.begin() + long(size_t(i + 1) * C),
                out.data.begin() + long((size_t(i) * k + r) * C));
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    auto& ga = tp.grad_buf(a.id);
    for (int i = 0; i < R; ++i)
      for (int r = 0; r < k; ++r)
        for (int j = 0; j < C; ++j)
          ga[size_t(i) * C + j] += g[(size_t(i) * k + r) * C + j];
  });
}

// ---- lookup ----

template <typename S>
V<S> gather_rows(V<S> a, std::vector<int> ids) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  if (av.rank() != 2) throw ShapeError("gather_rows: need rank-2 table");
  const int R = av.dim(0), C = av.dim(1);
  for (int i : ids)
    if (i < 0 || i >= R)
      throw ShapeError(format("gather_rows: index %d out of %d rows", i, R));
  TensorT<S> out({int(ids.size()), C});
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy(av.data.begin() + long(size_t(ids[i]) * C),
              av.data.begin() + long(size_t(ids[i] + 1) * C), out.data.begin() + long(i * size_t(C)));
  auto idx = std::make_shared<std::vector<int>>(std::move(ids));
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    auto& ga = tp.grad_buf(a.id);
    for (size_t i = 0; i < idx->size(); ++i)
      for (int j = 0; j < C; ++j) ga[size_t((*idx)[i]) * C + j] += g[i * size_t(C) + size_t(j)];
  });
}

// Embedding lookup is a row gather into a trainable table.
template <typename S>
V<S> embedding(V<S> table, const std::vector<int>& ids) {
  return gather_rows(table, ids);
}

// ---- normalization / attention pieces ----

template <typename S>
V<S> layer_norm(V<S> a, double eps = 1e-5) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  const int R = av.rows(), C = av.cols();
  TensorT<S> out(av.shape);
  auto stats = std::make_shared<std::vector<S>>(size_t(R) * 2);  // (mean, inv_std) per row
  for (int i = 0; i < R; ++i) {
    const S* x = av.data.data() + size_t(i) * C;
    S mean = S(0);
    for (int j = 0; j < C; ++j) mean += x[j];
    mean /= S(C);
    S var = S(0);
    for (int j = 0; j < C; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= S(C);
    const S inv = S(1) / S(std::sqrt(double(var) + eps));
    (*stats)[size_t(i) * 2] = mean;
    (*stats)[size_t(i) * 2 + 1] = inv;
    S* y = out.data.data() + size_t(i) * C;
    for (int j = 0; j < C; ++j) y[j] = (x[j] - mean) * inv;
  }
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    const auto& y = tp.val(id).data;
    auto& ga = tp.grad_buf(a.id);
    for (int i = 0; i < R; ++i) {
      const S inv = (*stats)[size_t(i) * 2 + 1];
      const S* gr = g.data() + size_t(i) * C;
      const S* yr = y.data() + size_t(i) * C;
      S gsum = S(0), gysum = S(0);
      for (int j = 0; j < C; ++j) {
        gsum += gr[j];
        gysum += gr[j] * yr[j];
      }
      const S a1 = gsum / S(C), a2 = gysum / S(C);
      S* gar = ga.data() + size_t(i) * C;
      for (int j = 0; j < C; ++j) gar[j] += inv * (gr[j] - a1 - yr[j] * a2);
    }
  });
}

template <typename S>
V<S> softmax(V<S> a) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  const int R = av.rows(), C = av.cols();
  TensorT<S> out(av.shape);
  kernels::softmax_rows(R, C, av.data.data(), out.data.data());
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    const auto& y = tp.val(id).data;
    auto& ga = tp.grad_buf(a.id);
    for (int i = 0; i < R; ++i) {
      const S* gr = g.data() + size_t(i) * C;
      const S* yr = y.data() + size_t(i) * C;
      S dot = S(0);
      for (int j = 0; j < C; ++j) dot += gr[j] * yr[j];
      S* gar = ga.data() + size_t(i) * C;
      for (int j = 0; j < C; ++j) gar[j] += yr[j] * (gr[j] - dot);
    }
  });
}

// y = x where mask==0 else fill value. Mask is a constant 0/1 tensor whose
// shape equals x's or a suffix of it.
template <typename S>
V<S> masked_fill(V<S> a, const TensorT<S>& mask, double value) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  if (!(mask.shape == av.shape) && !detail::is_suffix(av.shape, mask.shape))
    throw ShapeError("masked_fill: mask shape " + shape_str(mask.shape) +
                     " incompatible with " + shape_str(av.shape));
  const size_t mn = mask.numel();
  TensorT<S> out = av;
  for (size_t i = 0; i < out.numel(); ++i)
    if (mask.data[i % mn] != S(0)) out.data[i] = S(value);
  auto m = std::make_shared<TensorT<S>>(mask);
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    auto& ga = tp.grad_buf(a.id);
    for (size_t i = 0; i < g.size(); ++i)
      if (m->data[i % mn] == S(0)) ga[i] += g[i];
  });
}

// ---- reductions / losses ----

template <typename S>
V<S> sum(V<S> a) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  S acc = S(0);
  for (S v : av.data) acc += v;
  TensorT<S> out({1});
  out.data[0] = acc;
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const S g = tp.node(id).grad[0];
    auto& ga = tp.grad_buf(a.id);
    for (auto& v : ga) v += g;
  });
}

template <typename S>
V<S> mean(V<S> a) {
  const size_t n = a.val().numel();
  return scale(sum(a), 1.0 / double(n));
}

// Mean over rows -> rank-1 vector of length C.
template <typename S>
V<S> mean_pool_rows(V<S> a) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  if (av.rank() < 2) throw ShapeError("mean_pool_rows: need rank>=2");
  const int R = av.rows(), C = av.cols();
  TensorT<S> out({C});
  for (int i = 0; i < R; ++i)
    for (int j = 0; j < C; ++j) out.data[size_t(j)] += av.data[size_t(i) * C + j];
  for (auto& v : out.data) v /= S(R);
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    auto& ga = tp.grad_buf(a.id);
    for (int i = 0; i < R; ++i)
      for (int j = 0; j < C; ++j) ga[size_t(i) * C + j] += g[size_t(j)] / S(R);
  });
}

// Weighted row mean with a constant 0/1 row mask; rows with mask 0 are
// excluded. sum(mask) must be positive.
template <typename S>
V<S> masked_mean_rows(V<S> a, const std::vector<S>& row_mask) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  const int R = av.rows(), C = av.cols();
  if (int(row_mask.size()) != R) throw ShapeError("masked_mean_rows: mask length mismatch");
  S msum = S(0);
  for (S m : row_mask) msum += m;
  if (!(msum > S(0))) throw ShapeError("masked_mean_rows: empty mask");
  TensorT<S> out({C});
  for (int i = 0; i < R; ++i) {
    if (row_mask[size_t(i)] == S(0)) continue;
    for (int j = 0; j < C; ++j) out.data[size_t(j)] += av.data[size_t(i) * C + j];
  }
  for (auto& v : out.data) v /= msum;
  auto mask = std::make_shared<std::vector<S>>(row_mask);
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    auto& ga = tp.grad_buf(a.id);
    for (int i = 0; i < R; ++i) {
      if ((*mask)[size_t(i)] == S(0)) continue;
      for (int j = 0; j < C; ++j) ga[size_t(i) * C + j] += g[size_t(j)] / msum;
    }
  });
}

template <typename S>
V<S> mse(V<S> a, V<S> b) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  const auto& bv = t.val(b.id);
  if (av.shape != bv.shape)
    throw ShapeError("mse: shapes differ: " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
  const size_t n = av.numel();
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = double(av.data[i]) - double(bv.data[i]);
    acc += d * d;
  }
  TensorT<S> out({1});
  out.data[0] = S(acc / double(n));
  return t.emplace(std::move(out), {a.id, b.id}, [=](TapeT<S>& tp, int id) {
    const S g = tp.node(id).grad[0];
    const auto& avd = tp.val(a.id).data;
    const auto& bvd = tp.val(b.id).data;
    const S c = S(2) * g / S(n);
    if (tp.node(a.id).needs_grad) {
      auto& ga = tp.grad_buf(a.id);
      for (size_t i = 0; i < n; ++i) ga[i] += c * (avd[i] - bvd[i]);
    }
    if (tp.node(b.id).needs_grad) {
      auto& gb = tp.grad_buf(b.id);
      for (size_t i = 0; i < n; ++i) gb[i] += c * (bvd[i] - avd[i]);
    }
  });
}

// Mean cross-entropy over rows of logits against integer targets.
template <typename S>
V<S> cross_entropy(V<S> logits, const std::vector<int>& targets) {
  auto& t = *logits.tape;
  const auto& lv = t.val(logits.id);
  const int R = lv.rows(), C = lv.cols();
  if (int(targets.size()) != R)
    throw ShapeError(format("cross_entropy: %d targets for %d rows", int(targets.size()), R));
  for (int y : targets)
    if (y < 0 || y >= C) throw ShapeError(format("cross_entropy: target %d out of %d classes", y, C));
  auto probs = std::make_shared<TensorT<S>>(Shape{R, C});
  kernels::softmax_rows(R, C, lv.data.data(), probs->data.data());
  double loss = 0.0;
  for (int i = 0; i < R; ++i) {
    // log softmax evaluated stably from the logits directly
    const S* x = lv.data.data() + size_t(i) * C;
    S m = x[0];
    for (int j = 1; j < C; ++j) m = std::max(m, x[j]);
    double lse = 0.0;
    for (int j = 0; j < C; ++j) lse += std::exp(double(x[j] - m));
    loss += -(double(x[targets[size_t(i)]] - m) - std::log(lse));
  }
  TensorT<S> out({1});
  out.data[0] = S(loss / R);
  auto tgt = std::make_shared<std::vector<int>>(targets);
  return t.emplace(std::move(out), {logits.id}, [=](TapeT<S>& tp, int id) {
    const S g = tp.node(id).grad[0];
    auto& gl = tp.grad_buf(logits.id);
    const S c = g / S(R);
    for (int i = 0; i < R; ++i) {
      const S* p = probs->data.data() + size_t(i) * C;
      S* gr = gl.data() + size_t(i) * C;
      for (int j = 0; j < C; ++j) gr[j] += c * p[j];
      gr[(*tgt)[size_t(i)]] -= c;
    }
  });
}

template <typename S>
V<S> cosine_similarity(V<S> a, V<S> b, double eps = 1e-12) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  const auto& bv = t.val(b.id);
  if (av.shape != bv.shape || av.rank() != 1)
    throw ShapeError("cosine_similarity: need equal rank-1 shapes");
  const size_t n = av.numel();
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < n; ++i) {
    dot += double(av.data[i]) * double(bv.data[i]);
    na += double(av.data[i]) * double(av.data[i]);
    nb += double(bv.data[i]) * double(bv.data[i]);
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < eps || nb < eps) throw NumericError("cosine_similarity: zero-norm input");
  const double cosv = dot / (na * nb);
  TensorT<S> out({1});
  out.data[0] = S(cosv);
  return t.emplace(std::move(out), {a.id, b.id}, [=](TapeT<S>& tp, int id) {
    const S g = tp.node(id).grad[0];
    const auto& x = tp.val(a.id).data;
    const auto& y = tp.val(b.id).data;
    if (tp.node(a.id).needs_grad) {
      auto& ga = tp.grad_buf(a.id);
      for (size_t i = 0; i < n; ++i)
        ga[i] += g * S(double(y[i]) / (na * nb) - cosv * double(x[i]) / (na * na));
    }
    if (tp.node(b.id).needs_grad) {
      auto& gb = tp.grad_buf(b.id);
      for (size_t i = 0; i < n; ++i)
        gb[i] += g * S(double(x[i]) / (na * nb) - cosv * double(y[i]) / (nb * nb));
    }
  });
}

// Unit-normalize a rank-1 vector.
template <typename S>
V<S> l2_normalize(V<S> a, double eps = 1e-12) {
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  if (av.rank() != 1) throw ShapeError("l2_normalize: need rank-1");
  const size_t n = av.numel();
  double nn = 0;
  for (S v : av.data) nn += double(v) * double(v);
  const double norm = std::sqrt(nn);
  if (norm < eps) throw NumericError("l2_normalize: zero-norm input");
  TensorT<S> out(av.shape);
  for (size_t i = 0; i < n; ++i) out.data[i] = S(double(av.data[i]) / norm);
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    const auto& y = tp.val(id).data;
    auto& ga = tp.grad_buf(a.id);
    double dot = 0;
    for (size_t i = 0; i < n; ++i) dot += double(g[i]) * double(y[i]);
    for (size_t i = 0; i < n; ++i) ga[i] += S((double(g[i]) - dot * double(y[i])) / norm);
  });
}

// ---- structural ----

template <typename S>
V<S> stop_grad(V<S> a) {
  auto& t = *a.tape;
  return t.constant(t.val(a.id));
}

// Forward: value of q. Backward: gradient flows to x unchanged (identity),
// nothing to q. This is the quantizer bypass rule.
template <typename S>
V<S> straight_through(V<S> x, V<S> q) {
  auto& t = *x.tape;
  const auto& xv = t.val(x.id);
  const auto& qv = t.val(q.id);
  if (xv.shape != qv.shape)
    throw ShapeError("straight_through: shapes differ: " + shape_str(xv.shape) + " vs " +
                     shape_str(qv.shape));
  return t.emplace(qv, {x.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    auto& gx = tp.grad_buf(x.id);
    for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

template <typename S>
V<S> dropout(V<S> a, double rate, RngStream& rng, bool training) {
  if (!training || rate <= 0.0) return a;
  auto& t = *a.tape;
  const auto& av = t.val(a.id);
  auto mask = std::make_shared<std::vector<S>>(av.numel());
  const S keep_scale = S(1.0 / (1.0 - rate));
  for (auto& m : *mask) m = rng.uniform() < rate ? S(0) : keep_scale;
  TensorT<S> out = av;
  for (size_t i = 0; i < out.numel(); ++i) out.data[i] *= (*mask)[i];
  return t.emplace(std::move(out), {a.id}, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    auto& ga = tp.grad_buf(a.id);
    for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[i];
  });
}

// ---- temporal convolution ----

// x: (T, Cin); w: (Kw, Cin, Cout); bias: rank-1 (Cout) or invalid Var.
template <typename S>
V<S> conv1d(V<S> x, V<S> w, V<S> bias, int stride, int pad_left, int pad_right) {
  auto& t = *x.tape;
  const auto& xv = t.val(x.id);
  const auto& wv = t.val(w.id);
  if (xv.rank() != 2 || wv.rank() != 3)
    throw ShapeError("conv1d: need x rank-2 and w rank-3, got " + shape_str(xv.shape) + ", " +
                     shape_str(wv.shape));
  const int T = xv.dim(0), Cin = xv.dim(1);
  const int Kw = wv.dim(0), Cout = wv.dim(2);
  if (wv.dim(1) != Cin)
    throw ShapeError(format("conv1d: weight expects %d input channels, x has %d", wv.dim(1), Cin));
  const int T_out = (T + pad_left + pad_right - Kw) / stride + 1;
  if (T_out <= 0) throw ShapeError("conv1d: empty output");
  TensorT<S> out({T_out, Cout});
  kernels::conv1d(T, Cin, Cout, Kw, stride, pad_left, T_out, xv.data.data(), wv.data.data(),
                  out.data.data());
  const bool has_bias = bias.valid();
  if (has_bias) {
    const auto& bv = t.val(bias.id);
    if (bv.numel() != size_t(Cout)) throw ShapeError("conv1d: bias size mismatch");
    for (int i = 0; i < T_out; ++i)
      for (int o = 0; o < Cout; ++o) out.data[size_t(i) * Cout + o] += bv.data[size_t(o)];
  }
  std::vector<int> ins = {x.id, w.id};
  if (has_bias) ins.push_back(bias.id);
  return t.emplace(std::move(out), ins, [=](TapeT<S>& tp, int id) {
    const auto& g = tp.node(id).grad;
    const auto& xvd = tp.val(x.id).data;
    const auto& wvd = tp.val(w.id).data;
    if (tp.node(x.id).needs_grad)
      kernels::conv1d_dx(T, Cin, Cout, Kw, stride, pad_left, T_out, g.data(), wvd.data(),
                         tp.grad_buf(x.id).data());
    if (tp.node(w.id).needs_grad)
      kernels::conv1d_dw(T, Cin, Cout, Kw, stride, pad_left, T_out, xvd.data(), g.data(),
                         tp.grad_buf(w.id).data());
    if (has_bias && tp.node(bias.id).needs_grad) {
      auto& gb = tp.grad_buf(bias.id);
      for (int i = 0; i < T_out; ++i)
        for (int o = 0; o < Cout; ++o) gb[size_t(o)] += g[size_t(i) * Cout + o];
    }
  });
}

template <typename S>
V<S> causal_conv1d(V<S> x, V<S> w, V<S> bias, int stride = 1) {
  const int Kw = x.tape->val(w.id).dim(0);
  return conv1d(x, w, bias, stride, Kw - 1, 0);
}

}  // namespace mlab::ops
