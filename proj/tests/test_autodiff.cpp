// Gradient correctness: every op kind is checked against central finite
// differences at 64-bit over randomized shapes and seeds, plus the worked
// examples with hand-derived values.
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "doctest.h"
#include "motionlab/gradcheck.hpp"
#include "motionlab/nn.hpp"
#include "motionlab/ops.hpp"

using namespace mlab;
namespace op = mlab::ops;

using D = double;
using VD = VarT<D>;
using TD = TensorT<D>;
using TapeD = TapeT<D>;

namespace {

TD rand_t(Shape sh, RngStream& rng, double scale = 1.0) {
  return TD::randn(std::move(sh), rng, scale);
}

// Reduce an arbitrary tensor to a scalar with non-uniform weights so the
// checked op sees a generic upstream gradient.
VD weigh(TapeD& t, VD x) {
  const auto& v = t.val(x.id);
  TD w(v.shape);
  for (size_t i = 0; i < w.numel(); ++i) w.data[i] = 0.25 + 0.5 * double(i % 7);
  return op::sum(op::mul(x, t.constant(w)));
}

struct OpCase {
  std::string name;
  std::function<double(RngStream&)> run;  // returns max rel err
};

double check(const GraphBuilder& f, std::vector<TD> leaves) {
  return grad_check(f, std::move(leaves)).max_rel_err;
}

std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  auto add_case = [&](std::string name, std::function<double(RngStream&)> run) {
    cases.push_back({std::move(name), std::move(run)});
  };

  add_case("add_same", [](RngStream& rng) {
    const int r = rng.uniform_int(1, 5), c = rng.uniform_int(1, 6);
    return check([](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::add(l[0], l[1])); },
                 {rand_t({r, c}, rng), rand_t({r, c}, rng)});
  });
  add_case("add_row_broadcast", [](RngStream& rng) {
    const int r = rng.uniform_int(2, 5), c = rng.uniform_int(1, 6);
    return check([](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::add(l[0], l[1])); },
                 {rand_t({r, c}, rng), rand_t({c}, rng)});
  });
  add_case("mul", [](RngStream& rng) {
    const int r = rng.uniform_int(1, 5), c = rng.uniform_int(1, 6);
    return check([](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::mul(l[0], l[1])); },
                 {rand_t({r, c}, rng), rand_t({c}, rng)});
  });
  add_case("matmul", [](RngStream& rng) {
    const int m = rng.uniform_int(1, 5), k = rng.uniform_int(1, 5), n = rng.uniform_int(1, 5);
    return check(
        [](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::matmul(l[0], l[1])); },
        {rand_t({m, k}, rng), rand_t({k, n}, rng)});
  });
  add_case("bmm", [](RngStream& rng) {
    const int b = rng.uniform_int(1, 3), m = rng.uniform_int(1, 4), k = rng.uniform_int(1, 4),
              n = rng.uniform_int(1, 4);
    return check([](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::bmm(l[0], l[1])); },
                 {rand_t({b, m, k}, rng), rand_t({b, k, n}, rng)});
  });
  add_case("transpose", [](RngStream& rng) {
    const int r = rng.uniform_int(1, 5), c = rng.uniform_int(1, 6);
    return check([](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::transpose(l[0])); },
                 {rand_t({r, c}, rng)});
  });
  add_case("transpose_last2", [](RngStream& rng) {
    const int b = rng.uniform_int(1, 3), r = rng.uniform_int(1, 4), c = rng.uniform_int(1, 4);
    return check(
        [](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::transpose_last2(l[0])); },
        {rand_t({b, r, c}, rng)});
  });
  add_case("permute102", [](RngStream& rng) {
    const int a = rng.uniform_int(1, 3), b = rng.uniform_int(1, 4), c = rng.uniform_int(1, 4);
    return check([](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::permute102(l[0])); },
                 {rand_t({a, b, c}, rng)});
  });
  add_case("reshape", [](RngStream& rng) {
    const int r = rng.uniform_int(1, 4), c = rng.uniform_int(1, 6);
    return check(
        [=](TapeD& t, const std::vector<VD>& l) {
          return weigh(t, op::reshape(l[0], {1, r * c}));
        },
        {rand_t({r, c}, rng)});
  });
  add_case("slice_rows", [](RngStream& rng) {
    const int r = rng.uniform_int(3, 6), c = rng.uniform_int(1, 5);
    const int r0 = rng.uniform_int(0, r - 2);
    const int r1 = rng.uniform_int(r0 + 1, r);
    return check(
        [=](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::slice_rows(l[0], r0, r1)); },
        {rand_t({r, c}, rng)});
  });
  add_case("slice_cols", [](RngStream& rng) {
    const int r = rng.uniform_int(1, 5), c = rng.uniform_int(3, 6);
    const int c0 = rng.uniform_int(0, c - 2);
    const int c1 = rng.uniform_int(c0 + 1, c);
    return check(
        [=](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::slice_cols(l[0], c0, c1)); },
        {rand_t({r, c}, rng)});
  });
  add_case("concat_rows", [](RngStream& rng) {
    const int c = rng.uniform_int(1, 5);
    const int r1 = rng.uniform_int(1, 4), r2 = rng.uniform_int(1, 4);
    return check(
        [](TapeD& t, const std::vector<VD>& l) {
          return weigh(t, op::concat_rows<D>({l[0], l[1]}));
        },
        {rand_t({r1, c}, rng), rand_t({r2, c}, rng)});
  });
  add_case("stack_rows", [](RngStream& rng) {
    const int c = rng.uniform_int(1, 6);
    return check(
        [](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::stack_rows<D>({l[0], l[1]})); },
        {rand_t({c}, rng), rand_t({c}, rng)});
  });
  add_case("repeat_rows", [](RngStream& rng) {
    const int r = rng.uniform_int(1, 4), c = rng.uniform_int(1, 5), k = rng.uniform_int(2, 4);
    return check(
        [=](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::repeat_rows(l[0], k)); },
        {rand_t({r, c}, rng)});
  });
  add_case("gather_rows", [](RngStream& rng) {
    const int r = rng.uniform_int(2, 6), c = rng.uniform_int(1, 5);
    std::vector<int> ids;
    for (int i = 0; i < 5; ++i) ids.push_back(rng.uniform_int(0, r - 1));
    return check(
        [=](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::gather_rows(l[0], ids)); },
        {rand_t({r, c}, rng)});
  });
  add_case("layer_norm", [](RngStream& rng) {
    const int r = rng.uniform_int(1, 4), c = rng.uniform_int(2, 8);
    return check([](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::layer_norm(l[0])); },
                 {rand_t({r, c}, rng)});
  });
  add_case("softmax", [](RngStream& rng) {
    const int r = rng.uniform_int(1, 4), c = rng.uniform_int(2, 8);
    return check([](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::softmax(l[0])); },
                 {rand_t({r, c}, rng, 2.0)});
  });
  add_case("masked_fill", [](RngStream& rng) {
    const int r = rng.uniform_int(1, 4), c = rng.uniform_int(2, 6);
    TD mask({r, c});
    for (auto& v : mask.data) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    return check(
        [=](TapeD& t, const std::vector<VD>& l) {
          return weigh(t, op::masked_fill(l[0], mask, -2.5));
        },
        {rand_t({r, c}, rng)});
  });
  add_case("gelu", [](RngStream& rng) {
    return check([](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::gelu(l[0])); },
                 {rand_t({3, 5}, rng)});
  });
  add_case("relu", [](RngStream& rng) {
    // keep values away from the kink
    TD x = rand_t({4, 4}, rng);
    for (auto& v : x.data)
      if (std::abs(v) < 0.05) v += 0.1;
    return check([](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::relu(l[0])); }, {x});
  });
  add_case("tanh", [](RngStream& rng) {
    return check([](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::tanh_op(l[0])); },
                 {rand_t({2, 7}, rng)});
  });
  add_case("exp", [](RngStream& rng) {
    return check([](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::exp_op(l[0])); },
                 {rand_t({2, 5}, rng, 0.5)});
  });
  add_case("log", [](RngStream& rng) {
    TD x = rand_t({2, 5}, rng);
    for (auto& v : x.data) v = 0.5 + std::abs(v);
    return check([](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::log_op(l[0])); }, {x});
  });
  add_case("square", [](RngStream& rng) {
    return check([](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::square(l[0])); },
                 {rand_t({3, 3}, rng)});
  });
  add_case("mean_pool_rows", [](RngStream& rng) {
    const int r = rng.uniform_int(1, 6), c = rng.uniform_int(1, 5);
    return check(
        [](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::mean_pool_rows(l[0])); },
        {rand_t({r, c}, rng)});
  });
  add_case("masked_mean_rows", [](RngStream& rng) {
    const int r = rng.uniform_int(2, 6), c = rng.uniform_int(1, 5);
    std::vector<D> mask(size_t(r), 0.0);
    mask[0] = 1.0;
    for (int i = 1; i < r; ++i) mask[size_t(i)] = rng.uniform() < 0.6 ? 1.0 : 0.0;
    return check(
        [=](TapeD& t, const std::vector<VD>& l) {
          return weigh(t, op::masked_mean_rows(l[0], mask));
        },
        {rand_t({r, c}, rng)});
  });
  add_case("mse", [](RngStream& rng) {
    const int r = rng.uniform_int(1, 4), c = rng.uniform_int(1, 5);
    return check([](TapeD& t, const std::vector<VD>& l) { return op::mse(l[0], l[1]); },
                 {rand_t({r, c}, rng), rand_t({r, c}, rng)});
  });
  add_case("cross_entropy", [](RngStream& rng) {
    const int r = rng.uniform_int(1, 5), c = rng.uniform_int(2, 7);
    std::vector<int> tgt;
    for (int i = 0; i < r; ++i) tgt.push_back(rng.uniform_int(0, c - 1));
    return check(
        [=](TapeD& t, const std::vector<VD>& l) { return op::cross_entropy(l[0], tgt); },
        {rand_t({r, c}, rng, 2.0)});
  });
  add_case("cosine_similarity", [](RngStream& rng) {
    const int c = rng.uniform_int(2, 8);
    return check(
        [](TapeD& t, const std::vector<VD>& l) { return op::cosine_similarity(l[0], l[1]); },
        {rand_t({c}, rng), rand_t({c}, rng)});
  });
  add_case("l2_normalize", [](RngStream& rng) {
    const int c = rng.uniform_int(2, 8);
    return check(
        [](TapeD& t, const std::vector<VD>& l) { return weigh(t, op::l2_normalize(l[0])); },
        {rand_t({c}, rng)});
  });
  add_case("straight_through", [](RngStream& rng) {
    // forward value equals x through a detached path, so finite differences
    // see the identity that the backward rule implements
    const int r = rng.uniform_int(1, 4), c = rng.uniform_int(1, 5);
    return check(
        [](TapeD& t, const std::vector<VD>& l) {
          VD q = op::stop_grad(l[0]);
          return weigh(t, op::straight_through(l[0], q));
        },
        {rand_t({r, c}, rng)});
  });
  add_case("conv1d", [](RngStream& rng) {
    const int T = rng.uniform_int(4, 8), ci = rng.uniform_int(1, 3), co = rng.uniform_int(1, 3);
    const int kw = rng.uniform_int(2, 3);
    return check(
        [=](TapeD& t, const std::vector<VD>& l) {
          return weigh(t, op::conv1d(l[0], l[1], l[2], 1, kw - 1, 0));
        },
        {rand_t({T, ci}, rng), rand_t({kw, ci, co}, rng), rand_t({co}, rng)});
  });
  add_case("conv1d_strided", [](RngStream& rng) {
    const int ci = rng.uniform_int(1, 3), co = rng.uniform_int(1, 3);
    const int k = rng.uniform_int(2, 4);  // kernel == stride
    const int T = k * rng.uniform_int(2, 4);
    return check(
        [=](TapeD& t, const std::vector<VD>& l) {
          return weigh(t, op::conv1d(l[0], l[1], l[2], k, 0, 0));
        },
        {rand_t({T, ci}, rng), rand_t({k, ci, co}, rng), rand_t({co}, rng)});
  });
  add_case("dropout_fixed_seed", [](RngStream& rng) {
    const uint64_t seed = rng.next_u64();
    return check(
        [=](TapeD& t, const std::vector<VD>& l) {
          RngStream r(seed);
          return weigh(t, op::dropout(l[0], 0.4, r, true));
        },
        {rand_t({3, 6}, rng)});
  });
  return cases;
}

}  // namespace

TEST_CASE("every op kind matches finite differences over >=50 seeds") {
  auto cases = op_cases();
  for (const auto& c : cases) {
    double worst = 0.0;
    for (uint64_t seed = 1; seed <= 52; ++seed) {
      RngStream rng(mix_seed(seed, fnv1a(c.name)));
      worst = std::max(worst, c.run(rng));
    }
    INFO("op ", c.name, " worst rel err ", worst);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("softmax exact symmetry and shift invariance") {
  TapeD t;
  VD x = t.input(TD({2}, {0.0, 0.0}), false);
  VD y = op::softmax(x);
  CHECK(y.val().data[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y.val().data[1] == doctest::Approx(0.5).epsilon(1e-12));

  RngStream rng(4);
  TD a = TD::randn({3, 7}, rng);
  TD b = a;
  for (auto& v : b.data) v += 13.75;  // additive shift per row
  TapeD t2;
  auto ya = op::softmax(t2.input(a, false)).val();
  auto yb = op::softmax(t2.input(b, false)).val();
  for (size_t i = 0; i < ya.numel(); ++i)
    CHECK(std::abs(ya.data[i] - yb.data[i]) < 1e-6);
}

TEST_CASE("matmul identity and layer-norm constant row") {
  RngStream rng(8);
  TapeD t;
  TD I({3, 3});
  for (int i = 0; i < 3; ++i) I.at(i, i) = 1.0;
  TD A = TD::randn({3, 3}, rng);
  auto out = op::matmul(t.input(I, false), t.input(A, false)).val();
  CHECK(out.data == A.data);

  // constant row -> zeros before affine
  TD c({1, 8});
  for (auto& v : c.data) v = 3.25;
  auto ln = op::layer_norm(t.input(c, false)).val();
  for (double v : ln.data) CHECK(std::abs(v) < 1e-9);
}

TEST_CASE("backward worked examples") {
  // loss = sum(x^2), x=[1,2,3] -> grad [2,4,6]
  TapeD t;
  VD x = t.input(TD({3}, {1.0, 2.0, 3.0}), true);
  VD loss = op::sum(op::square(x));
  t.backward(loss);
  CHECK(t.node(x.id).grad == std::vector<D>{2.0, 4.0, 6.0});

  // cross-entropy with uniform logits [0,0], target 0 -> grad [-0.5, 0.5]
  TapeD t2;
  VD logits = t2.input(TD({1, 2}, {0.0, 0.0}), true);
  VD ce = op::cross_entropy(logits, {0});
  CHECK(ce.val().data[0] == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  t2.backward(ce);
  CHECK(t2.node(logits.id).grad[0] == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(t2.node(logits.id).grad[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("backward accumulates without zeroing and rejects non-scalar loss") {
  TapeD t;
  VD x = t.input(TD({2}, {1.0, 2.0}), true);
  VD loss = op::sum(op::square(x));
  t.backward(loss);
  t.backward(loss);
  CHECK(t.node(x.id).grad == std::vector<D>{4.0, 8.0});

  TapeD t2;
  VD y = t2.input(TD({2}, {1.0, 2.0}), true);
  CHECK_THROWS_AS(t2.backward(op::square(y)), ShapeError);
  TapeD t3;
  CHECK_THROWS_AS(t3.backward(VarT<D>{&t3, 0}), ShapeError);
}

TEST_CASE("backward is linear in the loss") {
  RngStream rng(21);
  TD x0 = TD::randn({4, 3}, rng);
  auto grads_of = [&](double a, double b) {
    TapeD t;
    VD x = t.input(x0, true);
    VD l1 = op::mse(op::gelu(x), t.constant(TD::zeros({4, 3})));
    VD l2 = op::sum(op::softmax(x));
    VD combo = op::add(op::scale(l1, a), op::scale(l2, b));
    t.backward(combo);
    return t.node(x.id).grad;
  };
  auto g1 = grads_of(1.0, 0.0);
  auto g2 = grads_of(0.0, 1.0);
  auto g = grads_of(2.5, -1.25);
  for (size_t i = 0; i < g.size(); ++i)
    CHECK(g[i] == doctest::Approx(2.5 * g1[i] - 1.25 * g2[i]).epsilon(1e-9));
}

TEST_CASE("random 5-op graphs match finite differences") {
  for (uint64_t seed = 1; seed <= 20; ++seed) {
    RngStream rng(seed * 77);
    double err = check(
        [&](TapeD& t, const std::vector<VD>& l) {
          VD a = op::gelu(op::matmul(l[0], l[1]));
          VD b = op::layer_norm(a);
          VD c = op::softmax(op::add(b, l[2]));
          return op::mse(c, t.constant(TD::full({3, 4}, 0.25)));
        },
        {rand_t({3, 5}, rng), rand_t({5, 4}, rng), rand_t({4}, rng)});
    CHECK(err < 1e-4);
  }
}

TEST_CASE("straight-through passes the downstream gradient unchanged") {
  // definitional check: grad at x equals grad at the quantized output even
  // when the forward values differ
  RngStream rng(31);
  TapeD t;
  VD x = t.input(TD::randn({3, 4}, rng), true);
  VD q = op::stop_grad(op::add_scalar(op::scale(x, -2.0), 0.7));
  VD st = op::straight_through(x, q);
  CHECK(st.val().data == q.val().data);
  TD w = TD::randn({3, 4}, rng);
  VD loss = op::sum(op::mul(st, t.constant(w)));
  t.backward(loss);
  CHECK(t.node(x.id).grad == w.data);  // exactly the downstream grad
}

TEST_CASE("grad_check detects non-determinism") {
  RngStream shared(99);  // shared stream consumed across evaluations
  CHECK_THROWS_AS(
      grad_check(
          [&](TapeD& t, const std::vector<VD>& l) {
            return op::sum(op::dropout(l[0], 0.5, shared, true));
          },
          {TD::randn({4, 4}, shared)}),
      NumericError);
}

TEST_CASE("grad_check f(x)=x^3 at x=2") {
  auto rep = grad_check(
      [](TapeD& t, const std::vector<VD>& l) {
        return op::sum(op::mul(op::square(l[0]), l[0]));
      },
      {TD({1}, {2.0})});
  CHECK(rep.analytic_at_max == doctest::Approx(12.0).epsilon(1e-9));
  CHECK(std::abs(rep.numeric_at_max - 12.0) < 1e-6);
  CHECK(rep.max_rel_err < 1e-8);
}

TEST_CASE("transformer block gradcheck at 64-bit, all parameters") {
  RngStream rng(5);
  ParamStoreT<D> ps;
  nn::TransformerBlockT<D> block(ps, "blk", 8, 2, 16, rng);
  TensorT<D> mask = nn::causal_mask<D>(5);
  TD x0 = TD::randn({5, 8}, rng, 0.5);
  auto rep = grad_check_params(
      [&](TapeD& t) {
        VD x = t.input(x0, false);
        VD y = block(t, x, &mask);
        return op::mse(y, t.constant(TensorT<D>::full({5, 8}, 0.1)));
      },
      ps.all());
  INFO("transformer block max rel err ", rep.max_rel_err, " over ", rep.checked, " entries");
  CHECK(rep.max_rel_err < 1e-4);
}
