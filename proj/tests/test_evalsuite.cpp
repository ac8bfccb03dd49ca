#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "motionlab/evalsuite.hpp"

using namespace mlab;

namespace {

// Independent oracle: sqrtm(Sa*Sb) via Denman-Beavers iteration at 64-bit.
struct Mat {
  int n = 0;
  std::vector<double> v;
  Mat(int n_) : n(n_), v(size_t(n_) * n_, 0.0) {}
  double& at(int i, int j) { return v[size_t(i) * n + j]; }
  double at(int i, int j) const { return v[size_t(i) * n + j]; }
};

Mat mat_mul(const Mat& a, const Mat& b) {
  Mat c(a.n);
  for (int i = 0; i < a.n; ++i)
    for (int j = 0; j < a.n; ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.n; ++k) acc += a.at(i, k) * b.at(k, j);
      c.at(i, j) = acc;
    }
  return c;
}

Mat mat_inv(Mat a) {
  const int n = a.n;
  Mat inv(n);
  for (int i = 0; i < n; ++i) inv.at(i, i) = 1.0;
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(a.at(r, col)) > std::abs(a.at(piv, col))) piv = r;
    for (int j = 0; j < n; ++j) {
      std::swap(a.v[size_t(col) * n + j], a.v[size_t(piv) * n + j]);
      std::swap(inv.v[size_t(col) * n + j], inv.v[size_t(piv) * n + j]);
    }
    const double p = a.at(col, col);
    for (int j = 0; j < n; ++j) {
      a.at(col, j) /= p;
      inv.at(col, j) /= p;
    }
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a.at(r, col);
      for (int j = 0; j < n; ++j) {
        a.at(r, j) -= f * a.at(col, j);
        inv.at(r, j) -= f * inv.at(col, j);
      }
    }
  }
  return inv;
}

Mat sqrtm_db(const Mat& a) {
  Mat y = a, z(a.n);
  for (int i = 0; i < a.n; ++i) z.at(i, i) = 1.0;
  for (int it = 0; it < 60; ++it) {
    Mat yi = mat_inv(y), zi = mat_inv(z);
    Mat yn(a.n), zn(a.n);
    for (int i = 0; i < a.n; ++i)
      for (int j = 0; j < a.n; ++j) {
        yn.at(i, j) = 0.5 * (y.at(i, j) + zi.at(i, j));
        zn.at(i, j) = 0.5 * (z.at(i, j) + yi.at(i, j));
      }
    y = yn;
    z = zn;
  }
  return y;
}

double frechet_oracle(const Tensor& A, const Tensor& B) {
  const int d = A.cols();
  auto mean_of = [&](const Tensor& X, int j) {
    double m = 0.0;
    for (int i = 0; i < X.rows(); ++i) m += double(X.at(i, j));
    return m / X.rows();
  };
  std::vector<double> ma(size_t(d), 0.0), mb(size_t(d), 0.0);
  for (int j = 0; j < d; ++j) {
    ma[size_t(j)] = mean_of(A, j);
    mb[size_t(j)] = mean_of(B, j);
  }
  Mat ca(d), cb(d);
  for (int i = 0; i < A.rows(); ++i)
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        ca.at(a, b) += (double(A.at(i, a)) - ma[size_t(a)]) * (double(A.at(i, b)) - ma[size_t(b)]);
  for (int i = 0; i < B.rows(); ++i)
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        cb.at(a, b) += (double(B.at(i, a)) - mb[size_t(a)]) * (double(B.at(i, b)) - mb[size_t(b)]);
  for (auto& v : ca.v) v /= (A.rows() - 1);
  for (auto& v : cb.v) v /= (B.rows() - 1);
  Mat prod = mat_mul(ca, cb);
  Mat root = sqrtm_db(prod);
  double out = 0.0;
  for (int j = 0; j < d; ++j) {
    const double diff = ma[size_t(j)] - mb[size_t(j)];
    out += diff * diff;
  }
  for (int i = 0; i < d; ++i) out += ca.at(i, i) + cb.at(i, i) - 2.0 * root.at(i, i);
  return out;
}

}  // namespace

TEST_CASE("frechet distance: zero on identical sets, analytic 1-D value") {
  RngStream rng(1);
  Tensor A = Tensor::randn({40, 4}, rng);
  CHECK(frechet_distance(A, A) == doctest::Approx(0.0).epsilon(1e-6));

  // 1-D sets standardized to exact mean/variance: N(0,1) vs N(3,1) -> 9
  auto standardized = [&](int n, double target_mean) {
    Tensor X({n, 1});
    double m = 0, v = 0;
    for (int i = 0; i < n; ++i) X.at(i, 0) = float(rng.gauss());
    for (int i = 0; i < n; ++i) m += X.at(i, 0);
    m /= n;
    for (int i = 0; i < n; ++i) v += (X.at(i, 0) - m) * (X.at(i, 0) - m);
    v /= (n - 1);
    for (int i = 0; i < n; ++i)
      X.at(i, 0) = float((X.at(i, 0) - m) / std::sqrt(v) + target_mean);
    return X;
  };
  Tensor A1 = standardized(100, 0.0), B1 = standardized(100, 3.0);
  CHECK(frechet_distance(A1, B1) == doctest::Approx(9.0).epsilon(1e-4));
}

TEST_CASE("frechet matches the independent direct-formula oracle") {
  RngStream rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const int d = 3 + trial % 3;
    Tensor A = Tensor::randn({60 + 10 * trial, d}, rng, 1.0 + 0.2 * trial);
    Tensor B = Tensor::randn({80, d}, rng, 0.8);
    for (int i = 0; i < B.rows(); ++i) B.at(i, 0) += 0.5f;  // shift one dim
    const double mine = frechet_distance(A, B);
    const double oracle = frechet_oracle(A, B);
    INFO("trial ", trial, " mine ", mine, " oracle ", oracle);
    CHECK(mine == doctest::Approx(oracle).epsilon(1e-6));
  }
  CHECK(frechet_distance(Tensor::randn({50, 3}, rng), Tensor::randn({50, 3}, rng)) ==
        doctest::Approx(frechet_distance(Tensor::randn({50, 3}, rng),
                                         Tensor::randn({50, 3}, rng)))
            .epsilon(10.0));  // smoke: symmetric usage does not throw
  CHECK_THROWS_AS(frechet_distance(Tensor::randn({3, 4}, rng), Tensor::randn({50, 4}, rng)),
                  ShapeError);
}

TEST_CASE("frechet is symmetric") {
  RngStream rng(9);
  Tensor A = Tensor::randn({50, 4}, rng);
  Tensor B = Tensor::randn({60, 4}, rng, 1.3);
  CHECK(frechet_distance(A, B) == doctest::Approx(frechet_distance(B, A)).epsilon(1e-6));
}

TEST_CASE("r-precision: paired one-hot features rank perfectly; random is chance") {
  const int n = 64, d = 8;
  Tensor onehot({n, d}), text({n, d});
  std::vector<std::string> caps;
  for (int i = 0; i < n; ++i) {
    onehot.at(i, i % d) = 1.0f;
    // captions must be distinct per one-hot column to make pools solvable
    text.at(i, i % d) = 1.0f;
    caps.push_back("caption " + std::to_string(i));
  }
  // distinct captions but identical features would make distractors ambiguous;
  // perturb text features per sample so only the true pair matches exactly
  RngStream rng(3);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) text.at(i, j) += float(rng.gauss() * 1e-3);
  Tensor motion = text;  // evaluator is identity on pairs
  RPrecision rp = r_precision(motion, text, caps, 8, 5);
  CHECK(rp.top1 == doctest::Approx(1.0));

  // random features: top-1 near 1/pool
  Tensor rm = Tensor::randn({512, d}, rng), rt = Tensor::randn({512, d}, rng);
  std::vector<std::string> rcaps;
  for (int i = 0; i < 512; ++i) rcaps.push_back("c" + std::to_string(i));
  RPrecision rr = r_precision(rm, rt, rcaps, 8, 6);
  CHECK(rr.top1 > 0.125 - 0.05);
  CHECK(rr.top1 < 0.125 + 0.05);
  CHECK(rr.top1 <= rr.top2);
  CHECK(rr.top2 <= rr.top3);
}

TEST_CASE("mpjpe worked examples and brute-force agreement") {
  RngStream rng(4);
  Tensor a = Tensor::randn({20, kMotionDim}, rng);
  CHECK(mpjpe(a, a) == 0.0);

  Tensor b = a;
  for (int t = 0; t < 20; ++t) b.at(t, 4) += 1.0f;  // joint 2, x coordinate
  CHECK(mpjpe(a, b) == doctest::Approx(0.2).epsilon(1e-7));

  Tensor c = Tensor::randn({20, kMotionDim}, rng);
  double oracle = 0.0;
  for (int t = 0; t < 20; ++t) {
    for (int j = 0; j < 5; ++j) {
      double dx = double(a.at(t, 2 * j)) - double(c.at(t, 2 * j));
      double dy = double(a.at(t, 2 * j + 1)) - double(c.at(t, 2 * j + 1));
      oracle += std::hypot(dx, dy);
    }
  }
  oracle /= 100.0;
  CHECK(mpjpe(a, c) == doctest::Approx(oracle).epsilon(1e-7));
  Tensor d({10, kMotionDim});
  CHECK_THROWS_AS(mpjpe(a, d), ShapeError);
}

TEST_CASE("diversity and mm-dist endpoints") {
  Tensor same = Tensor::full({700, 8}, 0.5f);
  CHECK(diversity(same, 300, 1) == doctest::Approx(0.0));
  CHECK(mm_dist(same, same) == doctest::Approx(0.0));

  // 32-dim standard normal pairs: E||u-v|| via independent Monte-Carlo
  RngStream rng(8);
  Tensor g = Tensor::randn({2000, 32}, rng);
  const double got = diversity(g, 300, 2);
  double mc = 0.0;
  RngStream rng2(99);
  for (int i = 0; i < 20000; ++i) {
    double d2 = 0.0;
    for (int c = 0; c < 32; ++c) {
      const double diff = rng2.gauss() - rng2.gauss();
      d2 += diff * diff;
    }
    mc += std::sqrt(d2);
  }
  mc /= 20000.0;
  INFO("diversity ", got, " mc ", mc);
  CHECK(got == doctest::Approx(mc).epsilon(0.05));
  CHECK_THROWS_AS(diversity(Tensor::randn({10, 4}, rng), 300, 1), ConfigError);
}

TEST_CASE("silhouette: separated clusters near 1, random labels near 0") {
  RngStream rng(5);
  const int n = 60;
  Tensor feats({2 * n, 4});
  std::vector<int> labels;
  for (int i = 0; i < 2 * n; ++i) {
    const int lab = i < n ? 0 : 1;
    labels.push_back(lab);
    for (int c = 0; c < 4; ++c)
      feats.at(i, c) = float(rng.gauss() * 0.1 + (lab ? 5.0 : -5.0));
  }
  CHECK(silhouette_score(feats, labels) > 0.8);

  std::vector<int> rand_labels;
  for (int i = 0; i < 2 * n; ++i) rand_labels.push_back(int(rng.uniform_int(uint64_t(2))));
  CHECK(std::abs(silhouette_score(feats, rand_labels)) < 0.15);

  std::vector<int> single(size_t(2 * n), 0);
  CHECK_THROWS_AS(silhouette_score(feats, single), ConfigError);
}

TEST_CASE("trained evaluator ranks ground-truth pairs far above chance") {
  auto spec = DifficultySpec::standard();
  spec.max_primitives = 2;
  spec.max_segment_frames = 32;
  spec.max_total_frames = 64;
  auto data = build_dataset(321, 220, 8, 64, spec);
  EvaluatorConfig cfg;
  cfg.train_steps = 260;
  cfg.batch = 24;
  EvaluatorModel ev(cfg, 1);
  const double loss = ev.train(data.train);
  CHECK(std::isfinite(loss));

  const int n = int(data.test.records.size());
  Tensor mf({n, cfg.feature_dim}), tf({n, cfg.feature_dim});
  std::vector<std::string> caps;
  for (int i = 0; i < n; ++i) {
    Tensor m = ev.motion_features(data.test.records[size_t(i)].motion.frames);
    Tensor t = ev.text_features(data.test.records[size_t(i)].prompt.ids);
    for (int c = 0; c < cfg.feature_dim; ++c) {
      mf.at(i, c) = m.data[size_t(c)];
      tf.at(i, c) = t.data[size_t(c)];
    }
    caps.push_back(data.test.records[size_t(i)].prompt.surface);
  }
  RPrecision rp = r_precision(mf, tf, caps, 8, 11);
  INFO("evaluator top1 ", rp.top1, " top3 ", rp.top3);
  CHECK(rp.top3 > 0.8);

  // frozen weights round-trip with identical features
  ev.save("ev_test.bin");
  EvaluatorModel back = EvaluatorModel::load("ev_test.bin");
  CHECK(back.weight_hash() == ev.weight_hash());
  Tensor f1 = ev.motion_features(data.test.records[0].motion.frames);
  Tensor f2 = back.motion_features(data.test.records[0].motion.frames);
  CHECK(f1.data == f2.data);
  std::remove("ev_test.bin");
  std::remove("ev_test.bin.json");
}
