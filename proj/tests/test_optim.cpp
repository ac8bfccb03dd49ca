#include <cmath>

#include "doctest.h"
#include "motionlab/checkpoint.hpp"
#include "motionlab/optim.hpp"

#include <cstdio>

using namespace mlab;

TEST_CASE("adamw single step matches hand-computed update") {
  ParamStore ps;
  auto& p = ps.create("w", Tensor({1}, {0.5f}));
  p.value.ensure_grad();
  (*p.value.grad)[0] = 0.3f;

  AdamW opt(ps.all());
  opt.schedule = {1e-2, 0, 0, 0.0};
  opt.weight_decay = 0.1;
  opt.step();

  // m=0.1*0.3=0.03, v=0.001*0.09=9e-5; mhat=0.3, vhat=0.09
  // upd = lr*(0.3/(0.3+1e-8)) + lr*wd*0.5 = 1e-2*(0.99999997) + 1e-3*0.5
  const double expect = 0.5 - (1e-2 * (0.3 / (std::sqrt(0.09) + 1e-8)) + 1e-2 * 0.1 * 0.5);
  CHECK(p.value.data[0] == doctest::Approx(expect).epsilon(1e-6));
  CHECK(opt.step_count() == 1);
}

TEST_CASE("adamw zero grads and zero weight decay leave params unchanged") {
  ParamStore ps;
  auto& p = ps.create("w", Tensor({3}, {1.0f, -2.0f, 3.0f}));
  p.value.ensure_grad();
  AdamW opt(ps.all());
  opt.schedule = {1e-3, 0, 0, 0.0};
  opt.step();
  CHECK(p.value.data == std::vector<float>{1.0f, -2.0f, 3.0f});
}

TEST_CASE("adamw missing grad errors with parameter name") {
  ParamStore ps;
  ps.create("encoder.w", Tensor({2}));
  AdamW opt(ps.all());
  try {
    opt.step();
    FAIL("expected throw");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("encoder.w") != std::string::npos);
  }
}

TEST_CASE("warmup starts at zero lr and cosine decays to min") {
  LrSchedule s{1e-3, 10, 100, 1e-5};
  CHECK(s.at(0) == 0.0);
  CHECK(s.at(5) == doctest::Approx(5e-4));
  CHECK(s.at(10) == doctest::Approx(1e-3));
  CHECK(s.at(55) == doctest::Approx(0.5 * (1e-3 + 1e-5)).epsilon(1e-6));
  CHECK(s.at(100) == doctest::Approx(1e-5));
  CHECK(s.at(5000) == doctest::Approx(1e-5));
}

TEST_CASE("checkpoint round-trips bit-exactly and verifies checksum") {
  RngStream rng(17);
  ParamStore ps;
  ps.create("a.w", Tensor::randn({4, 3}, rng));
  ps.create("a.b", Tensor::randn({3}, rng));
  Checkpoint ck;
  ck.add_params(ps);
  ck.add("extra", Tensor::randn({2, 2, 2}, rng));

  const char* path = "ckpt_roundtrip.bin";
  ck.save(path);
  Checkpoint back = Checkpoint::load(path);
  CHECK(back.entries().size() == 3);
  for (size_t i = 0; i < ck.entries().size(); ++i) {
    CHECK(back.entries()[i].first == ck.entries()[i].first);
    CHECK(back.entries()[i].second.shape == ck.entries()[i].second.shape);
    CHECK(back.entries()[i].second.data == ck.entries()[i].second.data);
  }
  CHECK(back.content_hash() == ck.content_hash());

  // corrupt one byte -> checksum failure
  {
    std::ifstream f(path, std::ios::binary);
    std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    buf[buf.size() / 2] ^= 0x40;
    std::ofstream o(path, std::ios::binary);
    o.write(buf.data(), long(buf.size()));
  }
  CHECK_THROWS_AS(Checkpoint::load(path), IoError);
  std::remove(path);
}

TEST_CASE("checkpoint load_params rejects shape mismatch") {
  RngStream rng(18);
  ParamStore a;
  a.create("w", Tensor::randn({2, 2}, rng));
  Checkpoint ck;
  ck.add_params(a);
  ParamStore b;
  b.create("w", Tensor::randn({3, 2}, rng));
  CHECK_THROWS_AS(ck.load_params(b), IoError);
}
