#include <algorithm>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "motionlab/dataset.hpp"

using namespace mlab;

TEST_CASE("idle script renders constant frames up to noise") {
  MotionScript s;
  s.segments.push_back({Primitive::kIdle, 40, 1, 1.0f});
  RngStream noise(3);
  MotionSequence m = render_script(s, noise);
  CHECK(m.length() == 40);
  for (int t = 0; t < 40; ++t)
    for (int c = 0; c < kMotionDim; ++c)
      CHECK(std::abs(double(m.frames.at(t, c)) - double(m.frames.at(0, c))) < 0.07);
}

TEST_CASE("same seed renders byte-identical samples") {
  auto spec = DifficultySpec::standard();
  Sample a = generate_sample(1234, spec);
  Sample b = generate_sample(1234, spec);
  CHECK(a.motion.frames.data == b.motion.frames.data);
  CHECK(a.prompt.surface == b.prompt.surface);
  CHECK(a.prompt.ids == b.prompt.ids);
  Sample c = generate_sample(1235, spec);
  CHECK(a.motion.frames.data != c.motion.frames.data);
}

TEST_CASE("jump count=2 gives exactly two root-height peaks") {
  MotionScript s;
  s.segments.push_back({Primitive::kJump, 48, 2, 1.0f});
  RngStream noise(7);
  MotionSequence m = render_script(s, noise);
  CHECK(count_pulses(root_height(m), 0.05, 0.12) == 2);
  std::string why;
  CHECK(script_oracle(s, m, &why));
}

TEST_CASE("rendered scripts satisfy their oracles and invariants") {
  auto spec = DifficultySpec::standard();
  int oracle_pass = 0;
  const int N = 300;
  for (int i = 0; i < N; ++i) {
    Sample s = generate_sample(uint64_t(10000 + i), spec);
    const int T = s.motion.length();
    CHECK(T >= kMinFrames);
    CHECK(T <= kMaxFrames);
    CHECK(T % 4 == 0);
    MotionStats st = motion_stats(s.motion);
    CHECK(st.max_joint_step <= kVelocityBound);
    CHECK(st.min_coord >= -kPositionBound);
    CHECK(st.max_coord <= kPositionBound);
    std::string why;
    if (script_oracle(s.script, s.motion, &why))
      ++oracle_pass;
    else
      MESSAGE("oracle miss seed ", 10000 + i, ": ", why, " [", s.prompt.surface, "]");
  }
  CHECK(oracle_pass == N);
}

TEST_CASE("velocity bound holds over 1k seeds") {
  auto spec = DifficultySpec::standard();
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    Sample s = generate_sample(uint64_t(777000 + i), spec);
    worst = std::max(worst, motion_stats(s.motion).max_joint_step);
  }
  MESSAGE("worst per-frame joint step ", worst);
  CHECK(worst <= kVelocityBound);
}

TEST_CASE("build_dataset produces requested counts and verifiable files") {
  auto splits = build_dataset(42, 800, 50, 150);
  CHECK(splits.train.records.size() == 800);
  CHECK(splits.val.records.size() == 50);
  CHECK(splits.test.records.size() == 150);
  CHECK(splits.train.vocab_hash == splits.test.vocab_hash);
  CHECK(splits.train.seed != splits.test.seed);

  const char* path = "ds_roundtrip.bin";
  splits.val.save(path);
  DatasetFile back = DatasetFile::load(path);
  CHECK(back.records.size() == 50);
  CHECK(back.records[7].prompt.surface == splits.val.records[7].prompt.surface);
  CHECK(back.records[7].motion.frames.data == splits.val.records[7].motion.frames.data);
  CHECK(back.content_hash() == splits.val.content_hash());

  // regeneration from the same seed is byte-identical
  auto again = build_dataset(42, 800, 50, 150);
  CHECK(again.val.serialize() == splits.val.serialize());

  // corruption detected
  {
    std::ifstream f(path, std::ios::binary);
    std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    buf[buf.size() / 3] ^= 0x11;
    std::ofstream o(path, std::ios::binary);
    o.write(buf.data(), long(buf.size()));
  }
  CHECK_THROWS_AS(DatasetFile::load(path), IoError);
  std::remove(path);

  CHECK_THROWS_AS(build_dataset(1, 0, 1, 1), ConfigError);
}

TEST_CASE("primitive histogram near uniform over 10k samples") {
  auto spec = DifficultySpec::standard();
  DatasetFile d;
  for (int i = 0; i < 10000; ++i)
    d.records.push_back(generate_sample(mix_seed(5150, uint64_t(i)), spec));
  std::vector<long> counts(kNumPrimitives, 0);
  long total = 0;
  for (const auto& r : d.records)
    for (const auto& seg : r.script.segments) {
      ++counts[size_t(seg.primitive)];
      ++total;
    }
  const double uniform = double(total) / kNumPrimitives;
  for (int p = 0; p < kNumPrimitives; ++p) {
    INFO("primitive ", primitive_name(Primitive(p)), " count ", counts[size_t(p)], " uniform ",
         uniform);
    CHECK(double(counts[size_t(p)]) > 0.8 * uniform);
    CHECK(double(counts[size_t(p)]) < 1.2 * uniform);
  }
  // CSV export carries one row per primitive
  std::string csv = label_histogram_csv(d);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == kNumPrimitives + 1);
}

TEST_CASE("empty primitive set rejected") {
  DifficultySpec spec;
  RngStream rng(1);
  CHECK_THROWS_AS(sample_script(rng, spec), ConfigError);
}

TEST_CASE("upsample: constant motion stays constant, length scales") {
  MotionSequence x;
  x.frames = Tensor::full({6, kMotionDim}, 2.5f);
  MotionSequence y = upsample_motion(x, 4);
  CHECK(y.length() == 24);
  for (float v : y.frames.data) CHECK(v == doctest::Approx(2.5f));
  CHECK_THROWS_AS(upsample_motion(x, 3), ConfigError);
}

TEST_CASE("upsample two-frame ramp hits the endpoint-preserving grid") {
  MotionSequence x;
  x.frames = Tensor({2, kMotionDim});
  for (int c = 0; c < kMotionDim; ++c) {
    x.frames.at(0, c) = 0.0f;
    x.frames.at(1, c) = 1.0f;
  }
  MotionSequence y = upsample_motion(x, 2);
  REQUIRE(y.length() == 4);
  const double expect[4] = {0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  for (int t = 0; t < 4; ++t)
    CHECK(double(y.frames.at(t, 0)) == doctest::Approx(expect[t]).epsilon(1e-6));
}

TEST_CASE("downsample inverts upsample on linear grids; bounded error on rendered motion") {
  // globally linear signal: exact inverse
  MotionSequence lin;
  lin.frames = Tensor({8, kMotionDim});
  for (int t = 0; t < 8; ++t)
    for (int c = 0; c < kMotionDim; ++c) lin.frames.at(t, c) = float(0.5 * t + 0.1 * c);
  MotionSequence rec = downsample_motion(upsample_motion(lin, 4), 4);
  REQUIRE(rec.length() == 8);
  for (size_t i = 0; i < lin.frames.data.size(); ++i)
    CHECK(double(rec.frames.data[i]) == doctest::Approx(double(lin.frames.data[i])).epsilon(1e-5));

  // rendered motion: error bounded by curvature over one output step
  Sample s = generate_sample(2024, DifficultySpec::standard());
  MotionSequence r2 = downsample_motion(upsample_motion(s.motion, 4), 4);
  double worst = 0.0;
  for (size_t i = 0; i < s.motion.frames.data.size(); ++i)
    worst = std::max(worst, std::abs(double(r2.frames.data[i]) - double(s.motion.frames.data[i])));
  MESSAGE("round-trip worst abs err on rendered motion ", worst);
  CHECK(worst < 0.05);
}

TEST_CASE("record JSON export includes text, script and frames") {
  Sample s = generate_sample(5, DifficultySpec::standard());
  std::string j = record_to_json(s);
  CHECK(j.find("\"text\"") != std::string::npos);
  CHECK(j.find("\"frames\"") != std::string::npos);
  CHECK(j.find(primitive_name(s.script.segments[0].primitive)) != std::string::npos);
}
