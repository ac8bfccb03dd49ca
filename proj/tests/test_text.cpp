#include <set>

#include "doctest.h"
#include "motionlab/dataset.hpp"
#include "motionlab/text.hpp"

using namespace mlab;

TEST_CASE("vocabulary is closed, dense and stable") {
  const Vocabulary& v = Vocabulary::standard();
  CHECK(v.size() > 60);
  CHECK(v.id("<pad>") == Vocabulary::kPad);
  CHECK(v.id("<mask>") == Vocabulary::kMask);
  for (int i = 0; i < v.size(); ++i) CHECK(v.id(v.word(i)) == i);
  CHECK(v.hash() == Vocabulary::standard().hash());
  CHECK_THROWS_AS(v.id("backflip"), ConfigError);
}

TEST_CASE("tokenize/detokenize round-trips every generated caption") {
  const Vocabulary& v = Vocabulary::standard();
  auto spec = DifficultySpec::standard();
  for (int i = 0; i < 500; ++i) {
    Sample s = generate_sample(uint64_t(31000 + i), spec);
    CHECK(s.prompt.ids.front() == Vocabulary::kBos);
    CHECK(s.prompt.ids.back() == Vocabulary::kEos);
    CHECK(v.detokenize(s.prompt.ids) == s.prompt.surface);
    CHECK(v.tokenize(s.prompt.surface) == s.prompt.ids);
  }
}

TEST_CASE("structured mask ratio 1 masks exactly the tagged words") {
  const Vocabulary& v = Vocabulary::standard();
  TextPrompt p;
  p.surface = "the agent waves the left arm";
  p.ids = v.tokenize(p.surface);
  RngStream rng(9);
  MaskedPrompt m = structured_mask(p, rng, 1.0);
  REQUIRE(m.masked.size() == 3);
  std::set<std::string> masked_words;
  for (auto [pos, orig] : m.masked) {
    masked_words.insert(v.word(orig));
    CHECK(m.ids[size_t(pos)] == Vocabulary::kMask);
  }
  CHECK(masked_words == std::set<std::string>{"waves", "left", "arm"});
}

TEST_CASE("structured mask: connective-only prompt is flagged empty") {
  const Vocabulary& v = Vocabulary::standard();
  TextPrompt p;
  p.surface = "the person and the agent";
  p.ids = v.tokenize(p.surface);
  RngStream rng(1);
  MaskedPrompt m = structured_mask(p, rng, 0.5);
  CHECK(m.no_candidates);
  CHECK(m.masked.empty());
  CHECK(m.ids == p.ids);
}

TEST_CASE("structured mask is deterministic per seed and never hits untagged tokens") {
  const Vocabulary& v = Vocabulary::standard();
  auto spec = DifficultySpec::standard();
  for (int i = 0; i < 200; ++i) {
    Sample s = generate_sample(uint64_t(8000 + i), spec);
    RngStream r1{uint64_t(i)}, r2{uint64_t(i)};
    MaskedPrompt a = structured_mask(s.prompt, r1, 0.4);
    MaskedPrompt b = structured_mask(s.prompt, r2, 0.4);
    CHECK(a.ids == b.ids);
    CHECK(!a.masked.empty());  // every caption has at least one tagged word
    for (auto [pos, orig] : a.masked) CHECK(v.maskable(orig));
  }
  RngStream r(0);
  CHECK_THROWS_AS(structured_mask(TextPrompt{}, r, 0.0), ConfigError);
}

TEST_CASE("caption verbs correspond to observable kinematics") {
  // every tagged count word in a caption equals a countable oracle outcome
  auto spec = DifficultySpec::standard();
  spec.allowed = {Primitive::kJump};
  spec.min_primitives = spec.max_primitives = 1;
  for (int i = 0; i < 50; ++i) {
    Sample s = generate_sample(uint64_t(91000 + i), spec);
    int expected = 0;
    for (const auto& seg : s.script.segments) expected += seg.count;
    const int peaks = count_pulses(root_height(s.motion), 0.05, 0.12);
    CHECK(peaks == expected);
  }
}
