// dataset.hpp — paired (motion, caption, script) corpus with a binary
// on-disk container. Regeneration from (version, seed) is byte-identical.
#pragma once

#include <string>
#include <vector>

#include "motionlab/motion.hpp"
#include "motionlab/text.hpp"

namespace mlab {

struct Sample {
  MotionSequence motion;
  TextPrompt prompt;
  MotionScript script;
};

// Script + caption + rendered frames, all derived from one seed.
Sample generate_sample(uint64_t seed, const DifficultySpec& spec);

struct DatasetFile {
  static constexpr uint32_t kVersion = 1;

  uint64_t seed = 0;
  uint64_t vocab_hash = 0;
  std::vector<Sample> records;

  void save(const std::string& path) const;
  static DatasetFile load(const std::string& path);  // verifies all checksums
  uint64_t content_hash() const;
  std::vector<char> serialize() const;
};

struct DatasetSplits {
  DatasetFile train, val, test;
};

// Disjoint per-split seed streams derived from the master seed; identical
// vocabulary across splits.
DatasetSplits build_dataset(uint64_t seed, int n_train, int n_val, int n_test,
                            const DifficultySpec& spec = DifficultySpec::standard());

// Single-record JSON export for inspection.
std::string record_to_json(const Sample& s);
// Primitive frequency histogram as CSV ("primitive,count\n" rows).
std::string label_histogram_csv(const DatasetFile& data);

}  // namespace mlab
