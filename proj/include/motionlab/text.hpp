// text.hpp — closed vocabulary, caption templates, structured masking.
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "motionlab/motion.hpp"
#include "motionlab/rng.hpp"

namespace mlab {

enum class WordTag : uint8_t {
  kSpecial = 0,
  kActionVerb,
  kBodyPart,
  kDirection,
  kCount,
  kConnective,
  kOther,
};

const char* word_tag_name(WordTag t);

// Closed word list with category tags and dense, serialization-stable ids.
// Specials occupy ids 0..3.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kMask = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;

  static const Vocabulary& standard();

  int size() const { return int(words_.size()); }
  int id(const std::string& word) const;
  bool contains(const std::string& word) const { return by_word_.count(word) > 0; }
  const std::string& word(int id) const;
  WordTag tag(int id) const { return tags_[size_t(id)]; }
  bool maskable(int id) const {
    WordTag t = tag(id);
    return t == WordTag::kActionVerb || t == WordTag::kBodyPart || t == WordTag::kDirection ||
           t == WordTag::kCount;
  }

  // ids including BOS/EOS wrapper.
  std::vector<int> tokenize(const std::string& text) const;
  std::string detokenize(const std::vector<int>& ids) const;

  uint64_t hash() const;
  std::string serialize() const;  // one "word<tab>tag" line per entry

 private:
  friend Vocabulary build_standard_vocabulary();
  void add(const std::string& w, WordTag t);
  std::vector<std::string> words_;
  std::vector<WordTag> tags_;
  std::unordered_map<std::string, int> by_word_;
};

struct TextPrompt {
  std::vector<int> ids;  // BOS ... EOS
  std::string surface;
};

// Deterministic template realization of a script (synonyms chosen by rng).
TextPrompt describe_script(const MotionScript& script, RngStream& rng);

struct MaskedPrompt {
  std::vector<int> ids;                           // with kMask substitutions
  std::vector<std::pair<int, int>> masked;        // (position, original id)
  bool no_candidates = false;                     // flagged when nothing maskable
};

// Masks only tagged content words (verbs, body parts, directions, counts).
// At least one mask whenever any candidate exists; specials and connectives
// are never masked.
MaskedPrompt structured_mask(const TextPrompt& prompt, RngStream& rng, double ratio,
                             const Vocabulary& vocab = Vocabulary::standard());

}  // namespace mlab
