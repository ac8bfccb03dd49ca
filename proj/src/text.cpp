#include "motionlab/text.hpp"

#include <algorithm>
#include <sstream>

namespace mlab {

namespace {

struct TemplateWord {
  const char* word;
  WordTag tag;
};

// Every surface form the caption generator can emit, with its category.
// Tags must reflect observable kinematics: verbs name the primitive family,
// directions name displacement/heading signs, counts name repetition numbers.
const TemplateWord kLexicon[] = {
    // subjects / glue
    {"the", WordTag::kConnective}, {"a", WordTag::kConnective},
    {"person", WordTag::kConnective}, {"agent", WordTag::kConnective},
    {"figure", WordTag::kConnective}, {"character", WordTag::kConnective},
    {"dancer", WordTag::kConnective}, {"robot", WordTag::kConnective},
    {"then", WordTag::kConnective}, {"and", WordTag::kConnective},
    {"next", WordTag::kConnective}, {"afterwards", WordTag::kConnective},
    {"to", WordTag::kConnective}, {"in", WordTag::kConnective},
    {"with", WordTag::kConnective}, {"on", WordTag::kConnective},
    {"while", WordTag::kConnective}, {"finally", WordTag::kConnective},
    // idle
    {"stands", WordTag::kActionVerb}, {"remains", WordTag::kActionVerb},
    {"stays", WordTag::kActionVerb}, {"pauses", WordTag::kActionVerb},
    {"rests", WordTag::kActionVerb},
    {"still", WordTag::kOther}, {"place", WordTag::kOther},
    {"motionless", WordTag::kOther}, {"spot", WordTag::kOther},
    // locomotion
    {"walks", WordTag::kActionVerb}, {"strolls", WordTag::kActionVerb},
    {"marches", WordTag::kActionVerb}, {"steps", WordTag::kActionVerb},
    {"moves", WordTag::kActionVerb}, {"paces", WordTag::kActionVerb},
    {"forward", WordTag::kDirection}, {"forwards", WordTag::kDirection},
    {"ahead", WordTag::kDirection}, {"backward", WordTag::kDirection},
    {"backwards", WordTag::kDirection}, {"back", WordTag::kDirection},
    // turns
    {"turns", WordTag::kActionVerb}, {"rotates", WordTag::kActionVerb},
    {"pivots", WordTag::kActionVerb},
    {"left", WordTag::kDirection}, {"right", WordTag::kDirection},
    {"leftward", WordTag::kDirection}, {"rightward", WordTag::kDirection},
    {"around", WordTag::kDirection},
    // jump
    {"jumps", WordTag::kActionVerb}, {"hops", WordTag::kActionVerb},
    {"leaps", WordTag::kActionVerb}, {"bounces", WordTag::kActionVerb},
    {"up", WordTag::kDirection},
    // wave
    {"waves", WordTag::kActionVerb}, {"swings", WordTag::kActionVerb},
    {"shakes", WordTag::kActionVerb},
    {"arm", WordTag::kBodyPart}, {"hand", WordTag::kBodyPart},
    // crouch
    {"crouches", WordTag::kActionVerb}, {"squats", WordTag::kActionVerb},
    {"ducks", WordTag::kActionVerb}, {"kneels", WordTag::kActionVerb},
    {"down", WordTag::kDirection}, {"low", WordTag::kDirection},
    // spin
    {"spins", WordTag::kActionVerb}, {"twirls", WordTag::kActionVerb},
    {"whirls", WordTag::kActionVerb},
    {"circle", WordTag::kOther}, {"full", WordTag::kOther},
    // counts
    {"once", WordTag::kCount}, {"twice", WordTag::kCount},
    {"thrice", WordTag::kCount}, {"one", WordTag::kCount},
    {"two", WordTag::kCount}, {"three", WordTag::kCount},
    {"four", WordTag::kCount}, {"times", WordTag::kCount},
    {"time", WordTag::kCount},
};

using Words = std::vector<std::string>;

Words pick(RngStream& rng, std::initializer_list<Words> options) {
  std::vector<Words> opts(options);
  return opts[size_t(rng.uniform_int(uint64_t(opts.size())))];
}

Words count_words(int n, RngStream& rng) {
  switch (n) {
    case 1:
      return pick(rng, {{"once"}, {"one", "time"}});
    case 2:
      return pick(rng, {{"twice"}, {"two", "times"}});
    case 3:
      return pick(rng, {{"three", "times"}, {"thrice"}});
    default:
      return {"four", "times"};
  }
}

void append(Words& out, const Words& w) { out.insert(out.end(), w.begin(), w.end()); }

Words segment_words(const ScriptSegment& seg, RngStream& rng) {
  Words out;
  switch (seg.primitive) {
    case Primitive::kIdle:
      append(out, pick(rng, {{"stands", "still"},
                             {"stays", "in", "place"},
                             {"remains", "motionless"},
                             {"pauses", "on", "the", "spot"},
                             {"rests", "in", "place"}}));
      break;
    case Primitive::kWalkForward:
      append(out, pick(rng, {{"walks", "forward"},
                             {"walks", "ahead"},
                             {"strolls", "forwards"},
                             {"marches", "forward"},
                             {"steps", "forward"},
                             {"moves", "ahead"},
                             {"paces", "forward"}}));
      break;
    case Primitive::kWalkBackward:
      append(out, pick(rng, {{"walks", "backward"},
                             {"walks", "back"},
                             {"steps", "backwards"},
                             {"moves", "backward"},
                             {"paces", "back"}}));
      break;
    case Primitive::kTurnLeft:
      append(out, pick(rng, {{"turns", "left"},
                             {"turns", "to", "the", "left"},
                             {"rotates", "leftward"},
                             {"pivots", "left"}}));
      break;
    case Primitive::kTurnRight:
      append(out, pick(rng, {{"turns", "right"},
                             {"turns", "to", "the", "right"},
                             {"rotates", "rightward"},
                             {"pivots", "right"}}));
      break;
    case Primitive::kJump: {
      append(out, pick(rng, {{"jumps"}, {"hops"}, {"leaps"}, {"bounces"}, {"jumps", "up"}}));
      append(out, count_words(seg.count, rng));
      break;
    }
    case Primitive::kWaveLeft:
    case Primitive::kWaveRight: {
      const char* side = seg.primitive == Primitive::kWaveLeft ? "left" : "right";
      Words part = pick(rng, {{"arm"}, {"hand"}});
      Words verb = pick(rng, {{"waves"}, {"swings"}, {"shakes"}});
      append(out, verb);
      append(out, {"the", side});
      append(out, part);
      append(out, count_words(seg.count, rng));
      break;
    }
    case Primitive::kCrouch:
      append(out, pick(rng, {{"crouches", "down"},
                             {"crouches", "low"},
                             {"squats", "down"},
                             {"ducks", "low"},
                             {"kneels", "down"}}));
      break;
    case Primitive::kSpin: {
      append(out, pick(rng, {{"spins", "around"},
                             {"twirls", "around"},
                             {"whirls", "in", "a", "full", "circle"},
                             {"spins", "in", "a", "circle"}}));
      append(out, count_words(seg.count, rng));
      break;
    }
  }
  return out;
}

}  // namespace

Vocabulary build_standard_vocabulary() {
  Vocabulary v;
  v.add("<pad>", WordTag::kSpecial);
  v.add("<mask>", WordTag::kSpecial);
  v.add("<bos>", WordTag::kSpecial);
  v.add("<eos>", WordTag::kSpecial);
  std::vector<TemplateWord> sorted(std::begin(kLexicon), std::end(kLexicon));
  std::sort(sorted.begin(), sorted.end(),
            [](const TemplateWord& a, const TemplateWord& b) {
              return std::string_view(a.word) < std::string_view(b.word);
            });
  for (const auto& w : sorted) v.add(w.word, w.tag);
  return v;
}

const char* word_tag_name(WordTag t) {
  switch (t) {
    case WordTag::kSpecial: return "special";
    case WordTag::kActionVerb: return "action-verb";
    case WordTag::kBodyPart: return "body-part";
    case WordTag::kDirection: return "direction";
    case WordTag::kCount: return "count";
    case WordTag::kConnective: return "connective";
    case WordTag::kOther: return "other";
  }
  return "?";
}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary v = build_standard_vocabulary();
  return v;
}

void Vocabulary::add(const std::string& w, WordTag t) {
  if (by_word_.count(w)) return;
  by_word_[w] = int(words_.size());
  words_.push_back(w);
  tags_.push_back(t);
}

int Vocabulary::id(const std::string& word) const {
  auto it = by_word_.find(word);
  if (it == by_word_.end()) throw ConfigError("word not in vocabulary: " + word);
  return it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) throw ConfigError(format("word id %d out of range", id));
  return words_[size_t(id)];
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
  std::vector<int> ids = {kBos};
  std::istringstream ss(text);
  std::string w;
  while (ss >> w) ids.push_back(id(w));
  ids.push_back(kEos);
  return ids;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int i : ids) {
    if (i == kBos || i == kEos || i == kPad) continue;
    if (!out.empty()) out += ' ';
    out += word(i);
  }
  return out;
}

uint64_t Vocabulary::hash() const { return fnv1a(serialize()); }

std::string Vocabulary::serialize() const {
  std::string s;
  for (int i = 0; i < size(); ++i) {
    s += words_[size_t(i)];
    s += '\t';
    s += word_tag_name(tags_[size_t(i)]);
    s += '\n';
  }
  return s;
}

TextPrompt describe_script(const MotionScript& script, RngStream& rng) {
  const Vocabulary& v = Vocabulary::standard();
  Words words;
  append(words, pick(rng, {{"the", "person"},
                           {"the", "agent"},
                           {"the", "figure"},
                           {"a", "character"},
                           {"the", "dancer"},
                           {"a", "robot"}}));
  for (size_t i = 0; i < script.segments.size(); ++i) {
    if (i > 0)
      append(words, pick(rng, {{"then"}, {"and", "then"}, {"and"}, {"next"}, {"afterwards"}}));
    append(words, segment_words(script.segments[i], rng));
  }
  TextPrompt p;
  for (size_t i = 0; i < words.size(); ++i) {
    if (i) p.surface += ' ';
    p.surface += words[i];
  }
  p.ids = v.tokenize(p.surface);
  return p;
}

MaskedPrompt structured_mask(const TextPrompt& prompt, RngStream& rng, double ratio,
                             const Vocabulary& vocab) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ConfigError("structured_mask: ratio must be in (0,1]");
  MaskedPrompt out;
  out.ids = prompt.ids;
  std::vector<int> candidates;
  for (size_t i = 0; i < prompt.ids.size(); ++i)
    if (vocab.maskable(prompt.ids[i])) candidates.push_back(int(i));
  if (candidates.empty()) {
    out.no_candidates = true;
    return out;
  }
  int want = int(std::ceil(ratio * double(candidates.size())));
  want = std::max(1, std::min(want, int(candidates.size())));
  std::vector<int> chosen = rng.sample_indices(int(candidates.size()), want);
  std::sort(chosen.begin(), chosen.end());
  for (int c : chosen) {
    const int pos = candidates[size_t(c)];
    out.masked.emplace_back(pos, prompt.ids[size_t(pos)]);
    out.ids[size_t(pos)] = Vocabulary::kMask;
  }
  return out;
}

}  // namespace mlab
