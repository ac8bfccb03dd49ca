#include "motionlab/dataset.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace mlab {

namespace {

void put_bytes(std::vector<char>& buf, const void* p, size_t n) {
  const char* c = static_cast<const char*>(p);
  buf.insert(buf.end(), c, c + n);
}

template <typename T>
void put_pod(std::vector<char>& buf, T v) {
  put_bytes(buf, &v, sizeof(T));
}

struct Reader {
  const std::vector<char>& buf;
  size_t pos = 0;
  const std::string& what;
  void take(void* p, size_t n) {
    if (pos + n > buf.size()) throw IoError("dataset: truncated file: " + what);
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  template <typename T>
  T pod() {
    T v;
    take(&v, sizeof(T));
    return v;
  }
};

std::vector<char> serialize_record(const Sample& s) {
  std::vector<char> payload;
  const int T = s.motion.length();
  put_pod<uint32_t>(payload, uint32_t(T));
  put_bytes(payload, s.motion.frames.data.data(), size_t(T) * kMotionDim * sizeof(float));
  put_pod<uint32_t>(payload, uint32_t(s.prompt.ids.size()));
  for (int id : s.prompt.ids) put_pod<int32_t>(payload, int32_t(id));
  put_pod<uint32_t>(payload, uint32_t(s.prompt.surface.size()));
  put_bytes(payload, s.prompt.surface.data(), s.prompt.surface.size());
  put_pod<float>(payload, s.script.intensity);
  put_pod<uint32_t>(payload, uint32_t(s.script.segments.size()));
  for (const auto& seg : s.script.segments) {
    put_pod<uint8_t>(payload, uint8_t(seg.primitive));
    put_pod<uint32_t>(payload, uint32_t(seg.duration));
    put_pod<uint32_t>(payload, uint32_t(seg.count));
    put_pod<float>(payload, seg.amplitude);
  }
  return payload;
}

Sample parse_record(Reader& r) {
  Sample s;
  const uint32_t T = r.pod<uint32_t>();
  s.motion.frames = Tensor({int(T), kMotionDim});
  r.take(s.motion.frames.data.data(), size_t(T) * kMotionDim * sizeof(float));
  const uint32_t nt = r.pod<uint32_t>();
  s.prompt.ids.resize(nt);
  for (auto& id : s.prompt.ids) id = int(r.pod<int32_t>());
  const uint32_t sl = r.pod<uint32_t>();
  s.prompt.surface.resize(sl);
  r.take(s.prompt.surface.data(), sl);
  s.script.intensity = r.pod<float>();
  const uint32_t ns = r.pod<uint32_t>();
  s.script.segments.resize(ns);
  for (auto& seg : s.script.segments) {
    seg.primitive = Primitive(r.pod<uint8_t>());
    seg.duration = int(r.pod<uint32_t>());
    seg.count = int(r.pod<uint32_t>());
    seg.amplitude = r.pod<float>();
  }
  return s;
}

}  // namespace

Sample generate_sample(uint64_t seed, const DifficultySpec& spec) {
  RngStream rng(mix_seed(seed, 0x5a6d7065ULL));
  Sample s;
  s.script = sample_script(rng, spec);
  s.prompt = describe_script(s.script, rng);
  RngStream noise = rng.fork(1);
  s.motion = render_script(s.script, noise);
  return s;
}

std::vector<char> DatasetFile::serialize() const {
  std::vector<char> buf;
  put_bytes(buf, "MLABDAT1", 8);
  put_pod<uint32_t>(buf, kVersion);
  put_pod<uint64_t>(buf, seed);
  put_pod<uint64_t>(buf, vocab_hash);
  put_pod<uint32_t>(buf, uint32_t(records.size()));
  put_pod<uint32_t>(buf, uint32_t(kMotionDim));
  for (const auto& rec : records) {
    auto payload = serialize_record(rec);
    put_pod<uint32_t>(buf, uint32_t(payload.size()));
    put_bytes(buf, payload.data(), payload.size());
    put_pod<uint64_t>(buf, fnv1a(payload.data(), payload.size()));
  }
  put_pod<uint64_t>(buf, fnv1a(buf.data(), buf.size()));
  return buf;
}

void DatasetFile::save(const std::string& path) const {
  auto buf = serialize();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("dataset: cannot open for write: " + path);
  f.write(buf.data(), long(buf.size()));
  if (!f) throw IoError("dataset: write failed: " + path);
}

DatasetFile DatasetFile::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("dataset: cannot open: " + path);
  std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 40) throw IoError("dataset: truncated file: " + path);
  uint64_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
  if (fnv1a(buf.data(), buf.size() - 8) != stored)
    throw IoError("dataset: file checksum mismatch: " + path);
  Reader r{buf, 0, path};
  char magic[8];
  r.take(magic, 8);
  if (std::memcmp(magic, "MLABDAT1", 8) != 0) throw IoError("dataset: bad magic: " + path);
  DatasetFile d;
  const uint32_t ver = r.pod<uint32_t>();
  if (ver != kVersion) throw IoError(format("dataset: unsupported version %u", ver));
  d.seed = r.pod<uint64_t>();
  d.vocab_hash = r.pod<uint64_t>();
  const uint32_t n = r.pod<uint32_t>();
  const uint32_t dim = r.pod<uint32_t>();
  if (dim != uint32_t(kMotionDim))
    throw IoError(format("dataset: motion dim %u unsupported", dim));
  d.records.reserve(n);
  for (uint32_t i = 0; i < n; ++i) {
    const uint32_t len = r.pod<uint32_t>();
    if (r.pos + len + 8 > buf.size()) throw IoError("dataset: truncated record: " + path);
    const uint64_t want = fnv1a(buf.data() + r.pos, len);
    Reader rr{buf, r.pos, path};
    d.records.push_back(parse_record(rr));
    if (rr.pos - r.pos != len) throw IoError("dataset: record length mismatch: " + path);
    r.pos = rr.pos;
    if (r.pod<uint64_t>() != want) throw IoError("dataset: record checksum mismatch: " + path);
  }
  return d;
}

uint64_t DatasetFile::content_hash() const {
  auto buf = serialize();
  return fnv1a(buf.data(), buf.size());
}

DatasetSplits build_dataset(uint64_t seed, int n_train, int n_val, int n_test,
                            const DifficultySpec& spec) {
  if (n_train < 1 || n_val < 1 || n_test < 1)
    throw ConfigError("build_dataset: split sizes must be >= 1");
  DatasetSplits out;
  const uint64_t vh = Vocabulary::standard().hash();
  auto fill = [&](DatasetFile& d, int split_idx, int n) {
    d.seed = mix_seed(seed, uint64_t(split_idx));
    d.vocab_hash = vh;
    d.records.reserve(size_t(n));
    for (int i = 0; i < n; ++i) d.records.push_back(generate_sample(mix_seed(d.seed, uint64_t(i)), spec));
  };
  fill(out.train, 1, n_train);
  fill(out.val, 2, n_val);
  fill(out.test, 3, n_test);
  return out;
}

std::string record_to_json(const Sample& s) {
  nlohmann::json j;
  j["text"] = s.prompt.surface;
  j["token_ids"] = s.prompt.ids;
  j["intensity"] = s.script.intensity;
  j["num_frames"] = s.motion.length();
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& seg : s.script.segments) {
    segs.push_back({{"primitive", primitive_name(seg.primitive)},
                    {"duration", seg.duration},
                    {"count", seg.count},
                    {"amplitude", seg.amplitude}});
  }
  j["script"] = segs;
  nlohmann::json frames = nlohmann::json::array();
  for (int t = 0; t < s.motion.length(); ++t) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < kMotionDim; ++c) row.push_back(s.motion.frames.at(t, c));
    frames.push_back(row);
  }
  j["frames"] = frames;
  return j.dump(2);
}

std::string label_histogram_csv(const DatasetFile& data) {
  std::vector<long> counts(kNumPrimitives, 0);
  for (const auto& rec : data.records)
    for (const auto& seg : rec.script.segments) ++counts[size_t(seg.primitive)];
  std::ostringstream ss;
  ss << "primitive,count\n";
  for (int i = 0; i < kNumPrimitives; ++i)
    ss << primitive_name(Primitive(i)) << "," << counts[size_t(i)] << "\n";
  return ss.str();
}

}  // namespace mlab
