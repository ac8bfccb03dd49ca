// checkpoint.hpp — named-tensor container with version and checksum.
//
// Binary layout (little endian):
//   magic "MLABCKP1" | u32 version | u64 entry count
//   per entry: u32 name_len | name | u8 dtype (0=f32, 1=f64) | u8 rank
//              | u32 dims[rank] | raw row-major data
//   trailer: u64 fnv1a over all preceding bytes
// Round-trips bit-exactly.
#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "motionlab/nn.hpp"
#include "motionlab/tensor.hpp"

namespace mlab {

class Checkpoint {
 public:
  static constexpr uint32_t kVersion = 1;

  void add(const std::string& name, const Tensor& t) { entries_.emplace_back(name, t); }

  bool contains(const std::string& name) const {
    for (auto& [n, t] : entries_)
      if (n == name) return true;
    return false;
  }

  const Tensor& get(const std::string& name) const {
    for (auto& [n, t] : entries_)
      if (n == name) return t;
    throw IoError("checkpoint: missing tensor " + name);
  }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  void add_params(ParamStore& ps, const std::string& prefix = "") {
    for (auto* p : ps.all()) add(prefix + p->name, p->value);
  }

  // Loads values into existing parameters; shapes must match.
  void load_params(ParamStore& ps, const std::string& prefix = "") const {
    for (auto* p : ps.all()) {
      const Tensor& t = get(prefix + p->name);
      if (t.shape != p->value.shape)
        throw IoError("checkpoint: shape mismatch for " + p->name + ": file " +
                      shape_str(t.shape) + " vs model " + shape_str(p->value.shape));
      p->value.data = t.data;
    }
  }

  std::vector<char> serialize() const {
    std::vector<char> buf;
    auto put = [&](const void* p, size_t n) {
      const char* c = static_cast<const char*>(p);
      buf.insert(buf.end(), c, c + n);
    };
    put("MLABCKP1", 8);
    uint32_t ver = kVersion;
    put(&ver, 4);
    uint64_t cnt = entries_.size();
    put(&cnt, 8);
    for (const auto& [name, t] : entries_) {
      uint32_t nl = uint32_t(name.size());
      put(&nl, 4);
      put(name.data(), name.size());
      uint8_t dtype = 0;  // f32 (the store is float; f64 reserved)
      put(&dtype, 1);
      uint8_t rank = uint8_t(t.shape.size());
      put(&rank, 1);
      for (int d : t.shape) {
        uint32_t dd = uint32_t(d);
        put(&dd, 4);
      }
      put(t.data.data(), t.data.size() * sizeof(float));
    }
    uint64_t sum = fnv1a(buf.data(), buf.size());
    put(&sum, 8);
    return buf;
  }

  void save(const std::string& path) const {
    auto buf = serialize();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open for write: " + path);
    f.write(buf.data(), long(buf.size()));
    if (!f) throw IoError("checkpoint: write failed: " + path);
  }

  uint64_t content_hash() const {
    auto buf = serialize();
    return fnv1a(buf.data(), buf.size());
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open: " + path);
    std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse(buf, path);
  }

  static Checkpoint parse(const std::vector<char>& buf, const std::string& what) {
    if (buf.size() < 28) throw IoError("checkpoint: truncated file: " + what);
    size_t pos = 0;
    auto take = [&](void* p, size_t n) {
      if (pos + n > buf.size()) throw IoError("checkpoint: truncated file: " + what);
      std::memcpy(p, buf.data() + pos, n);
      pos += n;
    };
    char magic[8];
    take(magic, 8);
    if (std::memcmp(magic, "MLABCKP1", 8) != 0)
      throw IoError("checkpoint: bad magic in " + what);
    uint32_t ver;
    take(&ver, 4);
    if (ver != kVersion) throw IoError(format("checkpoint: unsupported version %u", ver));
    uint64_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
    if (fnv1a(buf.data(), buf.size() - 8) != stored)
      throw IoError("checkpoint: checksum mismatch in " + what);
    uint64_t cnt;
    take(&cnt, 8);
    Checkpoint ck;
    for (uint64_t i = 0; i < cnt; ++i) {
      uint32_t nl;
      take(&nl, 4);
      std::string name(nl, '\0');
      take(name.data(), nl);
      uint8_t dtype, rank;
      take(&dtype, 1);
      take(&rank, 1);
      if (dtype != 0) throw IoError("checkpoint: unsupported dtype in " + what);
      Shape sh(rank);
      for (auto& d : sh) {
        uint32_t dd;
        take(&dd, 4);
        d = int(dd);
      }
      Tensor t(sh);
      take(t.data.data(), t.data.size() * sizeof(float));
      ck.entries_.emplace_back(std::move(name), std::move(t));
    }
    return ck;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

inline uint64_t file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for hashing: " + path);
  uint64_t h = kFnvOffset;
  char chunk[65536];
  while (f) {
    f.read(chunk, sizeof(chunk));
    h = fnv1a(chunk, size_t(f.gcount()), h);
  }
  return h;
}

}  // namespace mlab
