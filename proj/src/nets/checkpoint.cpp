#include "gex/nets/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace gex::nets {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

class Writer {
 public:
  template <class U>
  void pod(U v) {
    const char* p = reinterpret_cast<const char*>(&v);
    out_.insert(out_.end(), p, p + sizeof v);
  }
  void str(const std::string& s) {
    pod(static_cast<uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void floats(const std::vector<float>& v) {
    const char* p = reinterpret_cast<const char*>(v.data());
    out_.insert(out_.end(), p, p + v.size() * sizeof(float));
  }
  void raw(const char* p, size_t n) { out_.insert(out_.end(), p, p + n); }
  std::vector<char> take() { return std::move(out_); }

 private:
  std::vector<char> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<char>& in) : in_(in) {}

  void need(size_t n, const char* what) {
    if (in_.size() - pos_ < n) {
      throw CheckpointTruncatedError("checkpoint truncated while reading " + std::string(what) +
                                     " at byte " + std::to_string(pos_));
    }
  }
  template <class U>
  U pod(const char* what) {
    need(sizeof(U), what);
    U v;
    std::memcpy(&v, in_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return v;
  }
  std::string str(const char* what) {
    const auto n = pod<uint32_t>(what);
    need(n, what);
    std::string s(in_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<float> floats(int64_t n, const char* what) {
    if (n < 0) throw CheckpointError("checkpoint: negative array size");
    need(static_cast<size_t>(n) * sizeof(float), what);
    std::vector<float> v(static_cast<size_t>(n));
    std::memcpy(v.data(), in_.data() + pos_, v.size() * sizeof(float));
    pos_ += v.size() * sizeof(float);
    return v;
  }
  size_t pos() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<char>& in_;
  size_t pos_ = 0;
};

}  // namespace

std::vector<char> serialize(const Checkpoint& c) {
  Writer w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.pod<uint32_t>(c.version);
  w.str(c.profile);
  w.pod<int64_t>(c.frames);
  w.pod<uint8_t>(c.girm_trained ? 1 : 0);
  w.pod<int64_t>(c.girm_phases);
  w.pod<double>(c.ema);
  w.pod<double>(c.emv);
  w.pod<int64_t>(c.normalizer_steps);
  w.pod<uint32_t>(static_cast<uint32_t>(c.rng_states.size()));
  for (const auto& [name, state] : c.rng_states) {
    w.str(name);
    w.str(state);
  }
  w.pod<uint32_t>(static_cast<uint32_t>(c.stores.size()));
  for (const auto& [store_name, store] : c.stores) {
    w.str(store_name);
    w.pod<uint32_t>(static_cast<uint32_t>(store.size()));
    for (const auto& e : store.entries()) {
      w.str(e.name);
      w.pod<uint8_t>(e.trainable ? 1 : 0);
      w.pod<int64_t>(e.step);
      w.pod<uint32_t>(static_cast<uint32_t>(e.value.shape.size()));
      for (int64_t d : e.value.shape) w.pod<int64_t>(d);
      w.floats(e.value.data);
      w.floats(e.m.data);
      w.floats(e.v.data);
    }
  }
  return w.take();
}

Checkpoint deserialize(const std::vector<char>& bytes) {
  if (bytes.size() < sizeof kCheckpointMagic ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw CheckpointHeaderError("not a checkpoint: bad magic header");
  }
  Reader r(bytes);
  for (size_t i = 0; i < sizeof kCheckpointMagic; ++i) r.pod<char>("magic");
  Checkpoint c;
  c.version = r.pod<uint32_t>("version");
  if (c.version != kCheckpointVersion) {
    throw CheckpointVersionError("checkpoint version " + std::to_string(c.version) +
                                 " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  }
  c.profile = r.str("profile");
  c.frames = r.pod<int64_t>("frames");
  c.girm_trained = r.pod<uint8_t>("girm flag") != 0;
  c.girm_phases = r.pod<int64_t>("girm phases");
  c.ema = r.pod<double>("ema");
  c.emv = r.pod<double>("emv");
  c.normalizer_steps = r.pod<int64_t>("normalizer steps");
  const auto n_rng = r.pod<uint32_t>("rng count");
  for (uint32_t i = 0; i < n_rng; ++i) {
    std::string name = r.str("rng name");
    std::string state = r.str("rng state");
    c.rng_states.emplace_back(std::move(name), std::move(state));
  }
  const auto n_stores = r.pod<uint32_t>("store count");
  for (uint32_t s = 0; s < n_stores; ++s) {
    std::string store_name = r.str("store name");
    graph::ParamStore<float> store;
    const auto n_entries = r.pod<uint32_t>("entry count");
    for (uint32_t k = 0; k < n_entries; ++k) {
      std::string name = r.str("parameter name");
      const bool trainable = r.pod<uint8_t>("trainable flag") != 0;
      const auto step = r.pod<int64_t>("step");
      const auto rank = r.pod<uint32_t>("rank");
      Shape shape;
      for (uint32_t d = 0; d < rank; ++d) shape.push_back(r.pod<int64_t>("dim"));
      const int64_t n = numel(shape);
      const size_t idx = store.add(name, Tensor<float>(shape, r.floats(n, "value")), trainable);
      auto& e = store.entry(idx);
      e.m = Tensor<float>(shape, r.floats(n, "first moment"));
      e.v = Tensor<float>(shape, r.floats(n, "second moment"));
      e.step = step;
    }
    c.stores.emplace_back(std::move(store_name), std::move(store));
  }
  if (!r.done()) throw CheckpointError("checkpoint has trailing bytes after offset " + std::to_string(r.pos()));
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  const std::vector<char> bytes = serialize(c);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  const std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace gex::nets
