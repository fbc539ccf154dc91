#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "qualiteacher/trainer.hpp"

namespace qualiteacher {

// Layout (all integers and floats little-endian):
//   "QTCKPT1" | version u8 | arch digest u64 | in_channels, freq_bands, embed_hidden i32
//   student tensors: count u32, then per tensor name (u32 len + bytes), rank u32, dims i32..., values f64...
//   adam: step i64, first moments, second moments (student layout)
//   injection snapshot: count u32, per tensor len u64 + f64...
//   teacher values (student layout) | iteration i64 | rng state (u32 len + text)
//   pl_sets_generated i64 | pl_sets_accepted i64
//   banks: count u32, per input id u64, label count u32, per label aug_id i32, created_at i64,
//          raw a,b,c and normalized a,b,c f64, ensemble f64, image h,w,c i32 + f64...
// Values are stored as f64 so a resumed run continues bit-exactly.

inline constexpr char kCheckpointMagic[7] = {'Q', 'T', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class CheckpointError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

namespace ckpt_detail {

class Writer {
public:
  template <typename T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void bytes(const char* p, std::size_t n) { out_.append(p, n); }
  void str(const std::string& s) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  void doubles(const std::vector<double>& v) { bytes(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double)); }
  const std::string& data() const { return out_; }

private:
  std::string out_;
};

class Reader {
public:
  Reader(std::string data, std::string path) : in_(std::move(data)), path_(std::move(path)) {}

  template <typename T>
  T pod() {
    need(sizeof(T), "value");
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str(std::size_t limit = 1 << 20) {
    const auto n = pod<std::uint32_t>();
    if (n > limit) fail("string length " + std::to_string(n) + " exceeds limit");
    need(n, "string");
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void doubles(std::vector<double>& v) {
    need(v.size() * sizeof(double), "tensor values");
    std::memcpy(v.data(), in_.data() + pos_, v.size() * sizeof(double));
    pos_ += v.size() * sizeof(double);
  }
  void expect_bytes(const char* p, std::size_t n, const char* what) {
    need(n, what);
    if (std::memcmp(in_.data() + pos_, p, n) != 0) fail(std::string("bad ") + what);
    pos_ += n;
  }
  bool at_end() const { return pos_ == in_.size(); }
  [[noreturn]] void fail(const std::string& what) const {
    throw CheckpointError(path_ + ": checkpoint error at byte offset " + std::to_string(pos_) + ": " + what);
  }

private:
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) fail(std::string("truncated while reading ") + what);
  }
  std::string in_;
  std::string path_;
  std::size_t pos_ = 0;
};

inline void write_values(Writer& w, const ParamGrads& v) {
  for (const auto& t : v) w.doubles(t);
}

inline void read_values(Reader& r, ParamGrads& v) {
  for (auto& t : v) r.doubles(t);
}

inline ParamGrads values_of(const ModelParams& p) {
  ParamGrads v;
  for (const auto& t : p.tensors()) v.push_back(t.values);
  return v;
}

}  // namespace ckpt_detail

inline std::string serialize_checkpoint(const TrainerState& s) {
  using namespace ckpt_detail;
  Writer w;
  const Architecture& a = s.student.arch();
  w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
  w.pod<std::uint8_t>(kCheckpointVersion);
  w.pod<std::uint64_t>(a.digest());
  w.pod<std::int32_t>(a.in_channels);
  w.pod<std::int32_t>(a.freq_bands);
  w.pod<std::int32_t>(a.embed_hidden);

  w.pod<std::uint32_t>(static_cast<std::uint32_t>(s.student.tensors().size()));
  for (const auto& t : s.student.tensors()) {
    w.str(t.name);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.dims.size()));
    for (int d : t.dims) w.pod<std::int32_t>(d);
    w.doubles(t.values);
  }
  w.pod<std::int64_t>(s.adam.step);
  write_values(w, s.adam.m);
  write_values(w, s.adam.v);

  w.pod<std::uint32_t>(static_cast<std::uint32_t>(s.snapshot.weights().size()));
  for (const auto& t : s.snapshot.weights()) {
    w.pod<std::uint64_t>(t.size());
    w.doubles(t);
  }
  write_values(w, values_of(s.teacher));
  w.pod<std::int64_t>(s.iteration);
  w.str(s.rng.state());
  w.pod<std::int64_t>(s.pl_sets_generated);
  w.pod<std::int64_t>(s.pl_sets_accepted);

  w.pod<std::uint32_t>(static_cast<std::uint32_t>(s.bank.all().size()));
  for (const auto& [id, labels] : s.bank.all()) {
    w.pod<std::uint64_t>(id);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(labels.size()));
    for (const auto& pl : labels) {
      w.pod<std::int32_t>(pl.aug_id);
      w.pod<std::int64_t>(pl.created_at);
      for (double v : {pl.scores.a, pl.scores.b, pl.scores.c, pl.scores.a_norm, pl.scores.b_norm, pl.scores.c_norm}) w.pod<double>(v);
      w.pod<double>(pl.ensemble);
      w.pod<std::int32_t>(pl.image.height());
      w.pod<std::int32_t>(pl.image.width());
      w.pod<std::int32_t>(pl.image.channels());
      w.doubles(pl.image.data());
    }
  }
  return w.data();
}

inline TrainerState deserialize_checkpoint(std::string bytes, const std::string& path = "<checkpoint>") {
  using namespace ckpt_detail;
  Reader r(std::move(bytes), path);
  r.expect_bytes(kCheckpointMagic, sizeof kCheckpointMagic, "magic");
  if (const auto v = r.pod<std::uint8_t>(); v != kCheckpointVersion) r.fail("unsupported version " + std::to_string(v));
  const auto digest = r.pod<std::uint64_t>();
  Architecture a;
  a.in_channels = r.pod<std::int32_t>();
  a.freq_bands = r.pod<std::int32_t>();
  a.embed_hidden = r.pod<std::int32_t>();
  if (a.in_channels < 1 || a.in_channels > 4 || a.freq_bands < 1 || a.freq_bands > 16 || a.embed_hidden < 1 || a.embed_hidden > 4096)
    r.fail("implausible architecture fields");
  if (a.digest() != digest) r.fail("architecture digest mismatch");

  TrainerState s;
  s.student = ModelParams(a);
  const auto count = r.pod<std::uint32_t>();
  if (count != s.student.tensors().size()) r.fail("tensor count " + std::to_string(count) + " does not match architecture");
  for (auto& t : s.student.tensors()) {
    const std::string name = r.str(256);
    if (name != t.name) r.fail("expected tensor " + t.name + ", found " + name);
    const auto rank = r.pod<std::uint32_t>();
    if (rank != t.dims.size()) r.fail("rank mismatch for " + t.name);
    for (int d : t.dims)
      if (r.pod<std::int32_t>() != d) r.fail("shape mismatch for " + t.name);
    r.doubles(t.values);
  }
  s.adam = make_adam_state(s.student);
  s.adam.step = r.pod<std::int64_t>();
  read_values(r, s.adam.m);
  read_values(r, s.adam.v);

  const auto n_snap = r.pod<std::uint32_t>();
  if (n_snap != kInjectionParams.size()) r.fail("snapshot tensor count mismatch");
  std::vector<std::vector<double>> snap;
  for (std::size_t n = 0; n < n_snap; ++n) {
    const auto len = r.pod<std::uint64_t>();
    if (len != s.student.values(kInjectionParams[n]).size()) r.fail("snapshot tensor size mismatch");
    std::vector<double> v(len);
    r.doubles(v);
    snap.push_back(std::move(v));
  }
  s.snapshot = InjectionSnapshot(std::move(snap));

  s.teacher = ModelParams(a);
  for (auto& t : s.teacher.tensors()) r.doubles(t.values);
  s.iteration = r.pod<std::int64_t>();
  try {
    s.rng.set_state(r.str());
  } catch (const std::runtime_error&) {
    r.fail("malformed RNG state");
  }
  s.pl_sets_generated = r.pod<std::int64_t>();
  s.pl_sets_accepted = r.pod<std::int64_t>();

  const auto n_inputs = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_inputs; ++i) {
    const auto id = r.pod<std::uint64_t>();
    const auto n_labels = r.pod<std::uint32_t>();
    if (n_labels > kBankCapacity) r.fail("bank holds more than " + std::to_string(kBankCapacity) + " labels");
    auto& bank = s.bank.all()[id];
    for (std::uint32_t k = 0; k < n_labels; ++k) {
      PseudoLabel pl;
      pl.aug_id = r.pod<std::int32_t>();
      pl.created_at = r.pod<std::int64_t>();
      pl.scores.a = r.pod<double>();
      pl.scores.b = r.pod<double>();
      pl.scores.c = r.pod<double>();
      pl.scores.a_norm = r.pod<double>();
      pl.scores.b_norm = r.pod<double>();
      pl.scores.c_norm = r.pod<double>();
      pl.ensemble = r.pod<double>();
      const int h = r.pod<std::int32_t>(), w = r.pod<std::int32_t>(), c = r.pod<std::int32_t>();
      if (h < 1 || w < 1 || c < 1 || h > 4096 || w > 4096 || c > 4) r.fail("implausible label image shape");
      pl.image = Image(h, w, c);
      r.doubles(pl.image.data());
      bank.push_back(std::move(pl));
    }
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return s;
}

/// Writes to a sibling temporary and renames over the target.
inline void save_checkpoint(const std::filesystem::path& path, const TrainerState& s) {
  const std::string bytes = serialize_checkpoint(s);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(tmp.string() + ": cannot open for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError(tmp.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

inline TrainerState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(path.string() + ": cannot open checkpoint");
  std::ostringstream ss;
  ss << f.rdbuf();
  return deserialize_checkpoint(ss.str(), path.string());
}

}  // namespace qualiteacher
