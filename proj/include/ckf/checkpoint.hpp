#pragma once

// Binary session checkpoints.
//
// Layout (little-endian):
//   "CKFCKPT\0" | u32 version | u32 fingerprint (crc32 of ModelConfig::canonical)
//   | str config text | str rng state | u64 events_done
//   | keys: 2 x (u64 n, n x str)
//   | entities: u64 n, n x (u8 side, u32 index, u8 clamped, f64 last_time,
//                          u64 event_count, u32 d, d x f64 mean, d*d x f64 cov)
//   | drifts: u64 n, n x (u8 scope, u8 side, u32 index, f64 a, f64 c,
//                         f64 last_time, u64 update_count,
//                         u64 m, m x (i32 bin, f64 count, f64 kappa))
//   | metrics: f64 sum_sq, f64 sum_abs, u64 n_scored, u64 n_skipped,
//              21x21 f64, 21x21 u64
//   | u32 crc32 of every preceding byte
// Strings are u64 length + bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <boost/crc.hpp>

#include "ckf/harness.hpp"

namespace ckf {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'C', 'K', 'F', 'C', 'K', 'P', 'T', '\0'};

inline std::uint32_t crc32(const void* data, std::size_t n) {
  boost::crc_32_type crc;
  crc.process_bytes(data, n);
  return crc.checksum();
}

inline std::uint32_t config_fingerprint(const ModelConfig& config) {
  const std::string text = config.canonical();
  return crc32(text.data(), text.size());
}

namespace detail {

class ByteWriter {
public:
  template <class T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void put_str(const std::string& s) {
    put<std::uint64_t>(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void put_raw(const char* p, std::size_t n) { buf_.insert(buf_.end(), p, p + n); }
  std::vector<char>& bytes() { return buf_; }

private:
  std::vector<char> buf_;
};

class ByteReader {
public:
  ByteReader(const char* data, std::size_t n) : data_(data), n_(n) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_ + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_str() {
    const auto len = get<std::uint64_t>();
    need(len);
    std::string s(data_ + pos_, len);
    pos_ += len;
    return s;
  }
  void get_raw(char* out, std::size_t n) {
    need(n);
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == n_; }

private:
  void need(std::uint64_t k) const {
    if (k > n_ - pos_) throw CheckpointError("checkpoint truncated");
  }
  const char* data_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Everything needed to rebuild a Session, minus the config itself (which
/// the caller supplies and the fingerprint checks).
inline std::vector<char> serialize_session(const Session& s) {
  detail::ByteWriter w;
  const ModelConfig& cfg = s.engine.config();
  w.put_raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(config_fingerprint(cfg));
  w.put_str(cfg.canonical());
  std::ostringstream rng;
  rng << s.engine.rng();
  w.put_str(rng.str());
  w.put<std::uint64_t>(s.events_done);

  for (Side side : {Side::row, Side::column}) {
    const auto& keys = s.keys.keys(side);
    w.put<std::uint64_t>(keys.size());
    for (const auto& k : keys) w.put_str(k);
  }

  const auto& recs = s.engine.store().records();
  w.put<std::uint64_t>(recs.size());
  for (const auto& [id, rec] : recs) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(id.side));
    w.put<std::uint32_t>(id.index);
    w.put<std::uint8_t>(rec.clamped ? 1 : 0);
    w.put<double>(rec.belief.last_time);
    w.put<std::uint64_t>(rec.event_count);
    const auto d = static_cast<std::uint32_t>(rec.belief.mean.size());
    w.put<std::uint32_t>(d);
    for (std::uint32_t i = 0; i < d; ++i) w.put<double>(rec.belief.mean[i]);
    for (std::uint32_t j = 0; j < d; ++j)
      for (std::uint32_t i = 0; i < d; ++i) w.put<double>(rec.belief.covariance(i, j));
  }

  const auto& drifts = s.engine.drifts();
  w.put<std::uint64_t>(drifts.size());
  for (const auto& [key, p] : drifts) {
    w.put<std::uint8_t>(static_cast<std::uint8_t>(key.scope));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(key.side));
    w.put<std::uint32_t>(key.index);
    w.put<double>(p.a);
    w.put<double>(p.c);
    w.put<double>(p.last_time);
    w.put<std::uint64_t>(p.update_count);
    w.put<std::uint64_t>(p.history.bins.size());
    for (const auto& b : p.history.bins) {
      w.put<std::int32_t>(b.index);
      w.put<double>(b.count);
      w.put<double>(b.kappa);
    }
  }

  const auto& m = s.metrics;
  w.put<double>(m.sum_sq);
  w.put<double>(m.sum_abs);
  w.put<std::uint64_t>(m.n_scored);
  w.put<std::uint64_t>(m.n_skipped);
  for (const auto& row : m.bucket_sq)
    for (double v : row) w.put<double>(v);
  for (const auto& row : m.bucket_n)
    for (auto v : row) w.put<std::uint64_t>(v);

  auto& bytes = w.bytes();
  w.put<std::uint32_t>(crc32(bytes.data(), bytes.size()));
  return std::move(bytes);
}

struct CheckpointHeader {
  std::uint32_t version = 0;
  std::uint32_t fingerprint = 0;
  std::string config_text;
};

namespace detail {

inline ByteReader open_checked(const std::vector<char>& bytes, CheckpointHeader& header) {
  if (bytes.size() < sizeof kCheckpointMagic + 12) throw CheckpointError("checkpoint truncated");
  if (std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw CheckpointError("not a checkpoint file");
  }
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + sizeof kCheckpointMagic, sizeof version);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint format_version " + std::to_string(version));
  }
  const std::size_t body = bytes.size() - sizeof(std::uint32_t);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof stored);
  if (stored != crc32(bytes.data(), body)) throw CheckpointError("checkpoint checksum mismatch (corrupt or truncated)");

  ByteReader r(bytes.data(), body);
  char magic[sizeof kCheckpointMagic];
  r.get_raw(magic, sizeof magic);
  header.version = r.get<std::uint32_t>();
  header.fingerprint = r.get<std::uint32_t>();
  header.config_text = r.get_str();
  return r;
}

}  // namespace detail

inline CheckpointHeader read_checkpoint_header(const std::vector<char>& bytes) {
  CheckpointHeader h;
  detail::open_checked(bytes, h);
  return h;
}

/// Rebuilds a session; `config` must match the one the checkpoint was
/// written with.
inline Session deserialize_session(const std::vector<char>& bytes, const ModelConfig& config) {
  CheckpointHeader header;
  detail::ByteReader r = detail::open_checked(bytes, header);
  if (header.fingerprint != config_fingerprint(config)) {
    throw CheckpointError("checkpoint config fingerprint mismatch");
  }
  Session s(config);
  std::istringstream rng(r.get_str());
  rng >> s.engine.rng();
  if (!rng) throw CheckpointError("bad rng state");
  s.events_done = r.get<std::uint64_t>();

  for (Side side : {Side::row, Side::column}) {
    const auto n = r.get<std::uint64_t>();
    for (std::uint64_t i = 0; i < n; ++i) s.keys.intern(side, r.get_str());
  }

  const auto n_ent = r.get<std::uint64_t>();
  for (std::uint64_t e = 0; e < n_ent; ++e) {
    EntityId id;
    id.side = static_cast<Side>(r.get<std::uint8_t>());
    id.index = r.get<std::uint32_t>();
    EntityRecord rec;
    rec.clamped = r.get<std::uint8_t>() != 0;
    rec.belief.last_time = r.get<double>();
    rec.event_count = r.get<std::uint64_t>();
    const auto d = r.get<std::uint32_t>();
    if (d != static_cast<std::uint32_t>(config.latent_dim)) throw CheckpointError("belief dimension mismatch");
    rec.belief.mean.resize(d);
    rec.belief.covariance.resize(d, d);
    for (std::uint32_t i = 0; i < d; ++i) rec.belief.mean[i] = r.get<double>();
    for (std::uint32_t j = 0; j < d; ++j)
      for (std::uint32_t i = 0; i < d; ++i) rec.belief.covariance(i, j) = r.get<double>();
    s.engine.store().restore(id, std::move(rec));
  }

  const auto n_drift = r.get<std::uint64_t>();
  for (std::uint64_t e = 0; e < n_drift; ++e) {
    DriftKey key;
    key.scope = static_cast<DriftScope>(r.get<std::uint8_t>());
    key.side = static_cast<Side>(r.get<std::uint8_t>());
    key.index = r.get<std::uint32_t>();
    DriftProcess p;
    p.a = r.get<double>();
    p.c = r.get<double>();
    p.last_time = r.get<double>();
    p.update_count = r.get<std::uint64_t>();
    const auto n_bins = r.get<std::uint64_t>();
    for (std::uint64_t b = 0; b < n_bins; ++b) {
      const auto idx = r.get<std::int32_t>();
      auto& bin = p.history.bin(idx);
      bin.count = r.get<double>();
      bin.kappa = r.get<double>();
    }
    s.engine.drifts()[key] = p;
  }

  auto& m = s.metrics;
  m.sum_sq = r.get<double>();
  m.sum_abs = r.get<double>();
  m.n_scored = r.get<std::uint64_t>();
  m.n_skipped = r.get<std::uint64_t>();
  for (auto& row : m.bucket_sq)
    for (double& v : row) v = r.get<double>();
  for (auto& row : m.bucket_n)
    for (auto& v : row) v = r.get<std::uint64_t>();
  if (!r.done()) throw CheckpointError("trailing bytes in checkpoint");
  return s;
}

inline std::vector<char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void checkpoint_save(const Session& s, const std::string& path) {
  const auto bytes = serialize_session(s);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("write failed for " + path);
}

inline Session checkpoint_load(const std::string& path, const ModelConfig& config) {
  return deserialize_session(read_file_bytes(path), config);
}

}  // namespace ckf
