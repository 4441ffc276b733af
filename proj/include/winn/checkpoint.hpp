#pragma once

#include <cstring>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "winn/cascade.hpp"
#include "winn/io.hpp"

namespace winn {

// Checkpoint container:
//   "WINNCKPT" | u32 version | u64 config hash | u64 payload size | payload | u64 FNV-1a of payload
// The payload is a sequence of named records: u32 name length, name, u8 kind, body.
//   kind 0 tensor:  u32 rank, u64 dims..., f64 values
//   kind 1 u64s:    u64 count, u64 values...
//   kind 2 string:  u64 length, bytes
// Pool samples live in a sidecar "<file>.pool" (raw f64 dump of every pool, concatenated); the
// container records each pool's record count, stage/cascade tags and the sidecar's hash.

constexpr char kCheckpointMagic[8] = {'W', 'I', 'N', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
  enum Kind : std::uint8_t { TensorKind = 0, U64Kind = 1, StringKind = 2 } kind = TensorKind;
  Tensor tensor;
  std::vector<std::uint64_t> u64;
  std::string text;
};

/// Ordered record container; insertion order is the on-disk order.
class CheckpointWriter {
 public:
  void tensor(const std::string& name, const Tensor& t) {
    head(name, CheckpointRecord::TensorKind);
    put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(d);
    bytes_.append(reinterpret_cast<const char*>(t.data()), t.numel() * sizeof(double));
  }
  void u64s(const std::string& name, const std::vector<std::uint64_t>& v) {
    head(name, CheckpointRecord::U64Kind);
    put<std::uint64_t>(v.size());
    bytes_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(std::uint64_t));
  }
  void u64(const std::string& name, std::uint64_t v) { u64s(name, {v}); }
  void text(const std::string& name, const std::string& s) {
    head(name, CheckpointRecord::StringKind);
    put<std::uint64_t>(s.size());
    bytes_ += s;
  }

  std::string finish(std::uint64_t config_hash) const {
    std::string out(kCheckpointMagic, 8);
    append(out, kCheckpointVersion);
    append(out, config_hash);
    append(out, static_cast<std::uint64_t>(bytes_.size()));
    out += bytes_;
    append(out, fnv1a64(bytes_.data(), bytes_.size()));
    return out;
  }

 private:
  template <class T>
  static void append(std::string& s, T v) {
    s.append(reinterpret_cast<const char*>(&v), sizeof v);
  }
  template <class T>
  void put(T v) {
    append(bytes_, v);
  }
  void head(const std::string& name, CheckpointRecord::Kind kind) {
    if (names_.count(name)) throw UsageError("checkpoint: duplicate record '" + name + "'");
    names_[name] = true;
    put<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    bytes_ += name;
    put<std::uint8_t>(kind);
  }
  std::string bytes_;
  std::map<std::string, bool> names_;
};

class CheckpointReader {
 public:
  /// Validates the envelope; `expected_hash` of 0 skips the config check.
  CheckpointReader(const std::string& bytes, std::uint64_t expected_hash) {
    constexpr std::size_t header = 8 + 4 + 8 + 8;
    if (bytes.size() < header) throw CheckpointError("checkpoint truncated: header needs 28 bytes, file has " + std::to_string(bytes.size()));
    if (std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) throw CheckpointError("not a checkpoint (bad magic)");
    std::size_t pos = 8;
    const auto version = get<std::uint32_t>(bytes, pos);
    if (version != kCheckpointVersion)
      throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    hash_ = get<std::uint64_t>(bytes, pos);
    if (expected_hash != 0 && hash_ != expected_hash)
      throw CheckpointError("checkpoint config hash " + hex64(hash_) + " does not match the run config " + hex64(expected_hash));
    const auto size = get<std::uint64_t>(bytes, pos);
    if (bytes.size() != header + size + 8)
      throw CheckpointError("checkpoint truncated or padded: expected " + std::to_string(header + size + 8) + " bytes, found " +
                            std::to_string(bytes.size()));
    const std::string payload = bytes.substr(header, size);
    std::size_t cpos = header + size;
    if (get<std::uint64_t>(bytes, cpos) != fnv1a64(payload.data(), payload.size()))
      throw CheckpointError("checkpoint checksum mismatch (corrupted payload)");
    parse(payload);
  }

  std::uint64_t config_hash() const noexcept { return hash_; }
  bool has(const std::string& name) const { return records_.count(name) > 0; }

  const Tensor& tensor(const std::string& name) const { return get_record(name, CheckpointRecord::TensorKind).tensor; }
  const std::vector<std::uint64_t>& u64s(const std::string& name) const {
    return get_record(name, CheckpointRecord::U64Kind).u64;
  }
  std::uint64_t u64(const std::string& name) const {
    const auto& v = u64s(name);
    if (v.size() != 1) throw CheckpointError("checkpoint record '" + name + "' is not a scalar");
    return v[0];
  }
  const std::string& text(const std::string& name) const { return get_record(name, CheckpointRecord::StringKind).text; }
  const std::vector<std::string>& names() const noexcept { return order_; }

 private:
  template <class T>
  static T get(const std::string& s, std::size_t& pos) {
    if (s.size() - pos < sizeof(T)) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos));
    T v;
    std::memcpy(&v, s.data() + pos, sizeof v);
    pos += sizeof v;
    return v;
  }

  void parse(const std::string& p) {
    std::size_t pos = 0;
    while (pos < p.size()) {
      const auto len = get<std::uint32_t>(p, pos);
      if (p.size() - pos < len) throw CheckpointError("checkpoint record name truncated");
      std::string name = p.substr(pos, len);
      pos += len;
      CheckpointRecord r;
      r.kind = static_cast<CheckpointRecord::Kind>(get<std::uint8_t>(p, pos));
      if (r.kind == CheckpointRecord::TensorKind) {
        const auto rank = get<std::uint32_t>(p, pos);
        if (rank > 8) throw CheckpointError("checkpoint record '" + name + "' has rank " + std::to_string(rank));
        Shape shape(rank);
        for (auto& d : shape) d = get<std::uint64_t>(p, pos);
        const std::size_t n = rank == 0 ? 0 : numel_of(shape);
        if ((p.size() - pos) / sizeof(double) < n) throw CheckpointError("checkpoint tensor '" + name + "' truncated");
        std::vector<double> data(n);
        std::memcpy(data.data(), p.data() + pos, n * sizeof(double));
        pos += n * sizeof(double);
        r.tensor = rank == 0 ? Tensor() : Tensor(shape, std::move(data));
      } else if (r.kind == CheckpointRecord::U64Kind) {
        const auto n = get<std::uint64_t>(p, pos);
        if ((p.size() - pos) / sizeof(std::uint64_t) < n) throw CheckpointError("checkpoint array '" + name + "' truncated");
        r.u64.resize(n);
        std::memcpy(r.u64.data(), p.data() + pos, n * sizeof(std::uint64_t));
        pos += n * sizeof(std::uint64_t);
      } else if (r.kind == CheckpointRecord::StringKind) {
        const auto n = get<std::uint64_t>(p, pos);
        if (p.size() - pos < n) throw CheckpointError("checkpoint string '" + name + "' truncated");
        r.text = p.substr(pos, n);
        pos += n;
      } else {
        throw CheckpointError("checkpoint record '" + name + "' has unknown kind");
      }
      order_.push_back(name);
      records_[name] = std::move(r);
    }
  }

  const CheckpointRecord& get_record(const std::string& name, CheckpointRecord::Kind kind) const {
    auto it = records_.find(name);
    if (it == records_.end()) throw CheckpointError("checkpoint has no record '" + name + "'");
    if (it->second.kind != kind) throw CheckpointError("checkpoint record '" + name + "' has the wrong kind");
    return it->second;
  }

  std::uint64_t hash_ = 0;
  std::map<std::string, CheckpointRecord> records_;
  std::vector<std::string> order_;
};

// ---------------------------------------------------------------------------
// Training state <-> checkpoint

namespace detail {

inline void write_params(CheckpointWriter& w, const std::string& prefix, const ModelParams& p) {
  std::vector<std::uint64_t> roles;
  std::string names;
  for (const auto& e : p.entries()) {
    w.tensor(prefix + "/" + e.name, e.value);
    roles.push_back(static_cast<std::uint64_t>(e.role));
    names += e.name + "\n";
  }
  w.text(prefix + ".names", names);
  w.u64s(prefix + ".roles", roles);
}

inline ModelParams read_params(const CheckpointReader& r, const std::string& prefix) {
  ModelParams p;
  std::istringstream names(r.text(prefix + ".names"));
  const auto& roles = r.u64s(prefix + ".roles");
  std::string name;
  std::size_t i = 0;
  while (std::getline(names, name)) {
    if (i >= roles.size() || roles[i] > 2) throw CheckpointError("checkpoint parameter roles are inconsistent");
    p.add(name, r.tensor(prefix + "/" + name), static_cast<ParamRole>(roles[i++]));
  }
  if (i != roles.size()) throw CheckpointError("checkpoint parameter roles are inconsistent");
  return p;
}

inline void write_pool_index(CheckpointWriter& w, const std::string& prefix, const PseudoNegativePool& pool,
                             std::uint64_t offset) {
  std::vector<std::uint64_t> shape(pool.sample_shape().begin(), pool.sample_shape().end());
  w.u64s(prefix + ".shape", shape);
  w.u64s(prefix + ".stages", std::vector<std::uint64_t>(pool.stages().begin(), pool.stages().end()));
  w.u64s(prefix + ".cascades", std::vector<std::uint64_t>(pool.cascades().begin(), pool.cascades().end()));
  w.u64(prefix + ".offset", offset);
}

inline PseudoNegativePool read_pool(const CheckpointReader& r, const std::string& prefix, const std::vector<double>& raw) {
  const auto& sh = r.u64s(prefix + ".shape");
  Shape shape(sh.begin(), sh.end());
  const auto& st = r.u64s(prefix + ".stages");
  const auto& ca = r.u64s(prefix + ".cascades");
  const std::size_t offset = r.u64(prefix + ".offset");
  const std::size_t n = st.size() * numel_of(shape);
  if (offset > raw.size() || raw.size() - offset < n) throw CheckpointError("pool sidecar is shorter than the index");
  return PseudoNegativePool::restore(shape, std::vector<double>(raw.begin() + offset, raw.begin() + offset + n),
                                     std::vector<std::size_t>(st.begin(), st.end()),
                                     std::vector<std::size_t>(ca.begin(), ca.end()));
}

inline std::filesystem::path pool_path(const std::filesystem::path& ckpt) { return ckpt.string() + ".pool"; }

}  // namespace detail

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::uint64_t config_hash = 0;
  std::string config;  // serialized run config
};

struct CheckpointFiles {
  std::string container;
  std::string pool;  // sidecar bytes
};

inline CheckpointFiles encode_checkpoint(const TrainState& st, std::uint64_t seed, std::uint64_t config_hash,
                                         const std::string& config_text = {}) {
  std::vector<const PseudoNegativePool*> pools{&st.pool};
  for (const auto& p : st.finished_pools) pools.push_back(&p);
  std::vector<double> raw;
  CheckpointWriter w;
  w.text("config", config_text);
  w.u64("state.cascade", st.cascade);
  w.u64("state.stage", st.stage);
  w.u64("state.finished", st.finished.size());
  // Every random stream is derived from the master seed and the (cascade, stage) cursor.
  w.u64("rng.seed", seed);
  w.u64s("rng.cursor", {st.cascade, st.stage});
  detail::write_params(w, "params", st.params);
  w.u64("adam.step", st.adam.step);
  w.tensor("adam.settings", Tensor({4}, std::vector<double>{st.adam.settings.lr, st.adam.settings.beta1,
                                                            st.adam.settings.beta2, st.adam.settings.eps}));
  for (std::size_t i = 0; i < st.adam.m.size(); ++i) {
    w.tensor("adam.m/" + std::to_string(i), st.adam.m[i]);
    w.tensor("adam.v/" + std::to_string(i), st.adam.v[i]);
  }
  for (std::size_t k = 0; k < st.finished.size(); ++k) detail::write_params(w, "finished/" + std::to_string(k), st.finished[k]);
  w.tensor("previous_final", st.previous_final);
  for (std::size_t i = 0; i < pools.size(); ++i) {
    detail::write_pool_index(w, i == 0 ? "pool" : "finished_pool/" + std::to_string(i - 1), *pools[i], raw.size());
    raw.insert(raw.end(), pools[i]->raw().begin(), pools[i]->raw().end());
  }
  CheckpointFiles f;
  f.pool = encode_f64(Tensor({raw.size()}, raw));
  if (raw.empty()) f.pool = "F64 1 0\n";
  w.u64("pool.sidecar_hash", fnv1a64(f.pool.data(), f.pool.size()));
  f.container = w.finish(config_hash);
  return f;
}

inline TrainState decode_checkpoint(const CheckpointFiles& f, std::uint64_t expected_hash, CheckpointMeta* meta = nullptr) {
  CheckpointReader r(f.container, expected_hash);
  if (r.u64("pool.sidecar_hash") != fnv1a64(f.pool.data(), f.pool.size()))
    throw CheckpointError("pool sidecar does not match its checkpoint");
  std::vector<double> raw;
  if (f.pool != "F64 1 0\n") {
    try {
      const Tensor t = decode_f64(f.pool);
      raw.assign(t.values().begin(), t.values().end());
    } catch (const ParseError& e) {
      throw CheckpointError(std::string("pool sidecar: ") + e.what());
    }
  }
  TrainState st;
  st.cascade = r.u64("state.cascade");
  st.stage = r.u64("state.stage");
  if (meta) *meta = {r.u64("rng.seed"), r.config_hash(), r.text("config")};
  st.params = detail::read_params(r, "params");
  const Tensor& as = r.tensor("adam.settings");
  st.adam.settings = {as[0], as[1], as[2], as[3]};
  st.adam.step = r.u64("adam.step");
  for (std::size_t i = 0; i < st.params.size(); ++i) {
    st.adam.m.push_back(r.tensor("adam.m/" + std::to_string(i)));
    st.adam.v.push_back(r.tensor("adam.v/" + std::to_string(i)));
  }
  const std::size_t finished = r.u64("state.finished");
  for (std::size_t k = 0; k < finished; ++k) {
    st.finished.push_back(detail::read_params(r, "finished/" + std::to_string(k)));
    st.finished_pools.push_back(detail::read_pool(r, "finished_pool/" + std::to_string(k), raw));
  }
  st.previous_final = r.tensor("previous_final");
  st.pool = detail::read_pool(r, "pool", raw);
  return st;
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainState& st, std::uint64_t seed,
                            std::uint64_t config_hash, const std::string& config_text = {}) {
  const CheckpointFiles f = encode_checkpoint(st, seed, config_hash, config_text);
  // Sidecar first: a container on disk always refers to a complete sidecar.
  write_file_atomic(detail::pool_path(path), f.pool);
  write_file_atomic(path, f.container);
}

inline TrainState load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_hash,
                                  CheckpointMeta* meta = nullptr) {
  CheckpointFiles f;
  f.container = read_file(path);
  try {
    f.pool = read_file(detail::pool_path(path));
  } catch (const IoError&) {
    throw CheckpointError("checkpoint '" + path.string() + "' is missing its pool sidecar");
  }
  return decode_checkpoint(f, expected_hash, meta);
}


}  // namespace winn
