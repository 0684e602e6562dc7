#pragma once

// Versioned binary checkpoints. The byte format is normative:
//
//   magic          6 bytes   "FSGPT\0"
//   version        u32 LE
//   config_len     u64 LE    followed by that many bytes of resolved config text
//   seed           u64 LE
//   step           u64 LE
//   tensor_count   u64 LE
//   per tensor:    name_len u32 LE, name bytes,
//                  dtype u8 (0 = f32, 1 = f64),
//                  rank u32 LE, extents u64 LE each,
//                  raw element data, little-endian
//   state_count    u64 LE    optimizer moments in the same tensor encoding,
//                            named "adam.m.<param>" / "adam.v.<param>"
//   crc32          u32 LE    IEEE CRC of every preceding byte
//
// All multi-byte values are little-endian regardless of host.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "fsgpt/common.hpp"
#include "fsgpt/crc32.hpp"
#include "fsgpt/tensor.hpp"
#include "fsgpt/training.hpp"

namespace fsgpt {

class CorruptError : public std::runtime_error {
 public:
  explicit CorruptError(const std::string& msg) : std::runtime_error(msg) {}
};
class VersionError : public std::runtime_error {
 public:
  explicit VersionError(const std::string& msg) : std::runtime_error(msg) {}
};
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

constexpr uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[6] = {'F', 'S', 'G', 'P', 'T', '\0'};

namespace ckpt_detail {

inline void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
void put_elem(std::string& buf, T v) {
  if constexpr (sizeof(T) == 4) {
    put_u32(buf, std::bit_cast<uint32_t>(v));
  } else {
    put_u64(buf, std::bit_cast<uint64_t>(v));
  }
}

template <typename T>
void put_tensor(std::string& buf, const std::string& name, const Shape& shape,
                const std::vector<T>& data) {
  put_u32(buf, static_cast<uint32_t>(name.size()));
  buf.append(name);
  buf.push_back(static_cast<char>(sizeof(T) == 4 ? 0 : 1));
  put_u32(buf, static_cast<uint32_t>(shape.size()));
  for (size_t e : shape) put_u64(buf, e);
  if constexpr (std::endian::native == std::endian::little) {
    buf.append(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(T));
  } else {
    for (T v : data) put_elem(buf, v);
  }
}

struct Reader {
  const std::string& buf;
  size_t pos = 0;
  const std::string& path;

  void need(size_t n) {
    if (pos + n > buf.size()) throw FormatError(path + ": truncated checkpoint");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(buf[pos++]);
  }
  std::string bytes(size_t n) {
    need(n);
    std::string out = buf.substr(pos, n);
    pos += n;
    return out;
  }
  template <typename T>
  std::vector<T> elems(size_t n) {
    need(n * sizeof(T));
    std::vector<T> out(n);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), buf.data() + pos, n * sizeof(T));
      pos += n * sizeof(T);
    } else {
      for (size_t i = 0; i < n; ++i) {
        if constexpr (sizeof(T) == 4) {
          out[i] = std::bit_cast<T>(u32());
        } else {
          out[i] = std::bit_cast<T>(u64());
        }
      }
    }
    return out;
  }
};

template <typename T>
void read_tensor(Reader& r, std::string& name, Shape& shape, std::vector<T>& data) {
  const uint32_t name_len = r.u32();
  name = r.bytes(name_len);
  const uint8_t dtype = r.u8();
  const uint8_t want = sizeof(T) == 4 ? 0 : 1;
  if (dtype != want) {
    throw FormatError(cat(r.path, ": tensor ", name, " has dtype tag ",
                          static_cast<int>(dtype), ", run wants ", static_cast<int>(want)));
  }
  const uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw FormatError(r.path + ": implausible tensor rank");
  shape.clear();
  size_t numel = 1;
  for (uint32_t i = 0; i < rank; ++i) {
    const uint64_t e = r.u64();
    if (e == 0 || e > (1ull << 40)) throw FormatError(r.path + ": implausible tensor extent");
    shape.push_back(static_cast<size_t>(e));
    numel *= static_cast<size_t>(e);
  }
  data = r.template elems<T>(numel);
}

}  // namespace ckpt_detail

template <typename T>
void save_checkpoint(const std::string& path, const ParameterStore<T>& store,
                     const Adam<T>* optimizer, const std::string& config_text, uint64_t seed,
                     uint64_t step) {
  using namespace ckpt_detail;
  std::string buf;
  buf.append(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u32(buf, kCheckpointVersion);
  put_u64(buf, config_text.size());
  buf.append(config_text);
  put_u64(buf, seed);
  put_u64(buf, step);

  put_u64(buf, store.size());
  for (size_t i = 0; i < store.size(); ++i) {
    const Tensor<T>& t = store.at(i);
    put_tensor(buf, store.names()[i], t.shape(), t.value());
  }

  size_t state_count = 0;
  std::vector<std::string> state_names;
  if (optimizer) {
    state_names = optimizer->state_names();
    state_count = 2 * state_names.size();
  }
  put_u64(buf, state_count);
  for (const auto& name : state_names) {
    const auto* m = optimizer->moment1(name);
    const auto* v = optimizer->moment2(name);
    if (!m || !v) throw ContractError("save_checkpoint: incomplete optimizer state for " + name);
    put_tensor(buf, "adam.m." + name, Shape{m->size()}, *m);
    put_tensor(buf, "adam.v." + name, Shape{v->size()}, *v);
  }

  put_u32(buf, crc32_ieee(buf.data(), buf.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ContractError("cannot write checkpoint " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ContractError("write failed for checkpoint " + path);
}

template <typename T>
struct LoadedCheckpoint {
  std::string config_text;
  uint64_t seed = 0;
  uint64_t step = 0;
  ParameterStore<T> store;  // tensors in file order
  // Optimizer moments keyed by parameter name.
  std::unordered_map<std::string, std::vector<T>> adam_m, adam_v;
  bool has_optimizer_state() const { return !adam_m.empty(); }
};

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot open checkpoint " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < sizeof(kCheckpointMagic) + 8) throw FormatError(path + ": file too short");
  if (std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw FormatError(path + ": bad magic bytes");
  }
  const uint32_t stored_crc = [&] {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[buf.size() - 4 + i])) << (8 * i);
    }
    return v;
  }();
  const uint32_t actual_crc = crc32_ieee(buf.data(), buf.size() - 4);
  if (stored_crc != actual_crc) {
    throw CorruptError(cat(path, ": CRC mismatch (stored ", stored_crc, ", computed ",
                           actual_crc, ")"));
  }

  Reader r{buf, sizeof(kCheckpointMagic), path};
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionError(cat(path, ": unsupported checkpoint version ", version));
  }

  LoadedCheckpoint<T> out;
  const uint64_t config_len = r.u64();
  out.config_text = r.bytes(config_len);
  out.seed = r.u64();
  out.step = r.u64();

  const uint64_t tensor_count = r.u64();
  for (uint64_t i = 0; i < tensor_count; ++i) {
    std::string name;
    Shape shape;
    std::vector<T> data;
    read_tensor<T>(r, name, shape, data);
    out.store.add(name, Tensor<T>::from(std::move(shape), std::move(data)));
  }

  const uint64_t state_count = r.u64();
  for (uint64_t i = 0; i < state_count; ++i) {
    std::string name;
    Shape shape;
    std::vector<T> data;
    read_tensor<T>(r, name, shape, data);
    if (name.rfind("adam.m.", 0) == 0) {
      out.adam_m[name.substr(7)] = std::move(data);
    } else if (name.rfind("adam.v.", 0) == 0) {
      out.adam_v[name.substr(7)] = std::move(data);
    } else {
      throw FormatError(path + ": unexpected optimizer-state entry " + name);
    }
  }
  if (r.pos != buf.size() - 4) throw FormatError(path + ": trailing bytes after state table");
  return out;
}

struct CheckpointHeader {
  std::string config_text;
  uint64_t seed = 0;
  uint64_t step = 0;
};

// Validates magic, CRC, and version, then returns just the header fields.
// Used to learn a checkpoint's configuration (and thus its element type)
// before a typed load.
inline CheckpointHeader peek_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot open checkpoint " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (buf.size() < sizeof(kCheckpointMagic) + 8) throw FormatError(path + ": file too short");
  if (std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw FormatError(path + ": bad magic bytes");
  }
  uint32_t stored_crc = 0;
  for (int i = 0; i < 4; ++i) {
    stored_crc |=
        static_cast<uint32_t>(static_cast<unsigned char>(buf[buf.size() - 4 + i])) << (8 * i);
  }
  if (stored_crc != crc32_ieee(buf.data(), buf.size() - 4)) {
    throw CorruptError(path + ": CRC mismatch");
  }
  Reader r{buf, sizeof(kCheckpointMagic), path};
  const uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionError(cat(path, ": unsupported checkpoint version ", version));
  }
  CheckpointHeader h;
  h.config_text = r.bytes(r.u64());
  h.seed = r.u64();
  h.step = r.u64();
  return h;
}

}  // namespace fsgpt
