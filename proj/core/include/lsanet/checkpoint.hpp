#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "lsanet/tensor.hpp"

// Checkpoint container: magic "LSAN", a u32 format version, a u32 entry
// count, then one record per tensor:
//   u32 name length, name bytes, u8 dtype tag (1 = f32, 2 = f64),
//   u32 rank, rank x u64 extents, raw element payload.
// All integers and floats are little-endian. Round-trips are bit-exact.
namespace lsanet {

inline constexpr char kCheckpointMagic[4] = {'L', 'S', 'A', 'N'};
inline constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

template <class V>
void write_pod(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_pod(std::istream& is) {
  V v;
  is.read(reinterpret_cast<char*>(&v), sizeof(V));
  LSANET_CHECK(static_cast<bool>(is), "checkpoint: truncated stream");
  return v;
}

template <class T>
constexpr uint8_t dtype_tag() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? 1 : 2;
}

}  // namespace detail

template <class T>
void save_checkpoint(std::ostream& os,
                     const std::vector<std::pair<std::string, const Tensor<T>*>>& tensors) {
  os.write(kCheckpointMagic, 4);
  detail::write_pod<uint32_t>(os, kCheckpointVersion);
  detail::write_pod<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<uint8_t>(os, detail::dtype_tag<T>());
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(t->rank()));
    for (int64_t e : t->shape()) detail::write_pod<uint64_t>(os, static_cast<uint64_t>(e));
    os.write(reinterpret_cast<const char*>(t->data()),
             static_cast<std::streamsize>(t->numel() * sizeof(T)));
  }
  LSANET_CHECK(static_cast<bool>(os), "checkpoint: write failed");
}

template <class T>
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor<T>*>>& tensors) {
  std::ofstream os(path, std::ios::binary);
  LSANET_CHECK(os.is_open(), "checkpoint: cannot open " << path << " for writing");
  save_checkpoint(os, tensors);
}

/// Ordered (name, tensor) list as stored.
template <class T>
std::vector<std::pair<std::string, Tensor<T>>> load_checkpoint(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  LSANET_CHECK(is && std::memcmp(magic, kCheckpointMagic, 4) == 0,
               "checkpoint: bad magic, not a checkpoint file");
  const uint32_t version = detail::read_pod<uint32_t>(is);
  LSANET_CHECK(version == kCheckpointVersion, "checkpoint: unsupported version " << version);
  const uint32_t count = detail::read_pod<uint32_t>(is);
  std::vector<std::pair<std::string, Tensor<T>>> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const uint32_t name_len = detail::read_pod<uint32_t>(is);
    LSANET_CHECK(name_len < (1u << 20), "checkpoint: implausible name length " << name_len);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const uint8_t tag = detail::read_pod<uint8_t>(is);
    LSANET_CHECK(tag == detail::dtype_tag<T>(),
                 "checkpoint: dtype tag " << int(tag) << " does not match requested precision");
    const uint32_t rank = detail::read_pod<uint32_t>(is);
    LSANET_CHECK(rank <= 8, "checkpoint: implausible rank " << rank);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d)
      shape[d] = static_cast<int64_t>(detail::read_pod<uint64_t>(is));
    Tensor<T> t(shape);
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(T)));
    LSANET_CHECK(static_cast<bool>(is), "checkpoint: truncated payload for \"" << name << "\"");
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

template <class T>
std::vector<std::pair<std::string, Tensor<T>>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  LSANET_CHECK(is.is_open(), "checkpoint: cannot open " << path);
  return load_checkpoint<T>(is);
}

/// Copies stored values into the destination tensors by name; every
/// destination must be present with a matching shape.
template <class T>
void restore_into(const std::vector<std::pair<std::string, Tensor<T>>>& stored,
                  const std::vector<std::pair<std::string, Tensor<T>*>>& dst) {
  std::map<std::string, const Tensor<T>*> by_name;
  for (const auto& [name, t] : stored) by_name[name] = &t;
  for (const auto& [name, t] : dst) {
    auto it = by_name.find(name);
    LSANET_CHECK(it != by_name.end(), "checkpoint: missing tensor \"" << name << "\"");
    LSANET_CHECK(it->second->shape() == t->shape(),
                 "checkpoint: tensor \"" << name << "\" has shape " << shape_str(it->second->shape())
                                         << ", expected " << shape_str(t->shape()));
    std::copy(it->second->data(), it->second->data() + it->second->numel(), t->data());
  }
}

}  // namespace lsanet
