#pragma once

// Named-tensor archive (little-endian):
//   "O4CK" | u32 version=1 | u32 count
//   count x { u32 name_len | name | u32 rank | u64 dims[rank] | f64 data[prod(dims)] }

#include <map>
#include <string>
#include <vector>

#include "occ4d/binary_io.hpp"
#include "occ4d/diff/adam.hpp"
#include "occ4d/diff/graph.hpp"

namespace occ4d::diff {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline std::vector<std::uint8_t> encode_archive(const NamedTensors& tensors) {
  io::ByteWriter w;
  w.magic("O4CK");
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    for (double v : t.values()) w.f64(v);
  }
  return w.bytes();
}

inline NamedTensors decode_archive(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("O4CK", "checkpoint");
  if (const auto version = r.u32(); version != 1) {
    fail(ErrorKind::io, "checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = r.u32();
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const auto rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    Tensor t(shape);
    for (auto& v : t.values()) v = r.f64();
    out.emplace_back(std::move(name), std::move(t));
  }
  if (!r.at_end()) {
    fail(ErrorKind::io, "checkpoint: trailing bytes");
  }
  return out;
}

/// Parameters plus optional optimizer state ("adam.m.<name>", "adam.v.<name>", "adam.step").
inline NamedTensors to_archive(const ParameterStore& store, const AdamState* adam = nullptr) {
  NamedTensors out;
  for (const auto& e : store.entries()) out.emplace_back(e.name, e.value);
  if (adam != nullptr && adam->m.size() == store.size()) {
    out.emplace_back("adam.step", Tensor({1}, static_cast<double>(adam->step)));
    for (std::size_t i = 0; i < store.size(); ++i) {
      out.emplace_back("adam.m." + store.entries()[i].name, adam->m[i]);
      out.emplace_back("adam.v." + store.entries()[i].name, adam->v[i]);
    }
  }
  return out;
}

/// Restores values into an already-initialized store with matching entries.
inline void from_archive(const NamedTensors& tensors, ParameterStore& store,
                         AdamState* adam = nullptr) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [n, t] : tensors) by_name[n] = &t;
  auto take = [&](const std::string& name, const Tensor& like) -> const Tensor& {
    auto it = by_name.find(name);
    if (it == by_name.end()) {
      fail(ErrorKind::io, "checkpoint: missing tensor '" + name + "'");
    }
    if (it->second->shape() != like.shape()) {
      fail(ErrorKind::io, "checkpoint: tensor '" + name + "' has shape " +
                              shape_str(it->second->shape()) + ", expected " + shape_str(like.shape()));
    }
    return *it->second;
  };
  for (auto& e : store.entries()) e.value = take(e.name, e.value);
  if (adam != nullptr) {
    adam->m.clear();
    adam->v.clear();
    adam->step = 0;
    if (by_name.contains("adam.step")) {
      adam->step = static_cast<long>(by_name["adam.step"]->item());
      for (auto& e : store.entries()) {
        adam->m.push_back(take("adam.m." + e.name, e.value));
        adam->v.push_back(take("adam.v." + e.name, e.value));
      }
    }
  }
}

inline void save_checkpoint(const std::string& path, const ParameterStore& store,
                            const AdamState* adam = nullptr) {
  io::write_file(path, encode_archive(to_archive(store, adam)));
}

inline void load_checkpoint(const std::string& path, ParameterStore& store, AdamState* adam = nullptr) {
  from_archive(decode_archive(io::read_file(path)), store, adam);
}

}  // namespace occ4d::diff
