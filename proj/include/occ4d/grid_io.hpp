#pragma once

// Grid binary format (little-endian):
//   "O4GR" | u32 version=1
//   GridSpec: f64 origin[3] | u32 dims[3] | f64 voxel_size | u32 num_classes
//   u8 has_labels
//   f32 occ_prob[V]            (row-major, index (ix*Y+iy)*Z+iz)
//   f32 class_prob[V*C]
//   u8 labels[V]               (only when has_labels == 1)
//
// Plain-text voxel list: one "x y z label" line per occupied voxel.

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>

#include "occ4d/binary_io.hpp"
#include "occ4d/grid.hpp"

namespace occ4d {

inline constexpr std::uint32_t kGridFormatVersion = 1;

inline void encode_grid_spec(io::ByteWriter& w, const GridSpec& s) {
  for (int i = 0; i < 3; ++i) w.f64(s.origin[i]);
  for (int i = 0; i < 3; ++i) w.u32(static_cast<std::uint32_t>(s.dims[i]));
  w.f64(s.voxel_size);
  w.u32(static_cast<std::uint32_t>(s.num_classes));
}

inline GridSpec decode_grid_spec(io::ByteReader& r) {
  GridSpec s;
  for (int i = 0; i < 3; ++i) s.origin[i] = r.f64();
  for (int i = 0; i < 3; ++i) s.dims[i] = static_cast<int>(r.u32());
  s.voxel_size = r.f64();
  s.num_classes = static_cast<int>(r.u32());
  s.validate();
  return s;
}

struct GridFile {
  SemanticOccupancyGrid grid;
  std::optional<LabelGrid> labels;
};

/// Occupancy 1 and a one-hot class row for every occupied label.
inline SemanticOccupancyGrid grid_from_labels(const LabelGrid& labels) {
  SemanticOccupancyGrid g(labels.spec);
  const auto classes = static_cast<std::size_t>(labels.spec.num_classes);
  for (std::size_t v = 0; v < labels.labels.size(); ++v) {
    if (labels.occupied(v)) {
      g.occ_prob[v] = 1.0;
      g.class_prob[v * classes + labels.labels[v]] = 1.0;
    }
  }
  return g;
}

inline std::vector<std::uint8_t> encode_grid(const SemanticOccupancyGrid& grid,
                                             const LabelGrid* labels) {
  io::ByteWriter w;
  w.magic("O4GR");
  w.u32(kGridFormatVersion);
  encode_grid_spec(w, grid.spec);
  w.u8(labels != nullptr ? 1 : 0);
  for (double p : grid.occ_prob) w.f32(static_cast<float>(p));
  for (double p : grid.class_prob) w.f32(static_cast<float>(p));
  if (labels != nullptr) {
    if (!(labels->spec == grid.spec)) {
      fail(ErrorKind::validation, "encode_grid: label grid spec differs from occupancy grid");
    }
    for (auto l : labels->labels) w.u8(l);
  }
  return w.bytes();
}

inline GridFile decode_grid(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("O4GR", "grid");
  const auto version = r.u32();
  if (version != kGridFormatVersion) {
    fail(ErrorKind::io, "grid: unsupported version " + std::to_string(version));
  }
  const GridSpec spec = decode_grid_spec(r);
  const bool has_labels = r.u8() != 0;
  GridFile out{SemanticOccupancyGrid(spec), std::nullopt};
  for (auto& p : out.grid.occ_prob) p = r.f32();
  for (auto& p : out.grid.class_prob) p = r.f32();
  if (has_labels) {
    LabelGrid l(spec);
    for (auto& v : l.labels) v = r.u8();
    l.validate();
    out.labels = std::move(l);
  }
  if (!r.at_end()) {
    fail(ErrorKind::io, "grid: trailing bytes");
  }
  return out;
}

inline void save_grid(const std::string& path, const SemanticOccupancyGrid& grid,
                      const LabelGrid* labels = nullptr) {
  io::write_file(path, encode_grid(grid, labels));
}

inline void save_label_grid(const std::string& path, const LabelGrid& labels) {
  save_grid(path, grid_from_labels(labels), &labels);
}

inline GridFile load_grid(const std::string& path) { return decode_grid(io::read_file(path)); }

inline std::string voxel_list_text(const LabelGrid& labels) {
  std::ostringstream os;
  os << "# x y z label\n";
  for (std::size_t v = 0; v < labels.labels.size(); ++v) {
    if (labels.occupied(v)) {
      const auto c = labels.spec.coords(v);
      os << c[0] << ' ' << c[1] << ' ' << c[2] << ' ' << int(labels.labels[v]) << '\n';
    }
  }
  return os.str();
}

}  // namespace occ4d
