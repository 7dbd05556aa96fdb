#pragma once

// Fitted world file:
//   "O4WD" | u32 version=1 | grid spec | f64 horizon | f64 v_scene x, y
//   | u32 dynamic class count | u32 class ids... | embedded gaussian set

#include <string>
#include <vector>

#include "occ4d/binary_io.hpp"
#include "occ4d/gaussian_io.hpp"
#include "occ4d/grid_io.hpp"
#include "occ4d/optimize.hpp"

namespace occ4d {

inline constexpr std::uint32_t kWorldFormatVersion = 1;

struct WorldFile {
  GridSpec grid;
  double horizon = 3.0;
  optimize::ExportedWorld world;
  std::vector<int> dynamic_classes = default_dynamic_classes();
};

inline std::vector<std::uint8_t> encode_world(const WorldFile& w) {
  io::ByteWriter out;
  out.magic("O4WD");
  out.u32(kWorldFormatVersion);
  encode_grid_spec(out, w.grid);
  out.f64(w.horizon);
  out.f64(w.world.v_scene.x());
  out.f64(w.world.v_scene.y());
  out.u32(static_cast<std::uint32_t>(w.dynamic_classes.size()));
  for (int c : w.dynamic_classes) out.u32(static_cast<std::uint32_t>(c));
  encode_gaussians(out, w.world.gaussians, w.grid.num_classes);
  return out.bytes();
}

inline WorldFile decode_world(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("O4WD", "world");
  if (const auto version = r.u32(); version != kWorldFormatVersion) {
    fail(ErrorKind::io, "world: unsupported version " + std::to_string(version));
  }
  WorldFile w;
  w.grid = decode_grid_spec(r);
  w.horizon = r.f64();
  w.world.v_scene.x() = r.f64();
  w.world.v_scene.y() = r.f64();
  const auto n = r.u32();
  w.dynamic_classes.clear();
  for (std::uint32_t i = 0; i < n; ++i) w.dynamic_classes.push_back(static_cast<int>(r.u32()));
  int classes = 0;
  w.world.gaussians = decode_gaussians(r, &classes);
  if (classes != w.grid.num_classes) {
    fail(ErrorKind::io, "world: gaussian set has " + std::to_string(classes) + " classes, grid " +
                            std::to_string(w.grid.num_classes));
  }
  if (!r.at_end()) fail(ErrorKind::io, "world: trailing bytes");
  return w;
}

inline void save_world(const std::string& path, const WorldFile& w) { io::write_file(path, encode_world(w)); }
inline WorldFile load_world(const std::string& path) { return decode_world(io::read_file(path)); }

}  // namespace occ4d
