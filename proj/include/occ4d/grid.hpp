#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "occ4d/core.hpp"
#include "occ4d/error.hpp"

namespace occ4d {

/// Axis-aligned voxel volume. Voxel (ix, iy, iz) has linear index
/// (ix * Y + iy) * Z + iz and is sampled at its center.
struct GridSpec {
  Vec3 origin = Vec3(-10.0, -10.0, -1.0);
  std::array<int, 3> dims = {50, 50, 8};
  double voxel_size = 0.4;
  int num_classes = 4;

  /// 200 x 200 x 16 voxels at 0.4 m over [-40,40]x[-40,40]x[-1,5.4], 17 classes.
  static GridSpec full_scale() {
    return GridSpec{Vec3(-40.0, -40.0, -1.0), {200, 200, 16}, 0.4, 17};
  }
  static GridSpec desk_scale() { return GridSpec{}; }

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
           static_cast<std::size_t>(dims[2]);
  }
  std::size_t index(int ix, int iy, int iz) const {
    return (static_cast<std::size_t>(ix) * static_cast<std::size_t>(dims[1]) +
            static_cast<std::size_t>(iy)) *
               static_cast<std::size_t>(dims[2]) +
           static_cast<std::size_t>(iz);
  }
  std::array<int, 3> coords(std::size_t index) const {
    const int iz = static_cast<int>(index % static_cast<std::size_t>(dims[2]));
    const std::size_t rest = index / static_cast<std::size_t>(dims[2]);
    const int iy = static_cast<int>(rest % static_cast<std::size_t>(dims[1]));
    const int ix = static_cast<int>(rest / static_cast<std::size_t>(dims[1]));
    return {ix, iy, iz};
  }
  Vec3 center(int ix, int iy, int iz) const {
    return origin + voxel_size * Vec3(ix + 0.5, iy + 0.5, iz + 0.5);
  }
  Vec3 center(std::size_t index) const {
    const auto c = coords(index);
    return center(c[0], c[1], c[2]);
  }
  Vec3 extent() const { return voxel_size * Vec3(dims[0], dims[1], dims[2]); }
  int free_label() const { return num_classes; }

  void validate() const {
    for (int d : dims) {
      if (d < 1) {
        fail(ErrorKind::validation, "GridSpec: dims must be >= 1");
      }
    }
    if (!(voxel_size > 0.0)) {
      fail(ErrorKind::validation, "GridSpec: voxel_size must be positive");
    }
    if (num_classes < 1 || num_classes > 254) {
      fail(ErrorKind::validation, "GridSpec: num_classes must be in [1, 254]");
    }
  }

  bool operator==(const GridSpec& o) const {
    return origin == o.origin && dims == o.dims && voxel_size == o.voxel_size &&
           num_classes == o.num_classes;
  }
};

/// Per-voxel occupancy probability and class distribution. class_prob is
/// row-major V x C; rows of voxels with no contribution are all zero.
struct SemanticOccupancyGrid {
  GridSpec spec;
  std::vector<double> occ_prob;
  std::vector<double> class_prob;

  explicit SemanticOccupancyGrid(const GridSpec& s = GridSpec{})
      : spec(s),
        occ_prob(s.voxel_count(), 0.0),
        class_prob(s.voxel_count() * static_cast<std::size_t>(s.num_classes), 0.0) {}

  double cls(std::size_t voxel, int c) const {
    return class_prob[voxel * static_cast<std::size_t>(spec.num_classes) + static_cast<std::size_t>(c)];
  }
};

/// Hard labels in {0..C}; C is free space.
struct LabelGrid {
  GridSpec spec;
  std::vector<std::uint8_t> labels;

  explicit LabelGrid(const GridSpec& s = GridSpec{})
      : spec(s), labels(s.voxel_count(), static_cast<std::uint8_t>(s.free_label())) {}

  int at(int ix, int iy, int iz) const { return labels[spec.index(ix, iy, iz)]; }
  bool occupied(std::size_t i) const { return labels[i] != spec.free_label(); }

  void validate() const {
    spec.validate();
    if (labels.size() != spec.voxel_count()) {
      fail(ErrorKind::validation, "LabelGrid: label count does not match grid");
    }
    for (auto l : labels) {
      if (l > spec.num_classes) {
        fail(ErrorKind::validation, "LabelGrid: label " + std::to_string(l) + " out of range");
      }
    }
  }

  bool operator==(const LabelGrid& o) const { return spec == o.spec && labels == o.labels; }
};

}  // namespace occ4d
