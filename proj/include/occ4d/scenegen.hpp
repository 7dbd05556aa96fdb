#pragma once

// Synthetic dynamic scenes: oriented semantic boxes with planar velocities,
// an ego motion profile, ground-truth occupancy in the moving ego frame and
// ground-truth ego waypoints.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "occ4d/core.hpp"
#include "occ4d/error.hpp"
#include "occ4d/grid.hpp"

namespace occ4d {

namespace classes {
inline constexpr int ground = 0;
inline constexpr int building = 1;
inline constexpr int car = 2;
inline constexpr int pedestrian = 3;
inline constexpr int count = 4;
}  // namespace classes

inline std::vector<int> default_dynamic_classes() { return {classes::car, classes::pedestrian}; }

struct SceneBox {
  Vec3 center = Vec3::Zero();  // world frame at t = 0
  Vec3 size = Vec3::Ones();
  double yaw = 0.0;
  int cls = 0;
  Vec2 velocity = Vec2::Zero();
};

struct EgoSegment {
  double t_start = 0.0;
  Vec2 velocity = Vec2::Zero();
};

enum class EgoHeading { fixed, follow_velocity };

struct EgoProfile {
  Vec2 position = Vec2::Zero();
  double yaw = 0.0;
  std::vector<EgoSegment> segments{EgoSegment{}};
  EgoHeading heading = EgoHeading::fixed;
};

struct SceneSpec {
  std::vector<SceneBox> boxes;
  EgoProfile ego;
  double horizon = 3.0;
  int num_classes = classes::count;

  void validate() const {
    if (!(horizon > 0.0)) fail(ErrorKind::validation, "SceneSpec: horizon must be positive");
    if (num_classes < 1 || num_classes > 254) {
      fail(ErrorKind::validation, "SceneSpec: class count must be in [1, 254]");
    }
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      const auto& b = boxes[i];
      if (!(b.size.minCoeff() > 0.0)) {
        fail(ErrorKind::validation, "SceneSpec: box " + std::to_string(i) + " has a non-positive size");
      }
      if (b.cls < 0 || b.cls >= num_classes) {
        fail(ErrorKind::validation, "SceneSpec: box " + std::to_string(i) + " class " +
                                        std::to_string(b.cls) + " outside [0," +
                                        std::to_string(num_classes) + ")");
      }
    }
    if (ego.segments.empty() || ego.segments.front().t_start != 0.0) {
      fail(ErrorKind::validation, "SceneSpec: ego profile must start with a segment at t = 0");
    }
    for (std::size_t i = 1; i < ego.segments.size(); ++i) {
      if (!(ego.segments[i].t_start > ego.segments[i - 1].t_start)) {
        fail(ErrorKind::validation, "SceneSpec: ego segment start times must increase");
      }
    }
  }
};

struct EgoPose {
  Vec2 position = Vec2::Zero();
  double yaw = 0.0;
};

struct EgoState {
  Vec2 position = Vec2::Zero();
  double yaw = 0.0;
  Vec2 velocity = Vec2::Zero();
  Vec2 acceleration = Vec2::Zero();
  double timestamp = 0.0;
};

inline Eigen::Matrix2d rot2(double yaw) {
  Eigen::Matrix2d r;
  r << std::cos(yaw), -std::sin(yaw), std::sin(yaw), std::cos(yaw);
  return r;
}

/// Integrates the piecewise-constant ego velocity; t may be negative for
/// history, in which case the first segment is extrapolated backwards.
inline EgoPose ego_pose_unchecked(const EgoProfile& ego, double t) {
  EgoPose pose{ego.position, ego.yaw};
  const auto& segs = ego.segments;
  if (t <= 0.0) {
    pose.position += segs.front().velocity * t;
    return pose;
  }
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const double begin = segs[i].t_start;
    if (t <= begin) break;
    const double end = i + 1 < segs.size() ? std::min(segs[i + 1].t_start, t) : t;
    const Vec2& v = segs[i].velocity;
    pose.position += v * (end - begin);
    if (ego.heading == EgoHeading::follow_velocity && v.norm() > 0.0) {
      pose.yaw = std::atan2(v.y(), v.x());
    }
  }
  return pose;
}

inline EgoPose ego_pose_at(const SceneSpec& spec, double t) {
  if (!(t >= 0.0 && t <= spec.horizon)) {
    fail(ErrorKind::range, "ego_pose_at: t = " + std::to_string(t) + " outside [0, " +
                               std::to_string(spec.horizon) + "]");
  }
  return ego_pose_unchecked(spec.ego, t);
}

inline Vec2 ego_velocity_at(const EgoProfile& ego, double t) {
  Vec2 v = ego.segments.front().velocity;
  for (const auto& s : ego.segments) {
    if (s.t_start <= t) v = s.velocity;
  }
  return v;
}

inline Vec3 world_to_ego(const EgoPose& pose, const Vec3& p) {
  Vec3 out;
  out.head<2>() = rot2(-pose.yaw) * (p.head<2>() - pose.position);
  out.z() = p.z();
  return out;
}

inline Vec3 ego_to_world(const EgoPose& pose, const Vec3& p) {
  Vec3 out;
  out.head<2>() = rot2(pose.yaw) * p.head<2>() + pose.position;
  out.z() = p.z();
  return out;
}

/// World-frame center of a box at time t.
inline Vec3 box_center_at(const SceneBox& b, double t) {
  Vec3 c = b.center;
  c.head<2>() += b.velocity * t;
  return c;
}

inline bool box_contains(const SceneBox& b, double t, const Vec3& world_point) {
  const Vec3 c = box_center_at(b, t);
  const Vec2 local = rot2(-b.yaw) * (world_point.head<2>() - c.head<2>());
  const Vec3 half = 0.5 * b.size;
  return std::abs(local.x()) <= half.x() && std::abs(local.y()) <= half.y() &&
         std::abs(world_point.z() - c.z()) <= half.z();
}

/// Labels of the boxes (advanced to time t) at the voxel centers of a grid
/// expressed in the ego frame at frame_time. Later boxes overwrite earlier
/// ones; uncovered voxels are free.
inline LabelGrid rasterize_in_frame(const SceneSpec& spec, double t, double frame_time,
                                    const GridSpec& grid) {
  grid.validate();
  if (grid.num_classes != spec.num_classes) {
    fail(ErrorKind::validation, "rasterize_gt: grid has " + std::to_string(grid.num_classes) +
                                    " classes, scene " + std::to_string(spec.num_classes));
  }
  const EgoPose pose = ego_pose_at(spec, frame_time);
  ego_pose_at(spec, t);
  LabelGrid out(grid);
  const Eigen::Matrix2d to_world = rot2(pose.yaw);
  for (std::size_t bi = 0; bi < spec.boxes.size(); ++bi) {
    const SceneBox& b = spec.boxes[bi];
    // Conservative voxel range from the box's bounding circle in the ego frame.
    const Vec3 c_ego = world_to_ego(pose, box_center_at(b, t));
    const double r = 0.5 * b.size.head<2>().norm();
    const double hz = 0.5 * b.size.z();
    auto range = [&](int axis, double lo, double hi) {
      const double v = grid.voxel_size;
      int a = static_cast<int>(std::floor((lo - grid.origin[axis]) / v - 0.5));
      int e = static_cast<int>(std::ceil((hi - grid.origin[axis]) / v - 0.5));
      return std::array<int, 2>{std::max(a, 0), std::min(e, grid.dims[axis] - 1)};
    };
    const auto rx = range(0, c_ego.x() - r, c_ego.x() + r);
    const auto ry = range(1, c_ego.y() - r, c_ego.y() + r);
    const auto rz = range(2, c_ego.z() - hz, c_ego.z() + hz);
    for (int ix = rx[0]; ix <= rx[1]; ++ix) {
      for (int iy = ry[0]; iy <= ry[1]; ++iy) {
        for (int iz = rz[0]; iz <= rz[1]; ++iz) {
          const Vec3 c = grid.center(ix, iy, iz);
          Vec3 w;
          w.head<2>() = to_world * c.head<2>() + pose.position;
          w.z() = c.z();
          if (box_contains(b, t, w)) {
            out.labels[grid.index(ix, iy, iz)] = static_cast<std::uint8_t>(b.cls);
          }
        }
      }
    }
  }
  return out;
}

inline LabelGrid rasterize_gt(const SceneSpec& spec, double t, const GridSpec& grid) {
  return rasterize_in_frame(spec, t, t, grid);
}

/// Ego displacement increments between consecutive timestamps (starting from
/// t = 0), expressed in the ego frame at t = 0.
inline std::vector<Vec2> gt_waypoints(const SceneSpec& spec, const std::vector<double>& timestamps) {
  const EgoPose start = ego_pose_at(spec, 0.0);
  const Eigen::Matrix2d to_ego = rot2(-start.yaw);
  std::vector<Vec2> out;
  Vec2 prev = start.position;
  for (double t : timestamps) {
    const Vec2 p = ego_pose_at(spec, t).position;
    out.push_back(to_ego * (p - prev));
    prev = p;
  }
  return out;
}

/// K states at spacing dt ending at t = 0, in the ego frame at t = 0.
inline std::vector<EgoState> ego_history(const SceneSpec& spec, int count = 4, double dt = 0.5) {
  const EgoPose start = ego_pose_at(spec, 0.0);
  const Eigen::Matrix2d to_ego = rot2(-start.yaw);
  std::vector<EgoState> out;
  for (int k = count - 1; k >= 0; --k) {
    const double t = -dt * k;
    const EgoPose p = ego_pose_unchecked(spec.ego, t);
    EgoState s;
    s.position = to_ego * (p.position - start.position);
    s.yaw = p.yaw - start.yaw;
    s.velocity = to_ego * ego_velocity_at(spec.ego, t);
    s.timestamp = t;
    out.push_back(s);
  }
  return out;
}

inline std::vector<double> default_timestamps() { return {0.5, 1.0, 1.5, 2.0, 2.5, 3.0}; }

struct Scenario {
  std::string name;
  SceneSpec scene;
  GridSpec grid;
  std::vector<double> timestamps = default_timestamps();
  std::vector<LabelGrid> gt;
  std::vector<Vec2> waypoints;
  std::vector<EgoState> history;
};

/// Fills gt, waypoints and history from scene, grid and timestamps.
inline void rasterize_scenario(Scenario& s) {
  s.scene.validate();
  s.gt.clear();
  for (double t : s.timestamps) s.gt.push_back(rasterize_gt(s.scene, t, s.grid));
  s.waypoints = gt_waypoints(s.scene, s.timestamps);
  s.history = ego_history(s.scene);
}

enum class Difficulty { static_scene, mixed, dense };

inline Difficulty parse_difficulty(const std::string& s) {
  if (s == "static") return Difficulty::static_scene;
  if (s == "mixed") return Difficulty::mixed;
  if (s == "dense") return Difficulty::dense;
  fail(ErrorKind::validation, "unknown difficulty '" + s + "' (expected static, mixed or dense)");
}

inline std::string difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::static_scene: return "static";
    case Difficulty::mixed: return "mixed";
    case Difficulty::dense: return "dense";
  }
  return "?";
}

/// Random scene on the default desk grid. Deterministic in seed.
inline Scenario generate_scenario(std::uint64_t seed, Difficulty difficulty,
                                  const GridSpec& grid = GridSpec::desk_scale()) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  int box_count = 4;
  double dynamic_fraction = 0.0, max_speed = 0.0;
  switch (difficulty) {
    case Difficulty::static_scene: box_count = 4; break;
    case Difficulty::mixed: box_count = 6; dynamic_fraction = 0.5; max_speed = 3.0; break;
    case Difficulty::dense: box_count = 12; dynamic_fraction = 0.75; max_speed = 6.0; break;
  }
  Scenario s;
  s.name = "seed" + std::to_string(seed) + "_" + difficulty_name(difficulty);
  s.grid = grid;
  s.scene.num_classes = grid.num_classes;
  s.scene.ego.segments = {EgoSegment{0.0, Vec2(uniform(0.0, 5.0), 0.0)}};
  const Vec3 lo = grid.origin, ext = grid.extent();
  const double ground_top = lo.z() + grid.voxel_size;
  // ground slab under the whole drivable area
  s.scene.boxes.push_back(SceneBox{Vec3(0.0, 0.0, lo.z() + 0.5 * grid.voxel_size),
                                   Vec3(400.0, 400.0, grid.voxel_size), 0.0, classes::ground,
                                   Vec2::Zero()});
  for (int i = 0; i < box_count; ++i) {
    SceneBox b;
    const bool dynamic = unit(rng) < dynamic_fraction;
    if (dynamic) {
      b.cls = unit(rng) < 0.7 ? classes::car : classes::pedestrian;
      b.size = b.cls == classes::car ? Vec3(uniform(3.5, 4.5), uniform(1.6, 2.0), uniform(1.4, 1.8))
                                     : Vec3(uniform(0.6, 0.9), uniform(0.6, 0.9), uniform(1.6, 1.9));
      const double heading = uniform(-M_PI, M_PI);
      const double speed = uniform(0.3 * max_speed, max_speed) * (b.cls == classes::car ? 1.0 : 0.4);
      b.velocity = speed * Vec2(std::cos(heading), std::sin(heading));
      b.yaw = heading;
    } else {
      b.cls = classes::building;
      b.size = Vec3(uniform(2.0, 5.0), uniform(2.0, 5.0), uniform(2.0, 3.0));
      b.yaw = uniform(-M_PI, M_PI);
    }
    b.center = Vec3(lo.x() + uniform(0.15, 0.85) * ext.x() + s.scene.ego.segments[0].velocity.x() * 1.5,
                    lo.y() + uniform(0.15, 0.85) * ext.y(), ground_top + 0.5 * b.size.z());
    s.scene.boxes.push_back(b);
  }
  rasterize_scenario(s);
  return s;
}

/// A single static box on an 8^3 grid with a stationary ego.
inline Scenario static_box_scenario() {
  Scenario s;
  s.name = "static_box";
  s.grid = GridSpec{Vec3(-2.0, -2.0, -2.0), {8, 8, 8}, 0.5, classes::count};
  s.scene.boxes.push_back(SceneBox{Vec3(0.0, 0.0, 0.0), Vec3(2.0, 2.0, 2.0), 0.0,
                                   classes::building, Vec2::Zero()});
  rasterize_scenario(s);
  return s;
}

/// One car driving along +x past a stationary ego.
inline Scenario moving_car_scenario() {
  Scenario s;
  s.name = "moving_car";
  s.grid = GridSpec{Vec3(-5.0, -2.0, -1.0), {20, 8, 4}, 0.5, classes::count};
  s.scene.boxes.push_back(SceneBox{Vec3(-3.0, 0.0, 0.0), Vec3(2.0, 1.5, 1.5), 0.0, classes::car,
                                   Vec2(2.0, 0.0)});
  rasterize_scenario(s);
  return s;
}

/// Ego driving straight along +x at the given speed past static buildings.
inline Scenario straight_drive_scenario(double speed = 5.0, std::uint64_t seed = 7) {
  Scenario s;
  s.name = "straight_drive";
  s.grid = GridSpec{Vec3(-12.0, -6.0, -1.0), {24, 12, 3}, 1.0, classes::count};
  s.scene.ego.segments = {EgoSegment{0.0, Vec2(speed, 0.0)}};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (double x = -10.0; x < 12.0 + speed * s.scene.horizon; x += 4.0) {
    const double side = unit(rng) < 0.5 ? -1.0 : 1.0;
    s.scene.boxes.push_back(SceneBox{Vec3(x + unit(rng), side * (2.5 + 1.5 * unit(rng)), 0.5),
                                     Vec3(2.0 + unit(rng), 2.0 + unit(rng), 2.0), 0.0,
                                     classes::building, Vec2::Zero()});
  }
  rasterize_scenario(s);
  return s;
}

// ---------------------------------------------------------------------------
// Line-oriented text form (grammar in docs/formats.md).

namespace detail {

inline std::string num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

inline std::string scenario_to_text(const Scenario& s) {
  using detail::num;
  std::ostringstream os;
  os << "occ4d-scenario 1\n";
  os << "name " << s.name << "\n";
  os << "classes " << s.scene.num_classes << "\n";
  os << "horizon " << num(s.scene.horizon) << "\n";
  os << "grid " << num(s.grid.origin.x()) << ' ' << num(s.grid.origin.y()) << ' '
     << num(s.grid.origin.z()) << ' ' << s.grid.dims[0] << ' ' << s.grid.dims[1] << ' '
     << s.grid.dims[2] << ' ' << num(s.grid.voxel_size) << "\n";
  os << "ego " << num(s.scene.ego.position.x()) << ' ' << num(s.scene.ego.position.y()) << ' '
     << num(s.scene.ego.yaw) << ' '
     << (s.scene.ego.heading == EgoHeading::fixed ? "fixed" : "follow") << "\n";
  for (const auto& seg : s.scene.ego.segments) {
    os << "segment " << num(seg.t_start) << ' ' << num(seg.velocity.x()) << ' '
       << num(seg.velocity.y()) << "\n";
  }
  for (const auto& b : s.scene.boxes) {
    os << "box " << num(b.center.x()) << ' ' << num(b.center.y()) << ' ' << num(b.center.z())
       << ' ' << num(b.size.x()) << ' ' << num(b.size.y()) << ' ' << num(b.size.z()) << ' '
       << num(b.yaw) << ' ' << b.cls << ' ' << num(b.velocity.x()) << ' '
       << num(b.velocity.y()) << "\n";
  }
  os << "timestamps";
  for (double t : s.timestamps) os << ' ' << num(t);
  os << "\n";
  for (const auto& h : s.history) {
    os << "history " << num(h.timestamp) << ' ' << num(h.position.x()) << ' '
       << num(h.position.y()) << ' ' << num(h.yaw) << ' ' << num(h.velocity.x()) << ' '
       << num(h.velocity.y()) << ' ' << num(h.acceleration.x()) << ' '
       << num(h.acceleration.y()) << "\n";
  }
  for (const auto& w : s.waypoints) os << "waypoint " << num(w.x()) << ' ' << num(w.y()) << "\n";
  return os.str();
}

/// Parses the text form and re-rasterizes the ground truth from the scene.
inline Scenario scenario_from_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  Scenario s;
  s.scene.ego.segments.clear();
  s.timestamps.clear();
  bool header = false;
  auto bad = [&](const std::string& what) {
    fail(ErrorKind::validation, "scenario line " + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (!header) {
      int version = 0;
      if (key != "occ4d-scenario" || !(ls >> version) || version != 1) bad("expected 'occ4d-scenario 1'");
      header = true;
      continue;
    }
    if (key == "name") {
      ls >> s.name;
    } else if (key == "classes") {
      ls >> s.scene.num_classes;
    } else if (key == "horizon") {
      ls >> s.scene.horizon;
    } else if (key == "grid") {
      ls >> s.grid.origin.x() >> s.grid.origin.y() >> s.grid.origin.z() >> s.grid.dims[0] >>
          s.grid.dims[1] >> s.grid.dims[2] >> s.grid.voxel_size;
    } else if (key == "ego") {
      std::string heading;
      ls >> s.scene.ego.position.x() >> s.scene.ego.position.y() >> s.scene.ego.yaw >> heading;
      if (heading != "fixed" && heading != "follow") bad("ego heading must be fixed or follow");
      s.scene.ego.heading = heading == "fixed" ? EgoHeading::fixed : EgoHeading::follow_velocity;
    } else if (key == "segment") {
      EgoSegment seg;
      ls >> seg.t_start >> seg.velocity.x() >> seg.velocity.y();
      s.scene.ego.segments.push_back(seg);
    } else if (key == "box") {
      SceneBox b;
      ls >> b.center.x() >> b.center.y() >> b.center.z() >> b.size.x() >> b.size.y() >>
          b.size.z() >> b.yaw >> b.cls >> b.velocity.x() >> b.velocity.y();
      s.scene.boxes.push_back(b);
    } else if (key == "timestamps") {
      double t;
      while (ls >> t) s.timestamps.push_back(t);
      ls.clear();
    } else if (key == "history" || key == "waypoint") {
      // derived from the scene on load
      continue;
    } else {
      bad("unknown record '" + key + "'");
    }
    if (ls.fail()) bad("malformed '" + key + "' record");
  }
  if (!header) fail(ErrorKind::validation, "scenario: empty input");
  s.grid.num_classes = s.scene.num_classes;
  if (s.scene.ego.segments.empty()) s.scene.ego.segments.push_back(EgoSegment{});
  s.grid.validate();
  rasterize_scenario(s);
  return s;
}

}  // namespace occ4d
