#pragma once

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "occ4d/core.hpp"
#include "occ4d/error.hpp"
#include "occ4d/grid.hpp"

namespace occ4d::metrics {

namespace detail {

inline void require_same_spec(const LabelGrid& pred, const LabelGrid& gt, const char* op) {
  if (!(pred.spec == gt.spec) || pred.labels.size() != gt.labels.size()) {
    fail(ErrorKind::validation, std::string(op) + ": prediction and ground truth grids differ");
  }
}

}  // namespace detail

struct Counts {
  std::uint64_t intersection = 0;
  std::uint64_t union_ = 0;

  std::optional<double> iou() const {
    if (union_ == 0) return std::nullopt;
    return static_cast<double>(intersection) / static_cast<double>(union_);
  }
};

/// Intersection and union counts of one category, including the free label.
inline Counts category_counts(const LabelGrid& pred, const LabelGrid& gt, int category) {
  detail::require_same_spec(pred, gt, "category_counts");
  Counts c;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const bool p = pred.labels[i] == category;
    const bool g = gt.labels[i] == category;
    c.intersection += p && g;
    c.union_ += p || g;
  }
  return c;
}

/// Occupied-versus-free overlap; 1 when both grids are empty.
inline double binary_iou(const LabelGrid& pred, const LabelGrid& gt) {
  detail::require_same_spec(pred, gt, "binary_iou");
  std::uint64_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const bool p = pred.occupied(i);
    const bool g = gt.occupied(i);
    inter += p && g;
    uni += p || g;
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

struct MeanIou {
  std::optional<double> mean;                 // empty when no class is present
  std::vector<std::optional<double>> per_class;  // semantic classes only
};

inline MeanIou mean_iou(const LabelGrid& pred, const LabelGrid& gt) {
  detail::require_same_spec(pred, gt, "mean_iou");
  const int classes = gt.spec.num_classes;
  std::vector<std::uint64_t> inter(static_cast<std::size_t>(classes), 0);
  std::vector<std::uint64_t> uni(static_cast<std::size_t>(classes), 0);
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    const int p = pred.labels[i], g = gt.labels[i];
    if (p == g) {
      if (g < classes) ++inter[g], ++uni[g];
      continue;
    }
    if (p < classes) ++uni[p];
    if (g < classes) ++uni[g];
  }
  MeanIou out;
  out.per_class.resize(static_cast<std::size_t>(classes));
  double sum = 0.0;
  int present = 0;
  for (int c = 0; c < classes; ++c) {
    if (uni[c] == 0) continue;
    out.per_class[c] = static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
    sum += *out.per_class[c];
    ++present;
  }
  if (present > 0) out.mean = sum / present;
  return out;
}

/// Horizons (in seconds) evaluated for forecasting and planning tables.
inline std::vector<double> default_horizons() { return {1.0, 2.0, 3.0}; }

struct HorizonValues {
  std::vector<double> horizons;
  std::vector<double> values;
  double average = 0.0;
};

inline std::size_t horizon_index(double horizon, double step, std::size_t length) {
  const long k = std::lround(horizon / step) - 1;
  if (k < 0 || static_cast<std::size_t>(k) >= length) {
    fail(ErrorKind::validation, "horizon " + std::to_string(horizon) + " s needs waypoint " +
                                    std::to_string(k) + " but only " + std::to_string(length) +
                                    " are available");
  }
  return static_cast<std::size_t>(k);
}

inline HorizonValues l2_at_horizons(const std::vector<Vec2>& pred, const std::vector<Vec2>& gt,
                                    const std::vector<double>& horizons = default_horizons(),
                                    double step = 0.5) {
  if (pred.size() != gt.size()) {
    fail(ErrorKind::validation, "l2_at_horizons: " + std::to_string(pred.size()) +
                                    " predicted vs " + std::to_string(gt.size()) + " GT positions");
  }
  HorizonValues out;
  out.horizons = horizons;
  for (double h : horizons) {
    const std::size_t k = horizon_index(h, step, gt.size());
    out.values.push_back((pred[k] - gt[k]).norm());
    out.average += out.values.back();
  }
  if (!horizons.empty()) out.average /= static_cast<double>(horizons.size());
  return out;
}

struct Footprint {
  double length = 4.0;
  double width = 1.8;
};

/// Whether any non-ground labelled voxel center of the grid falls inside the
/// footprint rectangle centred at position with the given heading. Voxels are
/// tested over all heights.
inline bool footprint_collides(const LabelGrid& grid, const Vec2& position, double heading,
                               const Footprint& fp, int drivable_class = 0) {
  const auto& spec = grid.spec;
  const double c = std::cos(heading), s = std::sin(heading);
  const double reach = 0.5 * std::hypot(fp.length, fp.width);
  auto range = [&](int axis, double lo, double hi) {
    const double v = spec.voxel_size;
    const int a = static_cast<int>(std::floor((lo - spec.origin[axis]) / v - 0.5));
    const int e = static_cast<int>(std::ceil((hi - spec.origin[axis]) / v - 0.5));
    return std::array<int, 2>{std::max(a, 0), std::min(e, spec.dims[axis] - 1)};
  };
  const auto rx = range(0, position.x() - reach, position.x() + reach);
  const auto ry = range(1, position.y() - reach, position.y() + reach);
  for (int ix = rx[0]; ix <= rx[1]; ++ix) {
    for (int iy = ry[0]; iy <= ry[1]; ++iy) {
      const Vec3 center = spec.center(ix, iy, 0);
      const double dx = center.x() - position.x(), dy = center.y() - position.y();
      const double along = c * dx + s * dy, across = -s * dx + c * dy;
      if (std::abs(along) > 0.5 * fp.length || std::abs(across) > 0.5 * fp.width) continue;
      for (int iz = 0; iz < spec.dims[2]; ++iz) {
        const int label = grid.labels[spec.index(ix, iy, iz)];
        if (label != spec.free_label() && label != drivable_class) return true;
      }
    }
  }
  return false;
}

/// Headings from each step's displacement; a stationary step keeps the
/// previous heading (the first defaults to initial_heading).
inline std::vector<double> step_headings(const std::vector<Vec2>& positions, const Vec2& start,
                                         double initial_heading = 0.0) {
  std::vector<double> out;
  double heading = initial_heading;
  Vec2 prev = start;
  for (const auto& p : positions) {
    const Vec2 d = p - prev;
    if (d.norm() > 1e-9) heading = std::atan2(d.y(), d.x());
    out.push_back(heading);
    prev = p;
  }
  return out;
}

struct CollisionResult {
  std::vector<bool> collides;  // per waypoint
  HorizonValues per_horizon;   // percentage, cumulative up to each horizon
  double average = 0.0;        // percentage over all waypoints
};

/// Positions and grids share one frame; grids[k] is the occupancy at the
/// time of positions[k].
inline CollisionResult collision_rate(const std::vector<Vec2>& positions,
                                      const std::vector<LabelGrid>& grids,
                                      const Footprint& fp = {}, const Vec2& start = Vec2::Zero(),
                                      const std::vector<double>& horizons = default_horizons(),
                                      double step = 0.5) {
  if (grids.size() < positions.size()) {
    fail(ErrorKind::validation, "collision_rate: no ground-truth grid for waypoint " +
                                    std::to_string(grids.size()));
  }
  CollisionResult out;
  const auto headings = step_headings(positions, start);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < positions.size(); ++k) {
    out.collides.push_back(footprint_collides(grids[k], positions[k], headings[k], fp));
    hits += out.collides.back();
  }
  out.average = positions.empty() ? 0.0 : 100.0 * static_cast<double>(hits) / positions.size();
  out.per_horizon.horizons = horizons;
  for (double h : horizons) {
    const std::size_t k = horizon_index(h, step, positions.size());
    std::size_t n = 0;
    for (std::size_t j = 0; j <= k; ++j) n += out.collides[j];
    out.per_horizon.values.push_back(100.0 * static_cast<double>(n) / static_cast<double>(k + 1));
    out.per_horizon.average += out.per_horizon.values.back();
  }
  if (!horizons.empty()) out.per_horizon.average /= static_cast<double>(horizons.size());
  return out;
}

// ---------------------------------------------------------------------------
// Delimited text rows: scenario \t timestamp \t metric \t value

struct MetricRow {
  std::string scenario;
  double timestamp = 0.0;
  std::string metric;
  double value = 0.0;
};

inline std::string format_rows(const std::vector<MetricRow>& rows, bool header = true) {
  std::ostringstream os;
  if (header) os << "scenario\ttimestamp\tmetric\tvalue\n";
  os << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.scenario << '\t' << r.timestamp << '\t' << r.metric << '\t' << r.value << '\n';
  }
  return os.str();
}

inline std::vector<MetricRow> parse_rows(const std::string& text) {
  std::vector<MetricRow> rows;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.rfind("scenario\t", 0) == 0) continue;
    std::vector<std::string> cols;
    std::size_t pos = 0;
    while (true) {
      const std::size_t tab = line.find('\t', pos);
      cols.push_back(line.substr(pos, tab - pos));
      if (tab == std::string::npos) break;
      pos = tab + 1;
    }
    if (cols.size() != 4) {
      fail(ErrorKind::validation, "metrics line " + std::to_string(line_no) + ": expected 4 columns, got " +
                                      std::to_string(cols.size()));
    }
    MetricRow r;
    r.scenario = cols[0];
    r.metric = cols[2];
    try {
      r.timestamp = std::stod(cols[1]);
      r.value = std::stod(cols[3]);
    } catch (const std::exception&) {
      fail(ErrorKind::validation, "metrics line " + std::to_string(line_no) + ": bad number");
    }
    rows.push_back(r);
  }
  return rows;
}

/// Per metric, the mean over scenarios at each horizon and the mean over
/// horizons, laid out as "metric 1s 2s 3s Avg.". Rows at other timestamps
/// are ignored. Metrics are listed in lexicographic order.
inline std::string report_table(const std::vector<MetricRow>& rows,
                                const std::vector<double>& horizons = default_horizons()) {
  if (rows.empty()) return "empty report: no metric rows\n";
  std::map<std::string, std::vector<std::vector<double>>> acc;
  for (const auto& r : rows) {
    auto& cols = acc[r.metric];
    cols.resize(horizons.size());
    for (std::size_t h = 0; h < horizons.size(); ++h) {
      if (std::abs(r.timestamp - horizons[h]) < 1e-9) cols[h].push_back(r.value);
    }
  }
  std::ostringstream os;
  os << std::left << std::setw(16) << "metric";
  for (double h : horizons) {
    std::ostringstream hs;
    hs << h << "s";
    os << std::right << std::setw(10) << hs.str();
  }
  os << std::setw(10) << "Avg." << "\n";
  os << std::fixed << std::setprecision(4);
  for (const auto& [metric, cols] : acc) {
    os << std::left << std::setw(16) << metric << std::right;
    double total = 0.0;
    int n = 0;
    for (const auto& c : cols) {
      if (c.empty()) {
        os << std::setw(10) << "-";
        continue;
      }
      double m = 0.0;
      for (double v : c) m += v;
      m /= static_cast<double>(c.size());
      total += m;
      ++n;
      os << std::setw(10) << m;
    }
    if (n > 0) {
      os << std::setw(10) << total / n << "\n";
    } else {
      os << std::setw(10) << "-" << "\n";
    }
  }
  return os.str();
}

}  // namespace occ4d::metrics
