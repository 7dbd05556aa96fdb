#pragma once

// Latency of answering "occupancy at time t": the continuous path slices and
// splats once at t; the simulated autoregressive baseline must produce every
// 0.5 s frame up to t before the target.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "occ4d/optimize.hpp"
#include "occ4d/splat.hpp"

namespace occ4d::bench {

struct BenchConfig {
  std::vector<double> horizons = {0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
  int repeats = 21;
  double step = 0.5;
  double cutoff = kDefaultCutoffSigma;
};

struct HorizonTiming {
  double horizon = 0.0;
  double continuous_s = 0.0;  // median seconds per query
  double autoregressive_s = 0.0;
  int ar_steps = 0;
};

struct BenchReport {
  std::vector<HorizonTiming> rows;
  double continuous_slope = 0.0;  // seconds of latency per second of horizon
  double autoregressive_slope = 0.0;
  double single_query_s = 0.0;    // mean continuous median
  double relative_slope = 0.0;    // |continuous_slope| * 1 s / single_query_s
  double ar_linearity_r2 = 0.0;   // fit of AR latency against step count
};

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Least-squares slope and coefficient of determination of y against x.
inline std::pair<double, double> fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  const double slope = sxx > 0 ? sxy / sxx : 0.0;
  const double r2 = sxx > 0 && syy > 0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  return {slope, r2};
}

/// Number of frames the autoregressive baseline produces to reach t.
inline int ar_steps_for(double t, double step) {
  return std::max(1, static_cast<int>(std::ceil(t / step - 1e-9)));
}

inline SemanticOccupancyGrid autoregressive_query(const optimize::ExportedWorld& w, double t, const GridSpec& grid,
                                                  double step, double cutoff) {
  const int steps = ar_steps_for(t, step);
  SemanticOccupancyGrid out(grid);
  for (int k = 1; k <= steps; ++k) {
    out = optimize::query_world(w, std::min(k * step, t), grid, cutoff);
  }
  return out;
}

inline BenchReport run_bench(const optimize::ExportedWorld& w, const GridSpec& grid, const BenchConfig& cfg) {
  if (cfg.horizons.size() < 2) fail(ErrorKind::validation, "bench: needs at least two horizons");
  if (cfg.repeats < 1) fail(ErrorKind::validation, "bench: repeats must be >= 1");
  using clock = std::chrono::steady_clock;
  BenchReport r;
  volatile double sink = 0.0;
  auto timed = [&](auto&& fn) {
    const auto t0 = clock::now();
    const SemanticOccupancyGrid g = fn();
    const auto t1 = clock::now();
    sink = g.occ_prob.empty() ? 0.0 : g.occ_prob[g.occ_prob.size() / 2];
    return std::chrono::duration<double>(t1 - t0).count();
  };
  // warm-up
  optimize::query_world(w, cfg.horizons.front(), grid, cfg.cutoff);
  std::vector<std::vector<double>> cont(cfg.horizons.size()), ar(cfg.horizons.size());
  // interleave horizons so slow drift of the machine spreads evenly
  for (int rep = 0; rep < cfg.repeats; ++rep) {
    for (std::size_t h = 0; h < cfg.horizons.size(); ++h) {
      const double t = cfg.horizons[h];
      cont[h].push_back(timed([&] { return optimize::query_world(w, t, grid, cfg.cutoff); }));
      ar[h].push_back(timed([&] { return autoregressive_query(w, t, grid, cfg.step, cfg.cutoff); }));
    }
  }
  std::vector<double> xs, yc, ya, steps;
  for (std::size_t h = 0; h < cfg.horizons.size(); ++h) {
    HorizonTiming row;
    row.horizon = cfg.horizons[h];
    row.continuous_s = median(cont[h]);
    row.autoregressive_s = median(ar[h]);
    row.ar_steps = ar_steps_for(row.horizon, cfg.step);
    r.rows.push_back(row);
    xs.push_back(row.horizon);
    yc.push_back(row.continuous_s);
    ya.push_back(row.autoregressive_s);
    steps.push_back(row.ar_steps);
    r.single_query_s += row.continuous_s;
  }
  r.single_query_s /= static_cast<double>(cfg.horizons.size());
  r.continuous_slope = fit_line(xs, yc).first;
  r.autoregressive_slope = fit_line(xs, ya).first;
  r.ar_linearity_r2 = fit_line(steps, ya).second;
  r.relative_slope = std::abs(r.continuous_slope) / r.single_query_s;
  return r;
}

inline std::string format_bench(const BenchReport& r) {
  std::ostringstream os;
  os << "occ4d-bench 1\n";
  os << "horizon_s\tcontinuous_ms\tautoregressive_ms\tar_steps\n";
  os << std::fixed;
  for (const auto& row : r.rows) {
    os << std::setprecision(2) << row.horizon << '\t' << std::setprecision(4) << row.continuous_s * 1e3 << '\t'
       << row.autoregressive_s * 1e3 << '\t' << row.ar_steps << '\n';
  }
  os << std::setprecision(6);
  os << "continuous_slope_ms_per_s\t" << r.continuous_slope * 1e3 << '\n';
  os << "autoregressive_slope_ms_per_s\t" << r.autoregressive_slope * 1e3 << '\n';
  os << "single_query_ms\t" << r.single_query_s * 1e3 << '\n';
  os << "relative_slope\t" << r.relative_slope << '\n';
  os << "ar_linearity_r2\t" << r.ar_linearity_r2 << '\n';
  return os.str();
}

/// Synthetic world whose primitives stay well inside the grid over [0, 3] s,
/// so every query touches the same number of voxels.
inline optimize::ExportedWorld bench_world(std::uint64_t seed, std::size_t count, const GridSpec& grid,
                                           double horizon = 3.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  optimize::ExportedWorld w;
  w.v_scene = Vec2(-0.2, 0.0);
  const Vec3 ext = grid.extent();
  const double max_speed = 0.05 * ext.head<2>().minCoeff() / horizon;
  for (std::size_t q = 0; q < count; ++q) {
    Gaussian4D g;
    for (int a = 0; a < 3; ++a) g.mu_s[a] = grid.origin[a] + (0.3 + 0.4 * u(rng)) * ext[a];
    g.mu_t = horizon * u(rng);
    g.log_scales = Vec3::Constant(std::log(grid.voxel_size)) + 0.3 * Vec3(u(rng), u(rng), u(rng));
    g.quat = Vec4(1.0, 0.2 * u(rng), 0.2 * u(rng), 0.2 * u(rng));
    g.log_sigma_t = 0.5;
    g.opacity_logit = 1.0;
    g.logits = VecX::Zero(grid.num_classes);
    g.logits[static_cast<Eigen::Index>(q % static_cast<std::size_t>(grid.num_classes))] = 2.0;
    g.v_dyn = max_speed * Vec2(2 * u(rng) - 1, 2 * u(rng) - 1);
    g.alpha = 1.0;
    w.gaussians.push_back(g);
  }
  return w;
}

}  // namespace occ4d::bench
