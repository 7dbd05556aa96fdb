#pragma once

// Command implementations behind the occ4d tool. Each command reads and
// writes files, prints a short summary to the given stream and throws
// occ4d::Error on failure; exit_code_for() maps the error kind.

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "occ4d/bench.hpp"
#include "occ4d/config.hpp"
#include "occ4d/grid_io.hpp"
#include "occ4d/gradsuite.hpp"
#include "occ4d/metrics.hpp"
#include "occ4d/optimize.hpp"
#include "occ4d/scenegen.hpp"
#include "occ4d/world_io.hpp"

namespace occ4d::cli {

namespace fs = std::filesystem;

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) fail(ErrorKind::io, "cannot create directory '" + dir + "'");
}

inline std::string timestamp_tag(double t) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", t);
  return buf;
}

inline std::string gt_grid_name(double t) { return "gt_t" + timestamp_tag(t) + ".o4gr"; }

// ---------------------------------------------------------------------------
// gen

struct GenOptions {
  std::uint64_t seed = 0;
  std::string difficulty = "mixed";
  std::string preset;  // static_box | moving_car | straight_drive; overrides difficulty
  std::string out_dir;
};

inline Scenario make_scenario(const GenOptions& o) {
  if (o.preset.empty()) return generate_scenario(o.seed, parse_difficulty(o.difficulty));
  if (o.preset == "static_box") return static_box_scenario();
  if (o.preset == "moving_car") return moving_car_scenario();
  if (o.preset == "straight_drive") return straight_drive_scenario(5.0, o.seed == 0 ? 7 : o.seed);
  fail(ErrorKind::validation, "unknown preset '" + o.preset + "' (expected static_box, moving_car or straight_drive)");
}

/// Writes scenario.txt and one labelled grid per supervised timestamp.
inline int cmd_gen(const GenOptions& o, std::ostream& log) {
  const Scenario s = make_scenario(o);
  ensure_dir(o.out_dir);
  io::write_text_file((fs::path(o.out_dir) / "scenario.txt").string(), scenario_to_text(s));
  for (std::size_t i = 0; i < s.timestamps.size(); ++i) {
    save_label_grid((fs::path(o.out_dir) / gt_grid_name(s.timestamps[i])).string(), s.gt[i]);
  }
  log << "scenario " << s.name << ": " << s.scene.boxes.size() << " boxes, " << s.timestamps.size()
      << " ground-truth grids -> " << o.out_dir << "\n";
  return 0;
}

/// Reads scenario.txt and checks every stored grid against a fresh
/// rasterization of the scene.
inline Scenario load_scenario_dir(const std::string& dir) {
  const std::string path = (fs::path(dir) / "scenario.txt").string();
  Scenario s = scenario_from_text(io::read_text_file(path));
  for (std::size_t i = 0; i < s.timestamps.size(); ++i) {
    const std::string grid_path = (fs::path(dir) / gt_grid_name(s.timestamps[i])).string();
    if (!fs::exists(grid_path)) continue;
    const GridFile f = load_grid(grid_path);
    if (!f.labels) fail(ErrorKind::io, "'" + grid_path + "' carries no labels");
    if (!(*f.labels == s.gt[i])) {
      fail(ErrorKind::validation, "'" + grid_path + "' differs from the rasterized scene at t = " +
                                      timestamp_tag(s.timestamps[i]));
    }
  }
  return s;
}

// ---------------------------------------------------------------------------
// fit

struct FitOptions {
  std::string scenario_dir;
  std::string config_path;
  std::string out_dir;
  std::string variant;  // empty: from config
  long seed = -1;       // < 0: from config
  long steps = -1;
  long stop_after = -1;
  long gaussians = -1;
  bool resume = false;
};

inline std::string trace_text(const optimize::FitResult& r) {
  std::ostringstream os;
  os << "step\tloss\n" << std::setprecision(17);
  for (std::size_t i = 0; i < r.loss_trace.size(); ++i) {
    os << (r.steps_run - static_cast<int>(r.loss_trace.size()) + static_cast<int>(i)) << '\t' << r.loss_trace[i]
       << '\n';
  }
  return os.str();
}

inline int cmd_fit(const FitOptions& o, std::ostream& log) {
  const Scenario s = load_scenario_dir(o.scenario_dir);
  const config::Config cfg = o.config_path.empty() ? config::Config{} : config::Config::load(o.config_path);
  optimize::FitConfig fc = config::fit_config(cfg);
  if (!o.variant.empty()) fc.variant = optimize::parse_variant(o.variant);
  if (o.seed >= 0) fc.seed = static_cast<std::uint64_t>(o.seed);
  if (o.steps >= 0) fc.steps = static_cast<int>(o.steps);
  if (o.gaussians > 0) fc.gaussians = static_cast<std::size_t>(o.gaussians);
  fc.stop_after = static_cast<int>(o.stop_after);
  ensure_dir(o.out_dir);
  const fs::path out(o.out_dir);
  fc.checkpoint_out = (out / "checkpoint.o4ck").string();
  if (o.resume) {
    if (!fs::exists(fc.checkpoint_out)) fail(ErrorKind::io, "no checkpoint to resume at '" + fc.checkpoint_out + "'");
    fc.resume_from = fc.checkpoint_out;
  }
  const optimize::FitResult r = optimize::fit_world(s, fc);
  WorldFile w;
  w.grid = s.grid;
  w.horizon = s.scene.horizon;
  w.world = r.world;
  w.dynamic_classes = fc.dynamic_classes;
  save_world((out / "world.o4wd").string(), w);
  io::write_text_file((out / "metrics.tsv").string(), metrics::format_rows(r.final_metrics));
  io::write_text_file((out / "trace.tsv").string(), metrics::format_rows(r.trace));
  // loss trace is appended across resumed runs
  const std::string loss_path = (out / "loss.tsv").string();
  std::string previous;
  if (o.resume && fs::exists(loss_path)) {
    previous = io::read_text_file(loss_path);
    const std::string fresh = trace_text(r);
    io::write_text_file(loss_path, previous + fresh.substr(fresh.find('\n') + 1));
  } else {
    io::write_text_file(loss_path, trace_text(r));
  }
  double iou = 0.0;
  int n = 0;
  for (const auto& row : r.final_metrics) {
    if (row.metric == "iou") iou += row.value, ++n;
  }
  log << "fit " << s.name << " (" << optimize::variant_name(fc.variant) << "): " << r.steps_run << " steps, loss "
      << std::setprecision(6) << r.final_loss << ", mean IoU " << (n > 0 ? iou / n : 0.0) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// query

struct QueryOptions {
  std::string world_path;
  double t = 0.0;
  std::string out_path;
  bool extrapolate = false;
  std::string voxels_path;  // optional text list of occupied voxels
};

inline SemanticOccupancyGrid query_file(const WorldFile& w, double t, bool extrapolate) {
  if (!(t >= 0.0 && t <= w.horizon) && !extrapolate) {
    fail(ErrorKind::range, "query time " + std::to_string(t) + " s outside [0, " + std::to_string(w.horizon) +
                               "] s (pass --extrapolate to allow)");
  }
  if (!std::isfinite(t)) fail(ErrorKind::range, "query time is not finite");
  return optimize::query_world(w.world, t, w.grid);
}

inline int cmd_query(const QueryOptions& o, std::ostream& log) {
  const WorldFile w = load_world(o.world_path);
  const SemanticOccupancyGrid grid = query_file(w, o.t, o.extrapolate);
  const LabelGrid labels = to_labels(grid);
  save_grid(o.out_path, grid, &labels);
  if (!o.voxels_path.empty()) io::write_text_file(o.voxels_path, voxel_list_text(labels));
  std::size_t occupied = 0;
  for (std::size_t i = 0; i < labels.labels.size(); ++i) occupied += labels.occupied(i);
  log << "t = " << o.t << " s: " << occupied << " occupied voxels -> " << o.out_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// bench

struct BenchOptions {
  std::string world_path;  // empty: synthetic world
  std::vector<double> horizons = bench::BenchConfig{}.horizons;
  int repeats = 21;
  std::size_t synthetic_gaussians = 256;
  std::uint64_t seed = 0;
  std::string out_path;
};

inline bench::BenchReport cmd_bench_report(const BenchOptions& o) {
  bench::BenchConfig cfg;
  cfg.horizons = o.horizons;
  cfg.repeats = o.repeats;
  if (!o.world_path.empty()) {
    const WorldFile w = load_world(o.world_path);
    return bench::run_bench(w.world, w.grid, cfg);
  }
  const GridSpec grid = GridSpec::desk_scale();
  return bench::run_bench(bench::bench_world(o.seed, o.synthetic_gaussians, grid), grid, cfg);
}

inline int cmd_bench(const BenchOptions& o, std::ostream& log) {
  const std::string text = bench::format_bench(cmd_bench_report(o));
  if (!o.out_path.empty()) io::write_text_file(o.out_path, text);
  log << text;
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

inline int cmd_gradcheck(const gradsuite::SuiteOptions& o, std::ostream& log) {
  const auto r = gradsuite::run_gradient_suite(o);
  log << gradsuite::format_report(r, o.tolerance);
  return r.passed ? 0 : exit_code_for(ErrorKind::numeric);
}

// ---------------------------------------------------------------------------
// eval and report

struct EvalOptions {
  std::string world_path;
  std::string scenario_dir;
  std::string out_path;
};

/// IoU / mIoU of a fitted world against the ground truth of a scenario.
inline int cmd_eval(const EvalOptions& o, std::ostream& log) {
  const WorldFile w = load_world(o.world_path);
  const Scenario s = load_scenario_dir(o.scenario_dir);
  if (!(w.grid == s.grid)) fail(ErrorKind::validation, "eval: world and scenario grids differ");
  std::vector<metrics::MetricRow> rows;
  for (std::size_t i = 0; i < s.timestamps.size(); ++i) {
    const LabelGrid pred = to_labels(query_file(w, s.timestamps[i], false));
    rows.push_back({s.name, s.timestamps[i], "iou", metrics::binary_iou(pred, s.gt[i])});
    rows.push_back({s.name, s.timestamps[i], "miou", metrics::mean_iou(pred, s.gt[i]).mean.value_or(0.0)});
  }
  const std::string text = metrics::format_rows(rows);
  if (!o.out_path.empty()) io::write_text_file(o.out_path, text);
  log << text;
  return 0;
}

inline int cmd_report(const std::vector<std::string>& files, std::ostream& log) {
  std::vector<metrics::MetricRow> rows;
  for (const auto& f : files) {
    const auto part = metrics::parse_rows(io::read_text_file(f));
    rows.insert(rows.end(), part.begin(), part.end());
  }
  log << metrics::report_table(rows);
  return 0;
}

}  // namespace occ4d::cli
