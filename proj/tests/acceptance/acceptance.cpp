// End-to-end acceptance run: one PASS/FAIL line per criterion, non-zero exit
// status when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "occ4d/bench.hpp"
#include "occ4d/cli.hpp"
#include "occ4d/gradsuite.hpp"
#include "occ4d/metrics.hpp"
#include "occ4d/optimize.hpp"
#include "occ4d/splat.hpp"
#include "test_util.hpp"

using namespace occ4d;
namespace fs = std::filesystem;

namespace {

// Pinned values measured on the first verified run, with a 10% margin.
constexpr int kStaticBoxBudget = 66;  // first passing budget: 60 steps
constexpr int kMovingCarSteps = 300;
constexpr int kDriveSteps = 600;
constexpr double kDriveLr = 0.05;
constexpr double kAblationTarget = 3.0;
constexpr int kAblationSeeds = 5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

using clock_type = std::chrono::steady_clock;

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("occ4d_acceptance_" + name);
  fs::remove_all(dir);
  return dir.string();
}

double median(std::vector<double> v) { return bench::median(std::move(v)); }

Outcome joint_equivalence() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> t_dist(0.0, 3.0), v_dist(-8.0, 8.0);
  const auto t0 = clock_type::now();
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const Gaussian4D g = fixtures::random_gaussian(rng);
    const Vec3 v = effective_velocity(g, Vec2(v_dist(rng), v_dist(rng)));
    const double t = t_dist(rng);
    const SlicedGaussian3D s = slice_at(g, v, t);
    const ConditionedSpace c = condition_joint(reconstruct_joint(g, v), t);
    worst = std::max({worst, (s.mean - c.mean).cwiseAbs().maxCoeff(), (s.cov - c.cov).cwiseAbs().maxCoeff()});
  }
  const double elapsed = seconds_since(t0);
  return {worst <= 1e-10 && elapsed < 5.0,
          "max abs " + fmt("%.3g", worst) + " (<= 1e-10), " + fmt("%.3f", elapsed) + " s (< 5 s)"};
}

Outcome splat_oracle() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const GridSpec grid{Vec3(-4, -4, -4), {16, 16, 16}, 0.5, 4};
  const double cutoff = 6.0;
  const auto t0 = clock_type::now();
  double worst_occ = 0.0, worst_sem = 0.0;
  for (int scene = 0; scene < 200; ++scene) {
    const int count = 1 + static_cast<int>(rng() % 64);
    std::vector<SlicedGaussian3D> gs;
    for (int q = 0; q < count; ++q) {
      SlicedGaussian3D g;
      g.mean = Vec3(-4 + 8 * u(rng), -4 + 8 * u(rng), -4 + 8 * u(rng));
      const Vec4 quat(u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5);
      const Vec3 log_scales(std::log(0.15 + 0.8 * u(rng)), std::log(0.15 + 0.8 * u(rng)),
                            std::log(0.15 + 0.8 * u(rng)));
      g.cov = conditional_covariance(log_scales, quat.norm() > 0.05 ? quat : Vec4(1, 0, 0, 0));
      g.weight = 0.05 + 0.95 * u(rng);
      g.logits = VecX(4);
      for (int c = 0; c < 4; ++c) g.logits[c] = 4 * u(rng) - 2;
      gs.push_back(g);
    }
    const auto local = splat(gs, grid, cutoff);
    const auto dense = splat_dense_oracle(gs, grid);
    for (std::size_t v = 0; v < grid.voxel_count(); ++v) {
      worst_occ = std::max(worst_occ, std::abs(local.occ_prob[v] - dense.occ_prob[v]));
      for (std::size_t c = 0; c < 4; ++c) {
        const double a = local.occ_prob[v] * local.class_prob[v * 4 + c];
        const double b = dense.occ_prob[v] * dense.class_prob[v * 4 + c];
        worst_sem = std::max(worst_sem, std::abs(a - b));
      }
    }
  }
  const double elapsed = seconds_since(t0);
  return {worst_occ < 1e-6 && worst_sem < 1e-6 && elapsed < 30.0,
          "occ max abs " + fmt("%.3g", worst_occ) + ", occ*class max abs " + fmt("%.3g", worst_sem) +
              " (< 1e-6), " + fmt("%.2f", elapsed) + " s (< 30 s)"};
}

Outcome gradient_suite() {
  const auto r = gradsuite::run_gradient_suite({});
  double worst = 0.0;
  std::string worst_name;
  bool pipeline = false;
  for (const auto& e : r.entries) {
    if (e.max_rel_error > worst) worst = e.max_rel_error, worst_name = e.name;
    pipeline |= e.name == "pipeline_structured";
  }
  return {r.passed && pipeline,
          std::to_string(r.entries.size()) + " paths, worst " + fmt("%.3g", worst) + " (" + worst_name +
              ") < 1e-4, control " + (r.control_detected ? "detected" : "MISSED")};
}

Outcome lovasz_identity() {
  std::mt19937_64 rng(404);
  const GridSpec grid{Vec3(0, 0, 0), {6, 5, 4}, 1.0, 4};
  const int k = grid.num_classes + 1;
  std::size_t compared = 0, mismatched = 0;
  for (int trial = 0; trial < 100; ++trial) {
    LabelGrid gt(grid), pred(grid);
    for (std::size_t i = 0; i < gt.labels.size(); ++i) {
      gt.labels[i] = static_cast<std::uint8_t>(rng() % k);
      pred.labels[i] = rng() % 3 == 0 ? static_cast<std::uint8_t>(rng() % k) : gt.labels[i];
    }
    diff::Tensor probs = diff::Tensor::matrix(gt.labels.size(), static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < gt.labels.size(); ++i) probs(i, pred.labels[i]) = 1.0;
    const auto losses = diff::lovasz_class_losses(probs, gt.labels);
    for (int c = 0; c < k; ++c) {
      const auto iou = metrics::category_counts(pred, gt, c).iou();
      if (!losses[static_cast<std::size_t>(c)]) continue;
      ++compared;
      if (!iou || *losses[static_cast<std::size_t>(c)] != 1.0 - *iou) ++mismatched;
    }
  }
  return {compared > 0 && mismatched == 0,
          std::to_string(compared) + " class losses compared, " + std::to_string(mismatched) + " differ from 1 - IoU"};
}

Outcome stop_gradient() {
  optimize::ToyConfig cfg;
  const Scenario s = moving_car_scenario();
  const auto sample = optimize::make_toy_sample(s, cfg, 3);
  optimize::ToyModel m = optimize::init_toy_model(cfg);
  auto feature_adjoint = [&](bool plan) {
    m.store.zero_grad();
    diff::Graph g;
    const auto f = optimize::toy_forward(g, m.store, cfg, sample);
    g.backward(plan ? f.plan_loss : *f.occ);
    double max_abs = 0.0;
    for (double v : g.grad(f.refined.features).values()) max_abs = std::max(max_abs, std::abs(v));
    double refiner = 0.0;
    for (const auto& e : m.store.entries()) {
      if (e.name.rfind("ref.", 0) != 0) continue;
      for (double v : e.grad.values()) refiner = std::max(refiner, std::abs(v));
    }
    return std::make_pair(max_abs, refiner);
  };
  const auto [plan_feat, plan_ref] = feature_adjoint(true);
  const auto [occ_feat, occ_ref] = feature_adjoint(false);
  return {plan_feat == 0.0 && plan_ref == 0.0 && occ_feat > 0.0 && occ_ref > 0.0,
          "plan: feature adjoint max " + fmt("%.3g", plan_feat) + ", refiner " + fmt("%.3g", plan_ref) +
              "; occupancy: feature adjoint max " + fmt("%.3g", occ_feat) + ", refiner " + fmt("%.3g", occ_ref)};
}

Outcome fit_recovery() {
  optimize::FitConfig box_cfg;
  box_cfg.steps = kStaticBoxBudget;
  box_cfg.log_every = 0;
  const Scenario box = static_box_scenario();
  const auto box_fit = optimize::fit_world(box, box_cfg);
  const double iou = optimize::mean_binary_iou(box_fit.world, box);

  optimize::FitConfig car_cfg;
  car_cfg.steps = kMovingCarSteps;
  car_cfg.log_every = 0;
  const Scenario car = moving_car_scenario();
  const auto car_fit = optimize::fit_world(car, car_cfg);
  Vec2 weighted = Vec2::Zero();
  double mass = 0.0;
  for (const auto& g : car_fit.world.gaussians) {
    Eigen::Index cls = 0;
    g.logits.maxCoeff(&cls);
    if (cls != classes::car) continue;
    weighted += g.opacity() * effective_velocity(g, car_fit.world.v_scene).head<2>();
    mass += g.opacity();
  }
  const Vec2 truth = car.scene.boxes.front().velocity - ego_velocity_at(car.scene.ego, 1.5);
  const Vec2 fitted = mass > 0.0 ? Vec2(weighted / mass) : Vec2::Zero();
  const double cos_angle = fitted.norm() > 0.0 ? fitted.dot(truth) / (fitted.norm() * truth.norm()) : -1.0;
  const double angle = std::acos(std::clamp(cos_angle, -1.0, 1.0)) * 180.0 / M_PI;
  const double magnitude = std::abs(fitted.norm() - truth.norm()) / truth.norm();
  return {iou >= 0.7 && angle <= 30.0 && magnitude <= 0.5,
          "static box IoU " + fmt("%.3f", iou) + " (>= 0.7) in " + std::to_string(kStaticBoxBudget) +
              " steps; car velocity angle " + fmt("%.2f", angle) + " deg (<= 30), magnitude error " +
              fmt("%.0f%%", 100 * magnitude) + " (<= 50%)"};
}

optimize::FitConfig drive_config(std::uint64_t seed, optimize::Variant v) {
  optimize::FitConfig c;
  c.seed = seed;
  c.steps = kDriveSteps;
  c.lr = kDriveLr;
  c.log_every = 0;
  c.variant = v;
  return c;
}

Outcome ego_sign() {
  const Scenario s = straight_drive_scenario(5.0);
  const auto r = optimize::fit_world(s, drive_config(0, optimize::Variant::structured));
  const double err = (r.world.v_scene - Vec2(-5.0, 0.0)).norm();
  std::ostringstream os;
  os << "fitted v_scene (" << fmt("%.3f", r.world.v_scene.x()) << ", " << fmt("%.3f", r.world.v_scene.y())
     << "), distance to (-5, 0) " << fmt("%.3f", err) << " (<= 0.5)";
  return {err <= 0.5, os.str()};
}

Outcome ablation_direction() {
  const Scenario s = straight_drive_scenario(5.0);
  auto hit_step = [](const std::vector<double>& trace) {
    for (std::size_t i = 0; i < trace.size(); ++i) {
      if (trace[i] <= kAblationTarget) return static_cast<double>(i);
    }
    return static_cast<double>(kDriveSteps);
  };
  std::vector<double> structured_hit, unified_hit, structured_loss, full_loss;
  for (std::uint64_t seed = 0; seed < kAblationSeeds; ++seed) {
    const auto st = optimize::fit_world(s, drive_config(seed, optimize::Variant::structured));
    structured_hit.push_back(hit_step(st.loss_trace));
    structured_loss.push_back(st.final_loss);
    auto uc = drive_config(seed, optimize::Variant::unified_velocity);
    uc.target_loss = kAblationTarget;
    const auto un = optimize::fit_world(s, uc);
    unified_hit.push_back(un.reached_target_step ? *un.reached_target_step : kDriveSteps);
    full_loss.push_back(optimize::fit_world(s, drive_config(seed, optimize::Variant::full_4d_covariance)).final_loss);
  }
  gradsuite::SuiteOptions o;
  o.only = "full_4d";
  const bool full_grads = gradsuite::run_gradient_suite(o).passed;
  const double sh = median(structured_hit), uh = median(unified_hit);
  const double sl = median(structured_loss), fl = median(full_loss);
  return {sh <= uh && fl >= sl && full_grads,
          "median steps to loss " + fmt("%.1f", kAblationTarget) + ": structured " + fmt("%.0f", sh) + " <= unified " +
              fmt("%.0f", uh) + "; median loss after " + std::to_string(kDriveSteps) + " steps: full-4D " +
              fmt("%.4f", fl) + " >= structured " + fmt("%.4f", sl) + "; full-4D gradients " +
              (full_grads ? "pass" : "FAIL")};
}

Outcome continuous_query() {
  cli::BenchOptions b;
  b.repeats = 31;
  const auto r = cli::cmd_bench_report(b);

  const std::string scen = scratch("query_scen"), out = scratch("query_fit");
  std::ostringstream log;
  cli::GenOptions gen;
  gen.preset = "moving_car";
  gen.out_dir = scen;
  cli::cmd_gen(gen, log);
  cli::FitOptions fit;
  fit.scenario_dir = scen;
  fit.out_dir = out;
  fit.steps = 40;
  cli::cmd_fit(fit, log);
  cli::QueryOptions q;
  q.world_path = (fs::path(out) / "world.o4wd").string();
  q.t = 0.75;
  q.out_path = (fs::path(out) / "q075.o4gr").string();
  const int rc = cli::cmd_query(q, log);
  const WorldFile w = load_world(q.world_path);
  double midpoint = 0.0;
  for (const auto& g : w.world.gaussians) {
    const Vec3 v = effective_velocity(g, w.world.v_scene);
    const Vec3 avg = 0.5 * (slice_at(g, v, 0.5).mean + slice_at(g, v, 1.0).mean);
    midpoint = std::max(midpoint, (slice_at(g, v, 0.75).mean - avg).cwiseAbs().maxCoeff());
  }
  const double ar_growth = r.rows.back().autoregressive_s / r.rows.front().autoregressive_s;
  return {r.relative_slope < 0.05 && r.autoregressive_slope > 0.0 && r.ar_linearity_r2 >= 0.95 && rc == 0 &&
              midpoint <= 1e-12,
          "continuous slope " + fmt("%.2f%%", 100 * r.relative_slope) + " of single query (< 5%); AR r^2 " +
              fmt("%.4f", r.ar_linearity_r2) + " (>= 0.95), 3 s / 0.5 s latency x" + fmt("%.2f", ar_growth) +
              "; t=0.75 midpoint error " + fmt("%.3g", midpoint) + " (<= 1e-12)"};
}

bool same_tree(const std::string& a, const std::string& b, std::size_t& files) {
  files = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    const fs::path other = fs::path(b) / entry.path().filename();
    if (!fs::exists(other) || io::read_file(entry.path().string()) != io::read_file(other.string())) return false;
    ++files;
  }
  std::size_t other_count = 0;
  for ([[maybe_unused]] const auto& entry : fs::directory_iterator(b)) ++other_count;
  return other_count == files;
}

Outcome determinism() {
  std::ostringstream log;
  std::vector<std::string> gens, fits;
  for (int run = 0; run < 2; ++run) {
    cli::GenOptions gen;
    gen.seed = 5;
    gen.difficulty = "mixed";
    gen.out_dir = scratch("gen" + std::to_string(run));
    cli::cmd_gen(gen, log);
    cli::FitOptions fit;
    fit.scenario_dir = gen.out_dir;
    fit.out_dir = scratch("fit" + std::to_string(run));
    fit.seed = 9;
    fit.steps = 15;
    fit.gaussians = 64;
    cli::cmd_fit(fit, log);
    gens.push_back(gen.out_dir);
    fits.push_back(fit.out_dir);
  }
  std::size_t gen_files = 0, fit_files = 0;
  const bool gen_same = same_tree(gens[0], gens[1], gen_files);
  const bool fit_same = same_tree(fits[0], fits[1], fit_files);
  return {gen_same && fit_same && gen_files > 0 && fit_files > 0,
          "gen: " + std::to_string(gen_files) + " files " + (gen_same ? "identical" : "DIFFER") + "; fit: " +
              std::to_string(fit_files) + " files " + (fit_same ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"structured/joint equivalence", joint_equivalence},
      {"splat oracle equivalence", splat_oracle},
      {"gradient suite", gradient_suite},
      {"lovasz identity", lovasz_identity},
      {"stop-gradient contract", stop_gradient},
      {"fit recovery", fit_recovery},
      {"ego sign convention", ego_sign},
      {"ablation direction", ablation_direction},
      {"continuous query", continuous_query},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    const auto t0 = clock_type::now();
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first << ": " << o.detail
              << "  [" << fmt("%.1f", seconds_since(t0)) << " s]" << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
            << " acceptance criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
