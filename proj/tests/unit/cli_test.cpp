#include <filesystem>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "occ4d/cli.hpp"
#include "test_util.hpp"

using namespace occ4d;
using namespace occ4d::cli;
using fixtures::kind_of;
using fixtures::thrown_kind;

namespace {

std::string scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("occ4d_cli_test_" + name);
  std::filesystem::remove_all(dir);
  return dir.string();
}

std::string path_in(const std::string& dir, const std::string& file) {
  return (std::filesystem::path(dir) / file).string();
}

WorldFile sample_world() {
  std::mt19937_64 rng(5);
  WorldFile w;
  w.grid = GridSpec{Vec3(-2, -2, -1), {8, 8, 4}, 0.5, 4};
  w.horizon = 3.0;
  w.world.v_scene = Vec2(-1.25, 0.5);
  for (int i = 0; i < 6; ++i) w.world.gaussians.push_back(fixtures::random_gaussian(rng));
  w.dynamic_classes = {2};
  return w;
}

FitOptions small_fit(const std::string& scenario, const std::string& out) {
  FitOptions f;
  f.scenario_dir = scenario;
  f.out_dir = out;
  f.steps = 12;
  f.gaussians = 16;
  f.seed = 4;
  return f;
}

}  // namespace

TEST(WorldIo, RoundTripIsExact) {
  const WorldFile w = sample_world();
  const WorldFile back = decode_world(encode_world(w));
  EXPECT_TRUE(back.grid == w.grid);
  EXPECT_EQ(back.horizon, w.horizon);
  EXPECT_EQ(back.world.v_scene, w.world.v_scene);
  EXPECT_EQ(back.dynamic_classes, w.dynamic_classes);
  ASSERT_EQ(back.world.gaussians.size(), w.world.gaussians.size());
  for (std::size_t i = 0; i < w.world.gaussians.size(); ++i) {
    EXPECT_EQ(back.world.gaussians[i].mu_s, w.world.gaussians[i].mu_s);
    EXPECT_EQ(back.world.gaussians[i].quat, w.world.gaussians[i].quat);
    EXPECT_EQ(back.world.gaussians[i].logits, w.world.gaussians[i].logits);
    EXPECT_EQ(back.world.gaussians[i].alpha, w.world.gaussians[i].alpha);
  }
  EXPECT_EQ(encode_world(back), encode_world(w));
}

TEST(WorldIo, CorruptFilesAreIoErrors) {
  auto bytes = encode_world(sample_world());
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(thrown_kind([&] { decode_world(bad_magic); }), kind_of(ErrorKind::io));
  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_EQ(thrown_kind([&] { decode_world(bad_version); }), kind_of(ErrorKind::io));
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  EXPECT_EQ(thrown_kind([&] { decode_world(truncated); }), kind_of(ErrorKind::io));
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_EQ(thrown_kind([&] { decode_world(trailing); }), kind_of(ErrorKind::io));
  EXPECT_EQ(thrown_kind([] { load_world("/nonexistent/dir/world.o4wd"); }), kind_of(ErrorKind::io));
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(exit_code_for(ErrorKind::validation), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::range), 2);
  EXPECT_EQ(exit_code_for(ErrorKind::numeric), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::degenerate_covariance), 3);
  EXPECT_EQ(exit_code_for(ErrorKind::io), 4);
}

TEST(Cli, GenIsDeterministicAndReloads) {
  const std::string a = scratch("gen_a"), b = scratch("gen_b");
  GenOptions o;
  o.seed = 11;
  o.difficulty = "static";
  o.out_dir = a;
  std::ostringstream log;
  EXPECT_EQ(cmd_gen(o, log), 0);
  o.out_dir = b;
  EXPECT_EQ(cmd_gen(o, log), 0);
  const Scenario s = load_scenario_dir(a);
  EXPECT_EQ(s.timestamps.size(), 6u);
  for (double t : s.timestamps) {
    EXPECT_EQ(io::read_file(path_in(a, gt_grid_name(t))), io::read_file(path_in(b, gt_grid_name(t))));
  }
  EXPECT_EQ(io::read_file(path_in(a, "scenario.txt")), io::read_file(path_in(b, "scenario.txt")));
}

TEST(Cli, TamperedGroundTruthIsRejected) {
  const std::string dir = scratch("tamper");
  GenOptions o;
  o.preset = "static_box";
  o.out_dir = dir;
  std::ostringstream log;
  cmd_gen(o, log);
  LabelGrid g = load_grid(path_in(dir, gt_grid_name(1.0))).labels.value();
  g.labels[0] = static_cast<std::uint8_t>(classes::car);
  save_label_grid(path_in(dir, gt_grid_name(1.0)), g);
  EXPECT_EQ(thrown_kind([&] { load_scenario_dir(dir); }), kind_of(ErrorKind::validation));
  EXPECT_EQ(thrown_kind([] { load_scenario_dir("/nonexistent/scenario"); }), kind_of(ErrorKind::io));
}

TEST(Cli, FitQueryReportFlow) {
  const std::string scen = scratch("flow_scen"), out = scratch("flow_out");
  GenOptions g;
  g.preset = "moving_car";
  g.out_dir = scen;
  std::ostringstream log;
  ASSERT_EQ(cmd_gen(g, log), 0);
  ASSERT_EQ(cmd_fit(small_fit(scen, out), log), 0);
  for (const char* f : {"world.o4wd", "metrics.tsv", "trace.tsv", "loss.tsv", "checkpoint.o4ck"}) {
    EXPECT_TRUE(std::filesystem::exists(path_in(out, f))) << f;
  }
  const auto rows = metrics::parse_rows(io::read_text_file(path_in(out, "metrics.tsv")));
  EXPECT_EQ(rows.size(), 12u);

  QueryOptions q;
  q.world_path = path_in(out, "world.o4wd");
  q.t = 1.37;
  q.out_path = path_in(out, "q.o4gr");
  q.voxels_path = path_in(out, "q.txt");
  EXPECT_EQ(cmd_query(q, log), 0);
  const GridFile grid = load_grid(q.out_path);
  EXPECT_TRUE(grid.labels.has_value());
  EXPECT_TRUE(std::filesystem::exists(q.voxels_path));

  q.t = 3.5;
  EXPECT_EQ(thrown_kind([&] { cmd_query(q, log); }), kind_of(ErrorKind::range));
  q.t = -0.1;
  EXPECT_EQ(thrown_kind([&] { cmd_query(q, log); }), kind_of(ErrorKind::range));
  q.extrapolate = true;
  EXPECT_EQ(cmd_query(q, log), 0);

  std::ostringstream table;
  EXPECT_EQ(cmd_report({path_in(out, "metrics.tsv")}, table), 0);
  EXPECT_NE(table.str().find("Avg."), std::string::npos);

  EvalOptions e;
  e.world_path = path_in(out, "world.o4wd");
  e.scenario_dir = scen;
  std::ostringstream eval_log;
  EXPECT_EQ(cmd_eval(e, eval_log), 0);
  EXPECT_EQ(metrics::parse_rows(eval_log.str()).size(), 12u);
}

TEST(Cli, ResumedFitMatchesStraightRun) {
  const std::string scen = scratch("resume_scen"), a = scratch("resume_a"), b = scratch("resume_b");
  GenOptions g;
  g.preset = "static_box";
  g.out_dir = scen;
  std::ostringstream log;
  cmd_gen(g, log);
  ASSERT_EQ(cmd_fit(small_fit(scen, a), log), 0);
  FitOptions first = small_fit(scen, b);
  first.stop_after = 5;
  ASSERT_EQ(cmd_fit(first, log), 0);
  FitOptions second = small_fit(scen, b);
  second.resume = true;
  ASSERT_EQ(cmd_fit(second, log), 0);
  EXPECT_EQ(io::read_file(path_in(a, "world.o4wd")), io::read_file(path_in(b, "world.o4wd")));
  EXPECT_EQ(io::read_text_file(path_in(a, "loss.tsv")), io::read_text_file(path_in(b, "loss.tsv")));
  FitOptions missing = small_fit(scen, scratch("resume_missing"));
  missing.resume = true;
  EXPECT_EQ(thrown_kind([&] { cmd_fit(missing, log); }), kind_of(ErrorKind::io));
}

TEST(Cli, MidpointQueryIsLinearInTime) {
  const WorldFile w = sample_world();
  for (const auto& g : w.world.gaussians) {
    const Vec3 v = effective_velocity(g, w.world.v_scene);
    const Vec3 mid = slice_at(g, v, 0.75).mean;
    const Vec3 avg = 0.5 * (slice_at(g, v, 0.5).mean + slice_at(g, v, 1.0).mean);
    EXPECT_LT((mid - avg).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Cli, GradcheckExitCode) {
  gradsuite::SuiteOptions o;
  o.only = "softmax";
  std::ostringstream log;
  EXPECT_EQ(cmd_gradcheck(o, log), 0);
  o.inject_fault = true;
  EXPECT_EQ(cmd_gradcheck(o, log), 3);
}
