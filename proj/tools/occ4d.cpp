#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "occ4d/cli.hpp"

namespace {

int run(int argc, char** argv) {
  using namespace occ4d;
  CLI::App app{"occ4d: continuous 4D Gaussian occupancy world model toolkit"};
  app.require_subcommand(1);

  cli::GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic scenario and its ground-truth grids");
  gen_cmd->add_option("--seed", gen.seed, "Random seed")->default_val(0);
  gen_cmd->add_option("--difficulty", gen.difficulty, "static, mixed or dense")
      ->default_val("mixed")
      ->check(CLI::IsMember({"static", "mixed", "dense"}));
  gen_cmd->add_option("--preset", gen.preset, "Fixed scene instead of a random one")
      ->check(CLI::IsMember({"static_box", "moving_car", "straight_drive"}));
  gen_cmd->add_option("--out", gen.out_dir, "Output directory")->required();

  cli::FitOptions fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit one shared Gaussian set to a scenario");
  fit_cmd->add_option("--scenario", fit.scenario_dir, "Scenario directory written by gen")->required();
  fit_cmd->add_option("--config", fit.config_path, "key = value config file with [fit]/[loss]/[scene] sections");
  fit_cmd->add_option("--out", fit.out_dir, "Output directory")->required();
  fit_cmd->add_option("--variant", fit.variant, "structured, unified_velocity or full_4d_covariance")
      ->check(CLI::IsMember({"structured", "unified_velocity", "full_4d_covariance"}));
  fit_cmd->add_option("--seed", fit.seed, "Override fit.seed");
  fit_cmd->add_option("--steps", fit.steps, "Override fit.steps (schedule length)");
  fit_cmd->add_option("--gaussians", fit.gaussians, "Override fit.gaussians");
  fit_cmd->add_option("--stop-after", fit.stop_after, "Halt after this many steps (checkpoint is kept)");
  fit_cmd->add_flag("--resume", fit.resume, "Continue from <out>/checkpoint.o4ck");

  cli::QueryOptions query;
  auto* query_cmd = app.add_subcommand("query", "Occupancy grid of a fitted world at any time t");
  query_cmd->add_option("--world", query.world_path, "World file written by fit")->required();
  query_cmd->add_option("--t", query.t, "Query time in seconds")->required();
  query_cmd->add_option("--out", query.out_path, "Output grid file")->required();
  query_cmd->add_option("--voxels", query.voxels_path, "Also write occupied voxels as text");
  query_cmd->add_flag("--extrapolate", query.extrapolate, "Allow t outside the fitted horizon");

  cli::BenchOptions bench;
  auto* bench_cmd = app.add_subcommand("bench", "Continuous query vs autoregressive rollout latency");
  bench_cmd->add_option("--world", bench.world_path, "World file (default: synthetic world)");
  bench_cmd->add_option("--horizons", bench.horizons, "Target horizons in seconds")->delimiter(',');
  bench_cmd->add_option("--repeats", bench.repeats, "Timed repeats per horizon")->default_val(21);
  bench_cmd->add_option("--gaussians", bench.synthetic_gaussians, "Primitives of the synthetic world")
      ->default_val(256);
  bench_cmd->add_option("--seed", bench.seed, "Seed of the synthetic world")->default_val(0);
  bench_cmd->add_option("--out", bench.out_path, "Also write the report here");

  gradsuite::SuiteOptions grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable path");
  grad_cmd->add_option("--tolerance", grad.tolerance, "Relative error bound")->default_val(1e-4);
  grad_cmd->add_option("--step", grad.step, "Central-difference step")->default_val(1e-5);
  grad_cmd->add_option("--seed", grad.seed, "Seed of the random instances")->default_val(1);
  grad_cmd->add_option("--only", grad.only, "Run only operators whose name contains this");
  grad_cmd->add_flag("--inject-fault", grad.inject_fault, "Include the corrupted-adjoint operator");

  cli::EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "IoU / mIoU of a fitted world against a scenario");
  eval_cmd->add_option("--world", eval.world_path, "World file")->required();
  eval_cmd->add_option("--scenario", eval.scenario_dir, "Scenario directory")->required();
  eval_cmd->add_option("--out", eval.out_path, "Metrics file");

  std::vector<std::string> report_files;
  auto* report_cmd = app.add_subcommand("report", "Aggregate metrics files into a 1s/2s/3s/Avg. table");
  report_cmd->add_option("files", report_files, "Metrics files")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : exit_code_for(ErrorKind::validation);
  }

  if (*gen_cmd) return cli::cmd_gen(gen, std::cout);
  if (*fit_cmd) return cli::cmd_fit(fit, std::cout);
  if (*query_cmd) return cli::cmd_query(query, std::cout);
  if (*bench_cmd) return cli::cmd_bench(bench, std::cout);
  if (*grad_cmd) return cli::cmd_gradcheck(grad, std::cout);
  if (*eval_cmd) return cli::cmd_eval(eval, std::cout);
  if (*report_cmd) return cli::cmd_report(report_files, std::cout);
  return exit_code_for(ErrorKind::validation);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const occ4d::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return occ4d::exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return occ4d::exit_code_for(occ4d::ErrorKind::validation);
  }
}
