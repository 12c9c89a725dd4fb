#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <string>

#include "gnflow/cli.hpp"
#include "gnflow/errors.hpp"

namespace {

std::pair<int, int> parse_grid(const std::string& spec) {
  const auto sep = spec.find('x');
  int nx = 0;
  int ny = 0;
  try {
    std::size_t used = 0;
    nx = std::stoi(spec, &used);
    if (used != sep || sep == std::string::npos)
      throw std::invalid_argument(spec);
    ny = std::stoi(spec.substr(sep + 1), &used);
    if (sep + 1 + used != spec.size()) throw std::invalid_argument(spec);
  } catch (const std::exception&) {
    throw gnflow::ConfigError("--grid: expected NxM (e.g. 64x64), got \"" +
                              spec + "\"");
  }
  return {nx, ny};
}

void print_row(const gnflow::CheckpointRow& row) {
  std::printf("iter %6d  loss %.6e  E_m %.6e  eta %.4g\n", row.iteration,
              row.loss.total, row.mean_error, row.eta);
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural-network least-squares solver for incompressible "
               "Navier-Stokes benchmarks"};
  app.require_subcommand(1);

  // --- run -----------------------------------------------------------------
  auto* run = app.add_subcommand(
      "run", "Train on a benchmark and write history.csv / report.json / "
             "parameter checkpoint");
  std::string problem;
  std::string config_file;
  std::string optimizer;
  std::string solver;
  std::string gramian;
  std::string constraints;
  std::string out_dir;
  int iters = 0;
  std::uint64_t seed = 0;
  int width = 0;
  int depth = 0;
  int eval_every = 0;
  double cg_tol = 0.0;
  run->add_option("problem", problem, "kovasznay | beltrami | taylor_green")
      ->required();
  auto* o_config =
      run->add_option("--config", config_file, "JSON config file (flags "
                      "override its values)");
  auto* o_optimizer = run->add_option("--optimizer", optimizer, "gnng | adam");
  auto* o_solver = run->add_option("--solver", solver, "dense | cg");
  auto* o_gramian =
      run->add_option("--gramian", gramian, "gauss_newton | engd");
  auto* o_constraints =
      run->add_option("--constraints", constraints, "soft | hard");
  auto* o_iters = run->add_option("--iters", iters, "iteration budget");
  auto* o_seed = run->add_option("--seed", seed, "RNG seed");
  auto* o_width = run->add_option("--width", width, "hidden layer width");
  auto* o_depth = run->add_option("--depth", depth, "hidden layer count");
  auto* o_eval =
      run->add_option("--eval-every", eval_every, "evaluation cadence");
  auto* o_cg_tol = run->add_option("--cg-tol", cg_tol, "CG tolerance");
  auto* o_out = run->add_option("--out", out_dir, "output directory");

  run->callback([&] {
    gnflow::RunConfig cfg;
    if (o_config->count()) cfg = gnflow::parse_config_file(config_file);
    cfg.problem = problem;
    if (o_optimizer->count()) cfg.optimizer = optimizer;
    if (o_solver->count()) cfg.solver = solver;
    if (o_gramian->count()) cfg.gramian = gramian;
    if (o_constraints->count()) cfg.constraints = constraints;
    if (o_iters->count()) cfg.iterations = iters;
    if (o_seed->count()) cfg.seed = seed;
    if (o_width->count()) cfg.width = width;
    if (o_depth->count()) cfg.depth = depth;
    if (o_eval->count()) cfg.eval_every = eval_every;
    if (o_cg_tol->count()) cfg.cg_tol = cg_tol;
    if (o_out->count()) cfg.out_dir = out_dir;

    const gnflow::TrainReport report =
        gnflow::run_experiment(cfg, print_row);
    if (report.failed) {
      std::fprintf(stderr, "run failed: %s\n", report.failure.c_str());
      std::exit(4);
    }
    std::printf("final E_m %.6e over %d validation points; wrote %s\n",
                report.final_errors.mean_error,
                report.final_errors.point_count,
                report.config.out_dir.c_str());
  });

  // --- pushforward -----------------------------------------------------------
  auto* push = app.add_subcommand(
      "pushforward", "Export the error field and the gradient / "
                     "natural-gradient pushforwards on a grid");
  std::string ckpt_path;
  std::string grid = "64x64";
  std::string push_out = ".";
  push->add_option("checkpoint", ckpt_path, "path to a params.bin checkpoint")
      ->required();
  push->add_option("--grid", grid, "grid resolution NxM (default 64x64)");
  push->add_option("--out", push_out, "output directory");

  push->callback([&] {
    const auto [nx, ny] = parse_grid(grid);
    gnflow::export_pushforward(gnflow::load_checkpoint(ckpt_path), nx, ny,
                               push_out);
    std::printf("wrote error_field.csv, pushforward_gradient.csv, "
                "pushforward_natural.csv to %s\n",
                push_out.c_str());
  });

  try {
    gnflow::configure_workers();
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const gnflow::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const gnflow::ArgumentError& e) {
    std::fprintf(stderr, "argument error: %s\n", e.what());
    return 2;
  } catch (const gnflow::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const gnflow::NumericalError& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 4;
  } catch (const gnflow::CapacityError& e) {
    std::fprintf(stderr, "capacity error: %s\n", e.what());
    return 5;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
