/// @file cli.hpp
/// @brief Experiment runner: configuration, training loop with checkpointed
///        metrics, machine-readable reports, parameter checkpoints, and the
///        pushforward-field export.
///
/// A run wires problem + network + optimizer from a RunConfig, trains for
/// the configured budget, evaluates relative-L2 errors on the validation
/// set at a fixed cadence, and writes history.csv / report.json plus a
/// binary parameter checkpoint into the output directory. Runs are
/// deterministic for a fixed config and worker count.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gnflow/flows.hpp"
#include "gnflow/optim.hpp"
#include "gnflow/problem.hpp"

namespace gnflow {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct RunConfig {
  std::string problem = "kovasznay";     ///< kovasznay | beltrami | taylor_green
  std::string optimizer = "gnng";        ///< gnng | adam
  std::string solver = "dense";          ///< dense | cg
  std::string gramian = "gauss_newton";  ///< gauss_newton | engd (gnng + dense + steady)
  std::string constraints = "soft";      ///< soft | hard
  int iterations = 0;                    ///< 0 -> optimizer/solver default
  std::uint64_t seed = 0;
  int width = 50;                        ///< hidden layer width (both nets)
  int depth = 4;                         ///< hidden layer count (both nets)
  int eval_every = 0;                    ///< 0 -> 10 (gnng) / 1000 (adam)
  double cg_tol = 1e-5;
  int cg_max_iter = 0;                   ///< 0 -> 10 * parameter count
  CollocationSpec collocation;           ///< empty -> problem defaults
  std::string out_dir = ".";
};

/// Default iteration budgets per optimizer and solver mode:
/// dense gnng 5000, dense adam 200000, cg gnng 1000, cg adam 100000.
int default_iterations(const std::string& optimizer, const std::string& solver);

/// Returns a fully resolved copy: iteration/evaluation defaults filled in,
/// empty collocation replaced by the problem's reference spec, topology and
/// cross-field constraints validated. Throws ConfigError naming the
/// offending key.
RunConfig resolve_config(RunConfig config);

/// Strict JSON config loader. Unknown keys, invalid value types, and
/// malformed files throw ConfigError naming the key or the parse location.
/// The result is not yet resolved (CLI flags may still override fields).
RunConfig parse_config_file(const std::string& path);

/// Network topology implied by a config (constraint-aware output size,
/// periodic embedding copied from the problem).
Topology config_topology(const RunConfig& config, const FlowProblem& problem);

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct CheckpointRow {
  int iteration = 0;
  LossBreakdown loss;
  std::vector<double> component_errors;  ///< e_u, e_v[, e_w], e_p
  double mean_error = 0.0;
  double eta = 0.0;
  int cg_iterations = 0;
  double wall_ms = 0.0;  ///< informational only
};

struct TrainReport {
  RunConfig config;  ///< resolved config echo
  std::vector<CheckpointRow> rows;
  ErrorReport final_errors;
  FlatParams params;  ///< parameters at the last completed iteration
  bool failed = false;
  std::string failure;
};

/// Exact CSV header for a problem dimensionality (e_w only in 3D):
/// iteration,loss,loss_momentum,loss_div,loss_bdry,loss_init,
/// e_u,e_v[,e_w],e_p,E_m,eta,cg_iters,wall_ms
std::string report_csv_header(int dim);

/// Trains per the config. Writes history.csv incrementally into
/// config.out_dir after every checkpoint. An optimizer failure finalizes
/// the report up to the failure point with the failure recorded.
/// `on_checkpoint`, when set, observes every recorded row (progress output).
TrainReport run_experiment(
    const RunConfig& config,
    const std::function<void(const CheckpointRow&)>& on_checkpoint = {});

/// Writes history.csv, report.json, and the parameter checkpoint into
/// report.config.out_dir. All files are written atomically (temp + rename).
void emit_report(const TrainReport& report);

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct Checkpoint {
  FlatParams params;
  RunConfig config;
};

/// params.bin: the raw little-endian float64 parameter block.
/// params.json: sidecar with the topology and the originating config.
void save_checkpoint(const FlatParams& params, const RunConfig& config,
                     const std::string& dir);

/// Loads a checkpoint from the .bin path; the sidecar is looked up next to
/// it. Throws IoError for missing/corrupt files, ConfigError for a sidecar
/// that contradicts the binary size.
Checkpoint load_checkpoint(const std::string& bin_path);

// ---------------------------------------------------------------------------
// Pushforward export
// ---------------------------------------------------------------------------

/// Exports the pointwise error field u_theta - u* and the pushforwards of
/// the Euclidean gradient and the damped natural-gradient direction on an
/// nx x ny spatial grid (2D problems; unsteady ones at the final time).
/// Writes error_field.csv, pushforward_gradient.csv, and
/// pushforward_natural.csv (columns x,y[,t],component,value), each field
/// max-abs normalized to [-1, 1].
void export_pushforward(const Checkpoint& checkpoint, int nx, int ny,
                        const std::string& out_dir);

// ---------------------------------------------------------------------------
// Workers
// ---------------------------------------------------------------------------

/// Reads GNFLOW_WORKERS (default 1) and pins the BLAS thread pool to it.
/// Returns the applied count. Invalid values throw ConfigError.
int configure_workers();

}  // namespace gnflow
