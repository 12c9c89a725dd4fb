#include "gnflow/cli.hpp"

#include <json.hpp>

#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "gnflow/errors.hpp"

extern "C" void openblas_set_num_threads(int);

namespace gnflow {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

/// Shortest round-trippable decimal form (deterministic, locale-free).
std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void ensure_directory(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw IoError("cannot create directory " + dir.string() + ": " +
                  ec.message());
}

/// Writes content to a sibling temp file and renames it over the target, so
/// readers never observe a partially written file.
void write_atomic(const fs::path& path, const std::string& content) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(content.data(),
              static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec)
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() +
                  ": " + ec.message());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("read failed for " + path.string());
  return buf.str();
}

int problem_dim(const std::string& name) {
  return name == "beltrami" ? 3 : 2;
}

// ---------------------------------------------------------------------------
// JSON (de)serialization of configs and topologies
// ---------------------------------------------------------------------------

json collocation_json(const CollocationSpec& spec) {
  return json{
      {"interior_strategy",
       spec.interior_strategy == CollocationSpec::Strategy::equidistant_grid
           ? "grid"
           : "random"},
      {"interior_grid", spec.interior_grid},
      {"interior_count", spec.interior_count},
      {"boundary_count", spec.boundary_count},
      {"initial_count", spec.initial_count},
      {"validation_count", spec.validation_count}};
}

json config_json(const RunConfig& c) {
  return json{{"problem", c.problem},
              {"optimizer", c.optimizer},
              {"solver", c.solver},
              {"gramian", c.gramian},
              {"constraints", c.constraints},
              {"iterations", c.iterations},
              {"seed", c.seed},
              {"width", c.width},
              {"depth", c.depth},
              {"eval_every", c.eval_every},
              {"cg_tol", c.cg_tol},
              {"cg_max_iter", c.cg_max_iter},
              {"collocation", collocation_json(c.collocation)},
              {"out_dir", c.out_dir}};
}

json topology_json(const Topology& t) {
  return json{{"dim", t.dim},
              {"unsteady", t.unsteady},
              {"periodic", t.embedding.periodic},
              {"periods", t.embedding.periods},
              {"hidden_velocity", t.hidden_velocity},
              {"hidden_pressure", t.hidden_pressure},
              {"velocity_output", t.velocity_output},
              {"activation", t.activation}};
}

/// Reads key into out (leaving it untouched when absent); wraps type
/// mismatches in a ConfigError naming the key.
template <typename T>
void read_key(const json& j, const std::string& key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: key \"" + key + "\": " + e.what());
  }
}

void check_known_keys(const json& j, std::initializer_list<const char*> known,
                      const std::string& scope) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || item.key() == k;
    if (!ok)
      throw ConfigError("config: unknown key \"" + scope + item.key() + "\"");
  }
}

CollocationSpec collocation_from_json(const json& j) {
  if (!j.is_object())
    throw ConfigError("config: key \"collocation\": expected an object");
  check_known_keys(j,
                   {"interior_strategy", "interior_grid", "interior_count",
                    "boundary_count", "initial_count", "validation_count"},
                   "collocation.");
  CollocationSpec spec;
  std::string strategy = "grid";
  read_key(j, "interior_strategy", strategy);
  if (strategy == "grid")
    spec.interior_strategy = CollocationSpec::Strategy::equidistant_grid;
  else if (strategy == "random")
    spec.interior_strategy = CollocationSpec::Strategy::uniform_random;
  else
    throw ConfigError(
        "config: key \"collocation.interior_strategy\": invalid value \"" +
        strategy + "\" (expected grid or random)");
  read_key(j, "interior_grid", spec.interior_grid);
  read_key(j, "interior_count", spec.interior_count);
  read_key(j, "boundary_count", spec.boundary_count);
  read_key(j, "initial_count", spec.initial_count);
  read_key(j, "validation_count", spec.validation_count);
  return spec;
}

RunConfig config_from_json(const json& j) {
  check_known_keys(j,
                   {"problem", "optimizer", "solver", "gramian", "constraints",
                    "iterations", "seed", "width", "depth", "eval_every",
                    "cg_tol", "cg_max_iter", "collocation", "out_dir"},
                   "");
  RunConfig c;
  read_key(j, "problem", c.problem);
  read_key(j, "optimizer", c.optimizer);
  read_key(j, "solver", c.solver);
  read_key(j, "gramian", c.gramian);
  read_key(j, "constraints", c.constraints);
  read_key(j, "iterations", c.iterations);
  read_key(j, "seed", c.seed);
  read_key(j, "width", c.width);
  read_key(j, "depth", c.depth);
  read_key(j, "eval_every", c.eval_every);
  read_key(j, "cg_tol", c.cg_tol);
  read_key(j, "cg_max_iter", c.cg_max_iter);
  if (j.contains("collocation"))
    c.collocation = collocation_from_json(j.at("collocation"));
  read_key(j, "out_dir", c.out_dir);
  return c;
}

Topology topology_from_json(const json& j) {
  Topology t;
  try {
    t.dim = j.at("dim").get<int>();
    t.unsteady = j.at("unsteady").get<bool>();
    t.embedding.periodic = j.at("periodic").get<bool>();
    t.embedding.periods = j.at("periods").get<std::array<double, 3>>();
    t.hidden_velocity = j.at("hidden_velocity").get<std::vector<int>>();
    t.hidden_pressure = j.at("hidden_pressure").get<std::vector<int>>();
    t.velocity_output = j.at("velocity_output").get<int>();
    t.activation = j.at("activation").get<std::string>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: bad topology sidecar: ") +
                      e.what());
  }
  return t;
}

// ---------------------------------------------------------------------------
// Report serialization
// ---------------------------------------------------------------------------

std::string history_csv(const TrainReport& report) {
  std::string csv = report_csv_header(problem_dim(report.config.problem));
  csv += "\n";
  for (const CheckpointRow& row : report.rows) {
    csv += std::to_string(row.iteration);
    csv += ",";
    csv += fmt_double(row.loss.total);
    csv += ",";
    csv += fmt_double(row.loss.momentum);
    csv += ",";
    csv += fmt_double(row.loss.divergence);
    csv += ",";
    csv += fmt_double(row.loss.boundary);
    csv += ",";
    csv += fmt_double(row.loss.initial);
    csv += ",";
    for (double e : row.component_errors) {
      csv += fmt_double(e);
      csv += ",";
    }
    csv += fmt_double(row.mean_error);
    csv += ",";
    csv += fmt_double(row.eta);
    csv += ",";
    csv += std::to_string(row.cg_iterations);
    csv += ",";
    csv += fmt_double(row.wall_ms);
    csv += "\n";
  }
  return csv;
}

json row_json(const CheckpointRow& row, int dim) {
  json j{{"iteration", row.iteration},
         {"loss", row.loss.total},
         {"loss_momentum", row.loss.momentum},
         {"loss_div", row.loss.divergence},
         {"loss_bdry", row.loss.boundary},
         {"loss_init", row.loss.initial}};
  const char* names2[] = {"e_u", "e_v", "e_p"};
  const char* names3[] = {"e_u", "e_v", "e_w", "e_p"};
  const char** names = dim == 3 ? names3 : names2;
  for (std::size_t i = 0; i < row.component_errors.size(); ++i)
    j[names[i]] = row.component_errors[i];
  j["E_m"] = row.mean_error;
  j["eta"] = row.eta;
  j["cg_iters"] = row.cg_iterations;
  j["wall_ms"] = row.wall_ms;
  return j;
}

std::string report_json(const TrainReport& report) {
  const int dim = problem_dim(report.config.problem);
  json j;
  j["config"] = config_json(report.config);
  j["failed"] = report.failed;
  j["failure"] = report.failure;
  j["final_errors"] =
      json{{"component_errors", report.final_errors.component_errors},
           {"mean_error", report.final_errors.mean_error},
           {"time_slice", report.final_errors.time_slice},
           {"point_count", report.final_errors.point_count}};
  j["history"] = json::array();
  for (const CheckpointRow& row : report.rows)
    j["history"].push_back(row_json(row, dim));
  return j.dump(2) + "\n";
}

bool row_finite(const CheckpointRow& row) {
  bool ok = std::isfinite(row.loss.total) && std::isfinite(row.loss.momentum) &&
            std::isfinite(row.loss.divergence) &&
            std::isfinite(row.loss.boundary) &&
            std::isfinite(row.loss.initial) && std::isfinite(row.mean_error) &&
            std::isfinite(row.eta) && std::isfinite(row.wall_ms);
  for (double e : row.component_errors) ok = ok && std::isfinite(e);
  return ok;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

int default_iterations(const std::string& optimizer,
                       const std::string& solver) {
  const bool cg = solver == "cg";
  if (optimizer == "gnng") return cg ? 1000 : 5000;
  if (optimizer == "adam") return cg ? 100000 : 200000;
  throw ConfigError("config: key \"optimizer\": invalid value \"" + optimizer +
                    "\" (expected gnng or adam)");
}

RunConfig resolve_config(RunConfig config) {
  auto expect = [](const char* key, const std::string& value,
                   std::initializer_list<const char*> allowed) {
    std::string choices;
    for (const char* a : allowed) {
      if (value == a) return;
      choices += choices.empty() ? "" : ", ";
      choices += a;
    }
    throw ConfigError(std::string("config: key \"") + key +
                      "\": invalid value \"" + value + "\" (expected " +
                      choices + ")");
  };
  expect("problem", config.problem, {"kovasznay", "beltrami", "taylor_green"});
  expect("optimizer", config.optimizer, {"gnng", "adam"});
  expect("solver", config.solver, {"dense", "cg"});
  expect("gramian", config.gramian, {"gauss_newton", "engd"});
  expect("constraints", config.constraints, {"soft", "hard"});

  // Validates the constraint request against the problem as a side effect.
  const FlowProblem problem =
      make_problem(config.problem, config.constraints == "hard");

  if (config.gramian == "engd") {
    if (config.optimizer != "gnng")
      throw ConfigError(
          "config: key \"gramian\": engd requires optimizer gnng");
    if (config.solver != "dense")
      throw ConfigError("config: key \"gramian\": engd requires solver dense");
    if (problem.unsteady)
      throw ConfigError(
          "config: key \"gramian\": the energy Gramian is stationary-only "
          "and \"" +
          config.problem + "\" is unsteady");
  }

  if (config.iterations < 0)
    throw ConfigError("config: key \"iterations\": must be positive");
  if (config.iterations == 0)
    config.iterations = default_iterations(config.optimizer, config.solver);
  if (config.eval_every < 0)
    throw ConfigError("config: key \"eval_every\": must be positive");
  if (config.eval_every == 0)
    config.eval_every = config.optimizer == "gnng" ? 10 : 1000;
  if (config.width < 1)
    throw ConfigError("config: key \"width\": must be at least 1");
  if (config.depth < 0)
    throw ConfigError("config: key \"depth\": must be non-negative");
  if (!(config.cg_tol > 0.0))
    throw ConfigError("config: key \"cg_tol\": must be positive");
  if (config.cg_max_iter < 0)
    throw ConfigError("config: key \"cg_max_iter\": must be non-negative");

  if (config.collocation.interior_grid.empty() &&
      config.collocation.interior_count == 0)
    config.collocation = default_collocation(problem);
  return config;
}

RunConfig parse_config_file(const std::string& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // e.what() carries the line/column of the first offending token.
    throw ConfigError("config: " + path + ": " + e.what());
  }
  if (!j.is_object())
    throw ConfigError("config: " + path + ": top level must be an object");
  return config_from_json(j);
}

Topology config_topology(const RunConfig& config, const FlowProblem& problem) {
  Topology topo;
  topo.dim = problem.dim;
  topo.unsteady = problem.unsteady;
  topo.embedding.periodic = problem.constraints.periodic;
  topo.embedding.periods = problem.constraints.periods;
  topo.hidden_velocity.assign(config.depth, config.width);
  topo.hidden_pressure.assign(config.depth, config.width);
  topo.velocity_output = problem.constraints.divergence_free
                             ? (problem.dim == 2 ? 1 : 3)
                             : problem.dim;
  return topo;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

std::string report_csv_header(int dim) {
  if (dim != 2 && dim != 3)
    throw ArgumentError("report_csv_header: dim must be 2 or 3");
  return dim == 3 ? "iteration,loss,loss_momentum,loss_div,loss_bdry,"
                    "loss_init,e_u,e_v,e_w,e_p,E_m,eta,cg_iters,wall_ms"
                  : "iteration,loss,loss_momentum,loss_div,loss_bdry,"
                    "loss_init,e_u,e_v,e_p,E_m,eta,cg_iters,wall_ms";
}

TrainReport run_experiment(
    const RunConfig& config,
    const std::function<void(const CheckpointRow&)>& on_checkpoint) {
  TrainReport report;
  report.config = resolve_config(config);
  const RunConfig& cfg = report.config;
  const bool gnng = cfg.optimizer == "gnng";

  FlowProblem problem = make_problem(cfg.problem, cfg.constraints == "hard");
  const Topology topo = config_topology(cfg, problem);
  ResidualAssembly assembly(
      problem, sample_collocation(problem, cfg.collocation, cfg.seed), topo);
  const PointSet& validation = assembly.collocation().validation;
  const double tslice = problem.unsteady
                            ? problem.time_interval[1]
                            : std::numeric_limits<double>::quiet_NaN();

  GnngConfig gcfg;
  gcfg.solver = cfg.solver == "cg" ? GnngConfig::Solver::cg
                                   : GnngConfig::Solver::dense;
  gcfg.cg_tol = cfg.cg_tol;
  gcfg.cg_max_iter = cfg.cg_max_iter;
  gcfg.energy_gramian = cfg.gramian == "engd";
  AdamConfig acfg;
  AdamState moments;

  OptState state;
  state.params = glorot_init(topo, cfg.seed);

  ensure_directory(cfg.out_dir);
  const auto start = std::chrono::steady_clock::now();
  auto elapsed_ms = [&start] {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - start)
        .count();
  };

  // Evaluates, records, and incrementally persists one checkpoint row;
  // a non-finite metric finalizes the report with a failure record instead.
  auto checkpoint = [&](const LossBreakdown& loss, double eta,
                        int cg_iters) -> bool {
    ErrorReport errors =
        relative_l2(state.params, problem, validation, tslice);
    CheckpointRow row;
    row.iteration = state.iteration;
    row.loss = loss;
    row.component_errors = errors.component_errors;
    row.mean_error = errors.mean_error;
    row.eta = eta;
    row.cg_iterations = cg_iters;
    row.wall_ms = elapsed_ms();
    if (!row_finite(row)) {
      report.failed = true;
      report.failure = "non-finite metrics at iteration " +
                       std::to_string(state.iteration);
      return false;
    }
    report.rows.push_back(row);
    report.final_errors = errors;
    write_atomic(fs::path(cfg.out_dir) / "history.csv", history_csv(report));
    if (on_checkpoint) on_checkpoint(row);
    return true;
  };

  if (checkpoint(assembly.loss(state.params), 0.0, 0)) {
    for (int k = 1; k <= cfg.iterations; ++k) {
      state = gnng ? gnng_step(assembly, std::move(state), gcfg)
                   : adam_step(assembly, std::move(state), moments, acfg);
      if (state.step_failed) {
        report.failed = true;
        report.failure =
            "iteration " + std::to_string(k) + ": " + state.failure;
        break;
      }
      if (k % cfg.eval_every == 0 || k == cfg.iterations) {
        // GNNG already holds the loss at the stepped parameters (the line
        // search winner); Adam records the pre-step loss, so recompute at
        // the current iterate to keep rows reload-consistent.
        const LossBreakdown row_loss =
            gnng ? state.loss_parts : assembly.loss(state.params);
        if (!checkpoint(row_loss, state.eta, state.cg_iterations)) break;
      }
    }
  }

  report.params = state.params;
  emit_report(report);
  return report;
}

void emit_report(const TrainReport& report) {
  const fs::path dir(report.config.out_dir);
  ensure_directory(dir);
  write_atomic(dir / "history.csv", history_csv(report));
  write_atomic(dir / "report.json", report_json(report));
  save_checkpoint(report.params, report.config, report.config.out_dir);
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const FlatParams& params, const RunConfig& config,
                     const std::string& dir) {
  static_assert(std::endian::native == std::endian::little,
                "checkpoints are defined as little-endian float64 blocks");
  ensure_directory(dir);
  std::string bytes(reinterpret_cast<const char*>(params.values.data()),
                    static_cast<std::size_t>(params.values.size()) *
                        sizeof(double));
  write_atomic(fs::path(dir) / "params.bin", bytes);

  json sidecar;
  sidecar["topology"] = topology_json(params.topology);
  sidecar["parameter_count"] = params.values.size();
  sidecar["config"] = config_json(config);
  write_atomic(fs::path(dir) / "params.json", sidecar.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::string& bin_path) {
  fs::path bin(bin_path);
  fs::path side = bin;
  side.replace_extension(".json");

  json j;
  try {
    j = json::parse(read_file(side));
  } catch (const json::parse_error& e) {
    throw IoError("checkpoint: corrupt sidecar " + side.string() + ": " +
                  e.what());
  }

  Checkpoint ckpt;
  if (!j.contains("topology"))
    throw ConfigError("checkpoint: sidecar " + side.string() +
                      " has no topology");
  ckpt.params.topology = topology_from_json(j.at("topology"));
  if (j.contains("config")) ckpt.config = config_from_json(j.at("config"));

  const std::string bytes = read_file(bin);
  const std::ptrdiff_t expected = param_count(ckpt.params.topology);
  if (bytes.size() != static_cast<std::size_t>(expected) * sizeof(double))
    throw ConfigError(
        "checkpoint: " + bin.string() + " holds " +
        std::to_string(bytes.size() / sizeof(double)) +
        " values but the sidecar topology expects " + std::to_string(expected));
  ckpt.params.values.resize(expected);
  std::memcpy(ckpt.params.values.data(), bytes.data(), bytes.size());
  return ckpt;
}

// ---------------------------------------------------------------------------
// Pushforward export
// ---------------------------------------------------------------------------

namespace {

std::string field_csv(const PointSet& grid, const FlowProblem& problem,
                      const Eigen::MatrixXd& fields) {
  const char* names2[] = {"u", "v", "p"};
  const char* names3[] = {"u", "v", "w", "p"};
  const char** names = problem.dim == 3 ? names3 : names2;
  std::string csv = "x,y";
  if (problem.dim == 3) csv += ",z";
  if (problem.unsteady) csv += ",t";
  csv += ",component,value\n";
  for (int i = 0; i < grid.count(); ++i) {
    const auto point = grid.point(i);
    std::string coords;
    for (double c : point) {
      coords += fmt_double(c);
      coords += ",";
    }
    for (int k = 0; k < fields.cols(); ++k) {
      csv += coords;
      csv += names[k];
      csv += ",";
      csv += fmt_double(fields(i, k));
      csv += "\n";
    }
  }
  return csv;
}

}  // namespace

void export_pushforward(const Checkpoint& checkpoint, int nx, int ny,
                        const std::string& out_dir) {
  if (nx < 2 || ny < 2)
    throw ArgumentError("pushforward: grid must be at least 2x2");
  const RunConfig cfg = resolve_config(checkpoint.config);
  const FlowProblem problem =
      make_problem(cfg.problem, cfg.constraints == "hard");
  if (problem.dim != 2)
    throw ConfigError("pushforward: only 2-dimensional problems have a grid "
                      "export; \"" +
                      cfg.problem + "\" is 3-dimensional");
  if (param_count(checkpoint.params.topology) !=
      checkpoint.params.values.size())
    throw ArgumentError("pushforward: checkpoint parameter count mismatch");

  // Directions come from the training objective at the checkpointed
  // parameters: the Euclidean gradient and the damped natural-gradient step.
  ResidualAssembly assembly(
      problem, sample_collocation(problem, cfg.collocation, cfg.seed),
      checkpoint.params.topology);
  auto fwd = assembly.forward(checkpoint.params);
  const Eigen::VectorXd grad = gradient(assembly, *fwd);
  const LossBreakdown loss = loss_breakdown(assembly.residual(*fwd));
  const Eigen::VectorXd natural =
      solve_direct(gramian_dense(assembly, *fwd), grad, loss.total);

  PointSet grid;
  grid.stride = problem.input_dim();
  for (int i = 0; i < nx; ++i) {
    const double x = problem.bounds[0][0] +
                     (problem.bounds[0][1] - problem.bounds[0][0]) * i /
                         (nx - 1);
    for (int j = 0; j < ny; ++j) {
      const double y = problem.bounds[1][0] +
                       (problem.bounds[1][1] - problem.bounds[1][0]) * j /
                           (ny - 1);
      if (problem.unsteady) {
        const double point[3] = {x, y, problem.time_interval[1]};
        grid.push(point);
      } else {
        const double point[2] = {x, y};
        grid.push(point);
      }
    }
  }

  PushforwardField pf_grad =
      pushforward_field(checkpoint.params, problem, grad, grid);
  PushforwardField pf_natural =
      pushforward_field(checkpoint.params, problem, natural, grid);
  normalize_max_abs(pf_grad.error_field);
  normalize_max_abs(pf_grad.direction_field);
  normalize_max_abs(pf_natural.direction_field);

  ensure_directory(out_dir);
  const fs::path dir(out_dir);
  write_atomic(dir / "error_field.csv",
               field_csv(grid, problem, pf_grad.error_field));
  write_atomic(dir / "pushforward_gradient.csv",
               field_csv(grid, problem, pf_grad.direction_field));
  write_atomic(dir / "pushforward_natural.csv",
               field_csv(grid, problem, pf_natural.direction_field));
}

// ---------------------------------------------------------------------------
// Workers
// ---------------------------------------------------------------------------

int configure_workers() {
  int workers = 1;
  if (const char* env = std::getenv("GNFLOW_WORKERS"); env && *env) {
    const char* end = env + std::strlen(env);
    auto [ptr, ec] = std::from_chars(env, end, workers);
    if (ec != std::errc() || ptr != end || workers < 1)
      throw ConfigError(std::string("GNFLOW_WORKERS: expected a positive "
                                    "integer, got \"") +
                        env + "\"");
  }
  openblas_set_num_threads(workers);
  return workers;
}

}  // namespace gnflow
