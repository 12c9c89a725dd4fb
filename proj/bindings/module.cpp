/// @file module.cpp
/// @brief Python bindings for the gnflow library.
///
/// Exposes the main operations of every module — problem factories,
/// collocation sampling, parameter initialization, residual assembly with
/// its derivative products, Gramian construction and solves, the GNNG and
/// Adam optimizer steps, relative-L2 evaluation, and the experiment runner
/// with its checkpoint files. Point sets convert implicitly from (n, dim)
/// NumPy arrays; Eigen vectors and matrices convert to and from NumPy.
///
/// Exception mapping: ArgumentError/ConfigError -> ValueError,
/// IoError -> OSError, NumericalError -> ArithmeticError,
/// CapacityError -> MemoryError.

#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <limits>
#include <string>
#include <utility>

#include "gnflow/cli.hpp"
#include "gnflow/errors.hpp"
#include "gnflow/flows.hpp"
#include "gnflow/optim.hpp"
#include "gnflow/problem.hpp"
#include "gnflow/residual.hpp"

namespace py = pybind11;
using namespace pybind11::literals;

namespace gnflow {
namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

PointSet point_set_from_array(const DoubleArray& points) {
  if (points.ndim() != 2)
    throw ArgumentError("points: expected a 2-D array of shape (n, dim)");
  PointSet set;
  set.stride = static_cast<int>(points.shape(1));
  set.coords.assign(points.data(), points.data() + points.size());
  return set;
}

py::array_t<double> point_set_to_array(const PointSet& set) {
  py::array_t<double> out({set.count(), set.stride});
  std::memcpy(out.mutable_data(), set.coords.data(),
              set.coords.size() * sizeof(double));
  return out;
}

/// Evaluates one of the pointwise closed-form callbacks over a point set.
py::array_t<double> eval_pointwise(
    const FlowProblem& problem, const PointSet& points, int width,
    const std::function<void(std::span<const double>, std::span<double>)>& fn,
    const char* what) {
  if (!fn) throw ArgumentError(std::string(what) + ": not defined for this problem");
  if (points.stride != problem.input_dim())
    throw ArgumentError(std::string(what) + ": points have stride " +
                        std::to_string(points.stride) + ", expected " +
                        std::to_string(problem.input_dim()));
  py::array_t<double> out({points.count(), width});
  double* data = out.mutable_data();
  for (int i = 0; i < points.count(); ++i)
    fn(points.point(i), {data + static_cast<std::size_t>(i) * width,
                         static_cast<std::size_t>(width)});
  return out;
}

std::string strategy_name(CollocationSpec::Strategy s) {
  return s == CollocationSpec::Strategy::equidistant_grid ? "grid" : "random";
}

CollocationSpec::Strategy strategy_from_name(const std::string& name) {
  if (name == "grid") return CollocationSpec::Strategy::equidistant_grid;
  if (name == "random") return CollocationSpec::Strategy::uniform_random;
  throw ArgumentError("interior_strategy: invalid value \"" + name +
                      "\" (expected grid or random)");
}

std::string solver_name(GnngConfig::Solver s) {
  return s == GnngConfig::Solver::dense ? "dense" : "cg";
}

GnngConfig::Solver solver_from_name(const std::string& name) {
  if (name == "dense") return GnngConfig::Solver::dense;
  if (name == "cg") return GnngConfig::Solver::cg;
  throw ArgumentError("solver: invalid value \"" + name +
                      "\" (expected dense or cg)");
}

}  // namespace
}  // namespace gnflow

PYBIND11_MODULE(_core, m) {
  using namespace gnflow;

  m.doc() =
      "Physics-informed neural-network solvers for incompressible "
      "Navier-Stokes benchmarks, trained by Gauss-Newton natural gradient.";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ArgumentError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const ConfigError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const IoError& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    } catch (const NumericalError& e) {
      PyErr_SetString(PyExc_ArithmeticError, e.what());
    } catch (const CapacityError& e) {
      PyErr_SetString(PyExc_MemoryError, e.what());
    }
  });

  // -------------------------------------------------------------------------
  // Points and collocation
  // -------------------------------------------------------------------------
  py::class_<PointSet>(m, "PointSet",
                       "A flat batch of points; converts from (n, dim) arrays.")
      .def(py::init(&point_set_from_array), "points"_a)
      .def_property_readonly("array", &point_set_to_array)
      .def_property_readonly("count", &PointSet::count)
      .def_readonly("stride", &PointSet::stride);
  py::implicitly_convertible<py::array, PointSet>();

  py::class_<CollocationSpec>(m, "CollocationSpec")
      .def(py::init<>())
      .def_property(
          "interior_strategy",
          [](const CollocationSpec& s) { return strategy_name(s.interior_strategy); },
          [](CollocationSpec& s, const std::string& v) {
            s.interior_strategy = strategy_from_name(v);
          })
      .def_readwrite("interior_grid", &CollocationSpec::interior_grid)
      .def_readwrite("interior_count", &CollocationSpec::interior_count)
      .def_readwrite("boundary_count", &CollocationSpec::boundary_count)
      .def_readwrite("initial_count", &CollocationSpec::initial_count)
      .def_readwrite("validation_count", &CollocationSpec::validation_count);

  py::class_<CollocationSet>(m, "CollocationSet")
      .def_readonly("interior", &CollocationSet::interior)
      .def_readonly("boundary", &CollocationSet::boundary)
      .def_readonly("initial", &CollocationSet::initial)
      .def_readonly("validation", &CollocationSet::validation);

  m.def("default_collocation", &default_collocation, "problem"_a,
        "Collocation counts used by the benchmark runs.");
  m.def("sample_collocation", &sample_collocation, "problem"_a, "spec"_a,
        "seed"_a, "Deterministic interior/boundary/initial/validation points.");

  // -------------------------------------------------------------------------
  // Problems
  // -------------------------------------------------------------------------
  py::class_<ConstraintMode>(m, "ConstraintMode")
      .def_readonly("divergence_free", &ConstraintMode::divergence_free)
      .def_readonly("exact_initial", &ConstraintMode::exact_initial)
      .def_readonly("periodic", &ConstraintMode::periodic)
      .def_readonly("periods", &ConstraintMode::periods)
      .def_readonly("boundary_soft", &ConstraintMode::boundary_soft);

  py::class_<FlowProblem>(m, "FlowProblem")
      .def_readonly("name", &FlowProblem::name)
      .def_readonly("dim", &FlowProblem::dim)
      .def_readonly("unsteady", &FlowProblem::unsteady)
      .def_readonly("viscosity", &FlowProblem::viscosity)
      .def_readonly("bounds", &FlowProblem::bounds)
      .def_readonly("time_interval", &FlowProblem::time_interval)
      .def_readonly("constraints", &FlowProblem::constraints)
      .def_property_readonly("input_dim", &FlowProblem::input_dim)
      .def_property_readonly("fields", &FlowProblem::fields)
      .def(
          "solution",
          [](const FlowProblem& p, const PointSet& pts) {
            return eval_pointwise(p, pts, p.fields(), p.solution, "solution");
          },
          "points"_a, "Closed-form velocity and pressure, one row per point.")
      .def(
          "boundary_data",
          [](const FlowProblem& p, const PointSet& pts) {
            return eval_pointwise(p, pts, p.dim, p.boundary_data, "boundary_data");
          },
          "points"_a, "Dirichlet boundary velocity g.")
      .def(
          "initial_data",
          [](const FlowProblem& p, const PointSet& pts) {
            return eval_pointwise(p, pts, p.dim, p.initial_data, "initial_data");
          },
          "points"_a, "Initial velocity u0 (unsteady problems).");

  m.def("make_problem", &make_problem, "name"_a, "hard_constraints"_a = false,
        "Benchmark factory: kovasznay, beltrami, or taylor_green.");

  // -------------------------------------------------------------------------
  // Networks and parameters
  // -------------------------------------------------------------------------
  py::class_<Embedding>(m, "Embedding")
      .def(py::init<>())
      .def_readwrite("periodic", &Embedding::periodic)
      .def_readwrite("periods", &Embedding::periods);

  py::class_<Topology>(m, "Topology")
      .def(py::init<>())
      .def_readwrite("dim", &Topology::dim)
      .def_readwrite("unsteady", &Topology::unsteady)
      .def_readwrite("embedding", &Topology::embedding)
      .def_readwrite("hidden_velocity", &Topology::hidden_velocity)
      .def_readwrite("hidden_pressure", &Topology::hidden_pressure)
      .def_readwrite("velocity_output", &Topology::velocity_output)
      .def_readwrite("activation", &Topology::activation)
      .def_property_readonly("input_dim", &Topology::input_dim)
      .def_property_readonly("embedded_dim", &Topology::embedded_dim);

  py::class_<FlatParams>(m, "FlatParams")
      .def(py::init<>())
      .def_readwrite("topology", &FlatParams::topology)
      .def_readwrite("values", &FlatParams::values);

  m.def("param_count", &param_count, "topology"_a);
  m.def("glorot_init", &glorot_init, "topology"_a, "seed"_a,
        "Glorot-uniform weights, zero biases; deterministic per seed.");

  // -------------------------------------------------------------------------
  // Residual assembly
  // -------------------------------------------------------------------------
  py::class_<Block>(m, "Block")
      .def_property_readonly(
          "kind", [](const Block& b) { return std::string(block_name(b.kind)); })
      .def_readonly("offset", &Block::offset)
      .def_readonly("rows", &Block::rows)
      .def_readonly("rows_per_point", &Block::rows_per_point)
      .def_readonly("point_count", &Block::point_count)
      .def_readonly("scale", &Block::scale);

  py::class_<BlockLayout>(m, "BlockLayout")
      .def_readonly("blocks", &BlockLayout::blocks)
      .def_readonly("total", &BlockLayout::total);

  py::class_<LossBreakdown>(m, "LossBreakdown")
      .def_readonly("total", &LossBreakdown::total)
      .def_readonly("momentum", &LossBreakdown::momentum)
      .def_readonly("divergence", &LossBreakdown::divergence)
      .def_readonly("boundary", &LossBreakdown::boundary)
      .def_readonly("initial", &LossBreakdown::initial)
      .def("__repr__", [](const LossBreakdown& l) {
        return "LossBreakdown(total=" + std::to_string(l.total) + ")";
      });

  py::class_<ResidualAssembly>(m, "ResidualAssembly")
      .def(py::init([](FlowProblem problem, CollocationSet colloc,
                       Topology topology) {
             return ResidualAssembly(std::move(problem), std::move(colloc),
                                     std::move(topology));
           }),
           "problem"_a, "collocation"_a, "topology"_a)
      .def_property_readonly("layout", &ResidualAssembly::layout,
                             py::return_value_policy::copy)
      .def_property_readonly("residual_size", &ResidualAssembly::residual_size)
      .def_property_readonly("parameter_count",
                             &ResidualAssembly::parameter_count)
      .def_property_readonly("problem", &ResidualAssembly::problem,
                             py::return_value_policy::copy)
      .def_property_readonly("collocation", &ResidualAssembly::collocation,
                             py::return_value_policy::copy)
      .def_property_readonly("topology", &ResidualAssembly::topology,
                             py::return_value_policy::copy)
      .def(
          "residual",
          [](const ResidualAssembly& a, const FlatParams& p) {
            return a.assemble(p).values;
          },
          "params"_a, py::call_guard<py::gil_scoped_release>(),
          "The stacked scaled residual r(theta, psi).")
      .def("loss", &ResidualAssembly::loss, "params"_a,
           py::call_guard<py::gil_scoped_release>())
      .def(
          "gradient",
          [](const ResidualAssembly& a, const FlatParams& p) {
            auto fwd = a.forward(p);
            return gradient(a, *fwd);
          },
          "params"_a, py::call_guard<py::gil_scoped_release>(),
          "grad L = J^T r.")
      .def("jvp", &ResidualAssembly::param_jvp, "params"_a, "v"_a,
           py::call_guard<py::gil_scoped_release>(), "J v, matrix-free.")
      .def("vjp", &ResidualAssembly::param_vjp, "params"_a, "w"_a,
           py::call_guard<py::gil_scoped_release>(), "J^T w, matrix-free.")
      .def("jacobian", &ResidualAssembly::dense_jacobian, "params"_a,
           py::call_guard<py::gil_scoped_release>(),
           "Dense R x P Jacobian of the residual.")
      .def(
          "gramian",
          [](const ResidualAssembly& a, const FlatParams& p) {
            auto fwd = a.forward(p);
            return gramian_dense(a, *fwd);
          },
          "params"_a, py::call_guard<py::gil_scoped_release>(),
          "Dense Gauss-Newton Gramian G = J^T J.")
      .def(
          "gramian_matvec",
          [](const ResidualAssembly& a, const FlatParams& p,
             const Eigen::VectorXd& v) {
            auto fwd = a.forward(p);
            return gramian_matvec(a, *fwd, v);
          },
          "params"_a, "v"_a, py::call_guard<py::gil_scoped_release>(),
          "G v without forming G (one JVP plus one VJP).")
      .def(
          "energy_gramian",
          [](const ResidualAssembly& a, const FlatParams& p) {
            auto fwd = a.forward(p);
            return engd_gramian(a, *fwd);
          },
          "params"_a, py::call_guard<py::gil_scoped_release>(),
          "Energy Gramian: Gauss-Newton part plus the convective H-term.");

  // -------------------------------------------------------------------------
  // Solves and optimizer steps
  // -------------------------------------------------------------------------
  m.def("gramian_damping", &gramian_damping, "loss"_a);
  m.def("solve_spd", &solve_spd, "gramian"_a, "rhs"_a, "damping"_a,
        py::call_guard<py::gil_scoped_release>());
  m.def("solve_direct", &solve_direct, "gramian"_a, "rhs"_a, "loss"_a,
        py::call_guard<py::gil_scoped_release>(),
        "Damped Cholesky solve with the x10 retry ladder.");

  py::class_<CgResult>(m, "CgResult")
      .def_readonly("x", &CgResult::x)
      .def_readonly("converged", &CgResult::converged)
      .def_readonly("iterations", &CgResult::iterations);

  m.def("solve_cg", &solve_cg, "matvec"_a, "rhs"_a, "tol"_a, "max_iter"_a,
        "spectrum_floor"_a = 0.0,
        "Conjugate gradients on a matvec callback (no matrix is formed).");

  m.def("line_search_eta", &line_search_eta, "grid_index"_a);
  m.attr("LINE_SEARCH_GRID") = kLineSearchGrid;

  py::class_<GnngConfig>(m, "GnngConfig")
      .def(py::init([](const std::string& solver, double cg_tol,
                       int cg_max_iter, bool energy_gramian) {
             GnngConfig c;
             c.solver = solver_from_name(solver);
             c.cg_tol = cg_tol;
             c.cg_max_iter = cg_max_iter;
             c.energy_gramian = energy_gramian;
             return c;
           }),
           "solver"_a = "dense", "cg_tol"_a = 1e-5, "cg_max_iter"_a = 0,
           "energy_gramian"_a = false)
      .def_property(
          "solver",
          [](const GnngConfig& c) { return solver_name(c.solver); },
          [](GnngConfig& c, const std::string& v) { c.solver = solver_from_name(v); })
      .def_readwrite("cg_tol", &GnngConfig::cg_tol)
      .def_readwrite("cg_max_iter", &GnngConfig::cg_max_iter)
      .def_readwrite("energy_gramian", &GnngConfig::energy_gramian);

  py::class_<OptState>(m, "OptState")
      .def(py::init<>())
      .def_readwrite("params", &OptState::params)
      .def_readwrite("iteration", &OptState::iteration)
      .def_readwrite("loss", &OptState::loss)
      .def_readwrite("loss_parts", &OptState::loss_parts)
      .def_readwrite("eta", &OptState::eta)
      .def_readwrite("line_search_index", &OptState::line_search_index)
      .def_readwrite("cg_iterations", &OptState::cg_iterations)
      .def_readwrite("cg_converged", &OptState::cg_converged)
      .def_readwrite("step_failed", &OptState::step_failed)
      .def_readwrite("failure", &OptState::failure);

  m.def("gnng_step", &gnng_step, "assembly"_a, "state"_a,
        "config"_a = GnngConfig{}, py::call_guard<py::gil_scoped_release>(),
        "One damped Gauss-Newton natural-gradient step with line search.");

  py::class_<AdamConfig>(m, "AdamConfig")
      .def(py::init<>())
      .def_readwrite("beta1", &AdamConfig::beta1)
      .def_readwrite("beta2", &AdamConfig::beta2)
      .def_readwrite("eps", &AdamConfig::eps);

  py::class_<AdamState>(m, "AdamState")
      .def(py::init<>())
      .def_readwrite("m", &AdamState::m)
      .def_readwrite("v", &AdamState::v)
      .def_readwrite("step", &AdamState::step);

  m.def("adam_learning_rate", &adam_learning_rate, "k"_a,
        "Staircase schedule: 1e-3, then x0.1 at 15000 and every 10000 after.");
  m.def("adam_step", &adam_step, "assembly"_a, "state"_a, "moments"_a,
        "config"_a = AdamConfig{}, py::call_guard<py::gil_scoped_release>(),
        "One full-batch Adam step on the loss.");

  // -------------------------------------------------------------------------
  // Evaluation
  // -------------------------------------------------------------------------
  py::class_<ErrorReport>(m, "ErrorReport")
      .def_readonly("component_errors", &ErrorReport::component_errors)
      .def_readonly("mean_error", &ErrorReport::mean_error)
      .def_readonly("time_slice", &ErrorReport::time_slice)
      .def_readonly("point_count", &ErrorReport::point_count);

  m.def("predict_fields", &predict_fields, "params"_a, "problem"_a, "points"_a,
        py::call_guard<py::gil_scoped_release>(),
        "Network velocity and pressure, one row per point.");
  m.def("relative_l2", &relative_l2, "params"_a, "problem"_a, "points"_a,
        "time_slice"_a = std::numeric_limits<double>::quiet_NaN(),
        py::call_guard<py::gil_scoped_release>(),
        "Per-component relative L2 errors against the closed form.");

  // -------------------------------------------------------------------------
  // Experiment runner
  // -------------------------------------------------------------------------
  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_readwrite("problem", &RunConfig::problem)
      .def_readwrite("optimizer", &RunConfig::optimizer)
      .def_readwrite("solver", &RunConfig::solver)
      .def_readwrite("gramian", &RunConfig::gramian)
      .def_readwrite("constraints", &RunConfig::constraints)
      .def_readwrite("iterations", &RunConfig::iterations)
      .def_readwrite("seed", &RunConfig::seed)
      .def_readwrite("width", &RunConfig::width)
      .def_readwrite("depth", &RunConfig::depth)
      .def_readwrite("eval_every", &RunConfig::eval_every)
      .def_readwrite("cg_tol", &RunConfig::cg_tol)
      .def_readwrite("cg_max_iter", &RunConfig::cg_max_iter)
      .def_readwrite("collocation", &RunConfig::collocation)
      .def_readwrite("out_dir", &RunConfig::out_dir);

  m.def("default_iterations", &default_iterations, "optimizer"_a, "solver"_a);
  m.def("resolve_config", &resolve_config, "config"_a,
        "Validates and fills defaults; raises ValueError on contradictions.");
  m.def("parse_config_file", &parse_config_file, "path"_a);
  m.def("config_topology", &config_topology, "config"_a, "problem"_a);
  m.def("report_csv_header", &report_csv_header, "dim"_a);

  py::class_<CheckpointRow>(m, "CheckpointRow")
      .def_readonly("iteration", &CheckpointRow::iteration)
      .def_readonly("loss", &CheckpointRow::loss)
      .def_readonly("component_errors", &CheckpointRow::component_errors)
      .def_readonly("mean_error", &CheckpointRow::mean_error)
      .def_readonly("eta", &CheckpointRow::eta)
      .def_readonly("cg_iterations", &CheckpointRow::cg_iterations)
      .def_readonly("wall_ms", &CheckpointRow::wall_ms);

  py::class_<TrainReport>(m, "TrainReport")
      .def_readonly("config", &TrainReport::config)
      .def_readonly("rows", &TrainReport::rows)
      .def_readonly("final_errors", &TrainReport::final_errors)
      .def_readonly("params", &TrainReport::params)
      .def_readonly("failed", &TrainReport::failed)
      .def_readonly("failure", &TrainReport::failure);

  m.def("run_experiment", &run_experiment, "config"_a,
        "on_checkpoint"_a = py::none(),
        py::call_guard<py::gil_scoped_release>(),
        "Trains per the config, writing history.csv, report.json, and the "
        "checkpoint under config.out_dir.");
  m.def("emit_report", &emit_report, "report"_a,
        py::call_guard<py::gil_scoped_release>());

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("params", &Checkpoint::params)
      .def_readonly("config", &Checkpoint::config);

  m.def("save_checkpoint", &save_checkpoint, "params"_a, "config"_a, "dir"_a);
  m.def("load_checkpoint", &load_checkpoint, "bin_path"_a,
        "Reads params.bin plus its JSON sidecar.");
  m.def("export_pushforward", &export_pushforward, "checkpoint"_a, "nx"_a,
        "ny"_a, "out_dir"_a, py::call_guard<py::gil_scoped_release>(),
        "Writes error_field.csv and the gradient/natural pushforward fields.");

  m.def("configure_workers", &configure_workers,
        "Applies the GNFLOW_WORKERS environment variable; returns the count.");
}
