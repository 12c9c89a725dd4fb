/// @file flows.cpp
/// @brief Closed-form benchmark flows, factories, evaluation, pushforwards.

#include "gnflow/flows.hpp"

#include <cmath>

#include "gnflow/errors.hpp"

namespace gnflow {

namespace {

constexpr double kKovasznayNu = 1.0 / 40.0;
constexpr double kTaylorGreenNu = 1.0 / 500.0;

double kovasznay_lambda() {
  return 1.0 / (2.0 * kKovasznayNu) -
         std::sqrt(1.0 / (4.0 * kKovasznayNu * kKovasznayNu) +
                   4.0 * M_PI * M_PI);
}

// --- jet-form solutions ----------------------------------------------------

std::vector<Jet> kovasznay_jets(std::span<const double> in, int K) {
  const JetSpace& s = jet_space(2, K);
  const double lam = kovasznay_lambda();
  const Jet jx = jet_seed_in(s, in, 0), jy = jet_seed_in(s, in, 1);
  const Jet elx = jet_exp(jet_scale(jx, lam));
  const Jet u = jet_sub(jet_constant(1.0, s),
                        jet_mul(elx, jet_cos(jet_scale(jy, 2.0 * M_PI))));
  const Jet v = jet_scale(jet_mul(elx, jet_sin(jet_scale(jy, 2.0 * M_PI))),
                          lam / (2.0 * M_PI));
  const Jet p = jet_scale(
      jet_sub(jet_constant(1.0, s), jet_exp(jet_scale(jx, 2.0 * lam))), 0.5);
  return {u, v, p};
}

std::vector<Jet> taylor_green_jets(std::span<const double> in, int K) {
  const JetSpace& s = jet_space(3, K);
  const Jet jx = jet_seed_in(s, in, 0), jy = jet_seed_in(s, in, 1),
            jt = jet_seed_in(s, in, 2);
  const Jet F = jet_exp(jet_scale(jt, -2.0 * kTaylorGreenNu));
  const Jet u = jet_mul(jet_mul(jet_sin(jx), jet_cos(jy)), F);
  const Jet v = jet_neg(jet_mul(jet_mul(jet_cos(jx), jet_sin(jy)), F));
  const Jet p = jet_scale(
      jet_mul(jet_add(jet_cos(jet_scale(jx, 2.0)), jet_cos(jet_scale(jy, 2.0))),
              jet_mul(F, F)),
      0.25);
  return {u, v, p};
}

std::vector<Jet> beltrami_jets(std::span<const double> in, int K) {
  const JetSpace& s = jet_space(4, K);
  const Jet jx = jet_seed_in(s, in, 0), jy = jet_seed_in(s, in, 1),
            jz = jet_seed_in(s, in, 2), jt = jet_seed_in(s, in, 3);
  const Jet ex = jet_exp(jx), ey = jet_exp(jy), ez = jet_exp(jz);
  const Jet emt = jet_exp(jet_neg(jt));
  const Jet em2t = jet_exp(jet_scale(jt, -2.0));
  const Jet sxy = jet_sin(jet_add(jx, jy)), cxy = jet_cos(jet_add(jx, jy));
  const Jet syz = jet_sin(jet_add(jy, jz)), cyz = jet_cos(jet_add(jy, jz));
  const Jet szx = jet_sin(jet_add(jz, jx)), czx = jet_cos(jet_add(jz, jx));

  const Jet u = jet_neg(
      jet_mul(jet_add(jet_mul(ex, syz), jet_mul(ez, cxy)), emt));
  const Jet v = jet_neg(
      jet_mul(jet_add(jet_mul(ey, szx), jet_mul(ex, cyz)), emt));
  const Jet w = jet_neg(
      jet_mul(jet_add(jet_mul(ez, sxy), jet_mul(ey, czx)), emt));

  Jet bracket = jet_add(jet_add(jet_mul(ex, ex), jet_mul(ey, ey)),
                        jet_mul(ez, ez));
  bracket = jet_add(bracket,
                    jet_scale(jet_mul(jet_mul(sxy, czx), jet_mul(ey, ez)), 2.0));
  bracket = jet_add(bracket,
                    jet_scale(jet_mul(jet_mul(syz, cxy), jet_mul(ez, ex)), 2.0));
  bracket = jet_add(bracket,
                    jet_scale(jet_mul(jet_mul(szx, cyz), jet_mul(ex, ey)), 2.0));
  const Jet p = jet_scale(jet_mul(bracket, em2t), -0.5);
  return {u, v, w, p};
}

// --- factory plumbing ------------------------------------------------------

void wire_data_functions(FlowProblem& P) {
  const auto sol = P.solution;
  const int d = P.dim;
  P.forcing = [d](std::span<const double>, std::span<double> f) {
    for (int k = 0; k < d; ++k) f[k] = 0.0;
  };
  auto trace = [sol, d](std::span<const double> in, std::span<double> g) {
    std::array<double, 4> buf{};
    sol(in, std::span<double>(buf.data(), std::size_t(d) + 1));
    for (int k = 0; k < d; ++k) g[k] = buf[k];
  };
  P.boundary_data = trace;
  P.initial_data = trace;
}

}  // namespace

std::array<double, 3> kovasznay_solution(double x, double y) {
  const double lam = kovasznay_lambda();
  const double elx = std::exp(lam * x);
  return {1.0 - elx * std::cos(2.0 * M_PI * y),
          lam / (2.0 * M_PI) * elx * std::sin(2.0 * M_PI * y),
          0.5 * (1.0 - std::exp(2.0 * lam * x))};
}

std::array<double, 4> beltrami_solution(double x, double y, double z,
                                        double t) {
  const double emt = std::exp(-t);
  const double u = -(std::exp(x) * std::sin(y + z) +
                     std::exp(z) * std::cos(x + y)) * emt;
  const double v = -(std::exp(y) * std::sin(z + x) +
                     std::exp(x) * std::cos(y + z)) * emt;
  const double w = -(std::exp(z) * std::sin(x + y) +
                     std::exp(y) * std::cos(z + x)) * emt;
  const double p =
      -0.5 *
      (std::exp(2 * x) + std::exp(2 * y) + std::exp(2 * z) +
       2 * std::sin(x + y) * std::cos(z + x) * std::exp(y + z) +
       2 * std::sin(y + z) * std::cos(x + y) * std::exp(z + x) +
       2 * std::sin(z + x) * std::cos(y + z) * std::exp(x + y)) *
      std::exp(-2 * t);
  return {u, v, w, p};
}

std::array<double, 3> taylor_green_solution(double x, double y, double t) {
  const double F = std::exp(-2.0 * kTaylorGreenNu * t);
  return {std::sin(x) * std::cos(y) * F, -std::cos(x) * std::sin(y) * F,
          0.25 * (std::cos(2 * x) + std::cos(2 * y)) * F * F};
}

FlowProblem make_kovasznay() {
  FlowProblem P;
  P.name = "kovasznay";
  P.dim = 2;
  P.unsteady = false;
  P.viscosity = kKovasznayNu;
  P.bounds = {{{-0.5, 1.0}, {-0.5, 1.5}, {0.0, 0.0}}};
  P.solution = [](std::span<const double> in, std::span<double> out) {
    const auto s = kovasznay_solution(in[0], in[1]);
    std::copy(s.begin(), s.end(), out.begin());
  };
  P.solution_jets = [](std::span<const double> in, int K) {
    return kovasznay_jets(in, K);
  };
  wire_data_functions(P);
  return P;
}

FlowProblem make_beltrami() {
  FlowProblem P;
  P.name = "beltrami";
  P.dim = 3;
  P.unsteady = true;
  P.viscosity = 1.0;  // Re = 1
  P.bounds = {{{-1.0, 1.0}, {-1.0, 1.0}, {-1.0, 1.0}}};
  P.time_interval = {0.0, 1.0};
  P.solution = [](std::span<const double> in, std::span<double> out) {
    const auto s = beltrami_solution(in[0], in[1], in[2], in[3]);
    std::copy(s.begin(), s.end(), out.begin());
  };
  P.solution_jets = [](std::span<const double> in, int K) {
    return beltrami_jets(in, K);
  };
  wire_data_functions(P);
  return P;
}

FlowProblem make_taylor_green(bool hard_constraints) {
  FlowProblem P;
  P.name = "taylor_green";
  P.dim = 2;
  P.unsteady = true;
  P.viscosity = kTaylorGreenNu;
  P.bounds = {{{0.0, 2.0 * M_PI}, {0.0, 2.0 * M_PI}, {0.0, 0.0}}};
  P.time_interval = {0.0, 10.0};
  // Periodicity is always built into the ansatz (no boundary block); the
  // hard variant additionally removes the divergence and initial blocks.
  P.constraints.periodic = true;
  P.constraints.periods = {2.0 * M_PI, 2.0 * M_PI, 0.0};
  P.constraints.boundary_soft = false;
  if (hard_constraints) {
    P.constraints.divergence_free = true;
    P.constraints.exact_initial = true;
  }
  P.solution = [](std::span<const double> in, std::span<double> out) {
    const auto s = taylor_green_solution(in[0], in[1], in[2]);
    std::copy(s.begin(), s.end(), out.begin());
  };
  P.solution_jets = [](std::span<const double> in, int K) {
    return taylor_green_jets(in, K);
  };
  wire_data_functions(P);
  return P;
}

FlowProblem make_problem(const std::string& name, bool hard_constraints) {
  if (name == "kovasznay" || name == "beltrami") {
    if (hard_constraints)
      throw ConfigError("constraints: hard mode is only defined for "
                        "taylor_green (got problem '" + name + "')");
    return name == "kovasznay" ? make_kovasznay() : make_beltrami();
  }
  if (name == "taylor_green") return make_taylor_green(hard_constraints);
  throw ConfigError("unknown problem '" + name +
                    "' (expected kovasznay, beltrami, or taylor_green)");
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

void check_topology(const FlatParams& params, const FlowProblem& problem) {
  const Topology& t = params.topology;
  if (t.dim != problem.dim || t.unsteady != problem.unsteady)
    throw ArgumentError("parameters were built for a different problem shape");
}

/// Velocity values of the constrained ansatz at one point, given the raw
/// velocity-net output jets (order >= 1 when the curl ansatz is active).
std::vector<double> wrapped_velocity_values(const FlowProblem& problem,
                                            std::span<const double> pt,
                                            std::span<const Jet> raw,
                                            bool is_tangent) {
  std::vector<double> u;
  if (problem.constraints.divergence_free) {
    u = potential_velocity_values(raw, problem.dim);
  } else {
    if (static_cast<int>(raw.size()) != problem.dim)
      throw ArgumentError("velocity output count does not match dimension");
    u.resize(raw.size());
    for (std::size_t k = 0; k < raw.size(); ++k) u[k] = raw[k].value();
  }
  if (problem.constraints.exact_initial) {
    const int m = problem.input_dim();
    const double ell = pt[m - 1] - problem.time_interval[0];
    if (is_tangent) {
      for (double& x : u) x *= ell;  // d/dv [g + ell*N] = ell * dN/dv
    } else {
      std::array<double, 4> buf = {0, 0, 0, 0};
      std::array<double, 3> g{};
      std::copy(pt.begin(), pt.end(), buf.begin());
      buf[m - 1] = problem.time_interval[0];
      problem.initial_data(std::span<const double>(buf.data(), pt.size()),
                           std::span<double>(g.data(), std::size_t(problem.dim)));
      for (int k = 0; k < problem.dim; ++k) u[k] = g[k] + ell * u[k];
    }
  }
  return u;
}

}  // namespace

Eigen::MatrixXd predict_fields(const FlatParams& params,
                               const FlowProblem& problem,
                               const PointSet& points) {
  check_topology(params, problem);
  if (points.stride != problem.input_dim())
    throw ArgumentError("point stride does not match problem input dimension");
  const int n = points.count();
  const JetSpace& sv =
      jet_space(problem.input_dim(), problem.constraints.divergence_free ? 1 : 0);
  const JetSpace& sp = jet_space(problem.input_dim(), 0);

  Eigen::MatrixXd out(n, problem.fields());
  for (int i = 0; i < n; ++i) {
    const auto pt = points.point(i);
    const auto raw =
        mlp_eval(params, NetId::velocity, embed_point(params.topology, pt, sv));
    const auto u = wrapped_velocity_values(problem, pt, raw, false);
    for (int k = 0; k < problem.dim; ++k) out(i, k) = u[k];
    const auto pj =
        mlp_eval(params, NetId::pressure, embed_point(params.topology, pt, sp));
    out(i, problem.dim) = pj[0].value();
  }
  return out;
}

ErrorReport relative_l2(const FlatParams& params, const FlowProblem& problem,
                        const PointSet& eval_points, double time_slice) {
  if (eval_points.count() == 0)
    throw ArgumentError("relative_l2: empty evaluation set");
  const int n = eval_points.count();
  const int nf = problem.fields();

  Eigen::MatrixXd pred = predict_fields(params, problem, eval_points);
  Eigen::MatrixXd truth(n, nf);
  for (int i = 0; i < n; ++i) {
    std::array<double, 4> buf{};
    problem.solution(eval_points.point(i),
                     std::span<double>(buf.data(), std::size_t(nf)));
    for (int k = 0; k < nf; ++k) truth(i, k) = buf[k];
  }
  // Pressure gauge: remove the evaluation-set mean from both sides.
  const int pc = nf - 1;
  pred.col(pc).array() -= pred.col(pc).mean();
  truth.col(pc).array() -= truth.col(pc).mean();

  ErrorReport report;
  report.time_slice = time_slice;
  report.point_count = n;
  report.component_errors.resize(nf);
  for (int k = 0; k < nf; ++k) {
    const double denom = truth.col(k).norm();
    if (!(denom > 0.0))
      throw NumericalError("relative_l2: true field component " +
                           std::to_string(k) +
                           " has zero norm on the evaluation set");
    report.component_errors[k] = (pred.col(k) - truth.col(k)).norm() / denom;
  }
  report.mean_error = 0.0;
  for (double e : report.component_errors) report.mean_error += e;
  report.mean_error /= nf;
  return report;
}

PushforwardField pushforward_field(const FlatParams& params,
                                   const FlowProblem& problem,
                                   const ParamTangent& direction,
                                   const PointSet& grid) {
  check_topology(params, problem);
  if (grid.stride != problem.input_dim())
    throw ArgumentError("grid stride does not match problem input dimension");
  const int n = grid.count();
  const int nf = problem.fields();
  const JetSpace& sv =
      jet_space(problem.input_dim(), problem.constraints.divergence_free ? 1 : 0);
  const JetSpace& sp = jet_space(problem.input_dim(), 0);

  PushforwardField field;
  field.direction_field.resize(n, nf);
  field.error_field.resize(n, nf);
  for (int i = 0; i < n; ++i) {
    const auto pt = grid.point(i);
    const JetPair vel = mlp_eval_tangent(
        params, NetId::velocity, embed_point(params.topology, pt, sv), direction);
    const auto uval = wrapped_velocity_values(problem, pt, vel.value, false);
    const auto utan = wrapped_velocity_values(problem, pt, vel.tangent, true);
    const JetPair pr = mlp_eval_tangent(
        params, NetId::pressure, embed_point(params.topology, pt, sp), direction);

    std::array<double, 4> truth{};
    problem.solution(pt, std::span<double>(truth.data(), std::size_t(nf)));
    for (int k = 0; k < problem.dim; ++k) {
      field.direction_field(i, k) = utan[k];
      field.error_field(i, k) = uval[k] - truth[k];
    }
    field.direction_field(i, nf - 1) = pr.tangent[0].value();
    field.error_field(i, nf - 1) = pr.value[0].value() - truth[nf - 1];
  }
  return field;
}

void normalize_max_abs(Eigen::MatrixXd& fields) {
  for (Eigen::Index c = 0; c < fields.cols(); ++c) {
    const double m = fields.col(c).cwiseAbs().maxCoeff();
    if (m > 0.0) fields.col(c) /= m;
  }
}

}  // namespace gnflow
