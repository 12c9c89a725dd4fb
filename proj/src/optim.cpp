#include "gnflow/optim.hpp"

#include <cblas.h>
#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "gnflow/errors.hpp"

namespace gnflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

bool all_finite(const Eigen::VectorXd& v) { return v.allFinite(); }

}  // namespace

// ---------------------------------------------------------------------------
// Gradient and Gramian
// ---------------------------------------------------------------------------

Eigen::VectorXd gradient(const ResidualAssembly& assembly,
                         const ResidualAssembly::Forward& fwd) {
  return assembly.vjp(fwd, assembly.residual(fwd).values);
}

Eigen::MatrixXd gramian_from_jacobian(const RowMatrixXd& jacobian) {
  const int rows = static_cast<int>(jacobian.rows());
  const int cols = static_cast<int>(jacobian.cols());
  Eigen::MatrixXd g(cols, cols);
  if (cols == 0) return g;
  if (rows == 0) {
    g.setZero();
    return g;
  }
  // Row-major J (rows x cols) viewed column-major is J^T (cols x rows), so a
  // NoTrans rank-`rows` update yields J^T J directly.
  cblas_dsyrk(CblasColMajor, CblasLower, CblasNoTrans, cols, rows, 1.0,
              jacobian.data(), cols, 0.0, g.data(), cols);
  g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
  return g;
}

Eigen::MatrixXd gramian_dense(const ResidualAssembly& assembly,
                              const ResidualAssembly::Forward& fwd) {
  return gramian_from_jacobian(assembly.jacobian(fwd));
}

Eigen::VectorXd gramian_matvec(const ResidualAssembly& assembly,
                               const ResidualAssembly::Forward& fwd,
                               const Eigen::VectorXd& v) {
  return assembly.vjp(fwd, assembly.jvp(fwd, v));
}

Eigen::MatrixXd engd_gramian(const ResidualAssembly& assembly,
                             const ResidualAssembly::Forward& fwd) {
  const FlowProblem& prob = assembly.problem();
  if (prob.unsteady) {
    throw ArgumentError(
        "engd_gramian: the energy-Gramian correction is defined for "
        "stationary problems only");
  }
  const int d = prob.dim;
  const int npts = static_cast<int>(assembly.collocation().interior.count());
  const int pcount = assembly.parameter_count();

  Eigen::MatrixXd g = gramian_dense(assembly, fwd);

  // F stacks, per interior point and velocity component, the value row and
  // the d spatial-gradient rows of the parameter Jacobian of the wrapped
  // velocity: row ((pt*d + k)*(1+d) + j), j = 0 value, j >= 1 is d/dx_j.
  const RowMatrixXd f = assembly.interior_velocity_jacobian(fwd);
  const ResidualVector& res = assembly.residual(fwd);
  const Block* mom = res.layout.find(BlockKind::momentum);
  if (mom == nullptr) {
    throw ArgumentError(
        "engd_gramian: the residual has no momentum block to weight the "
        "correction with");
  }

  const double weight = 1.0 / static_cast<double>(npts);
  Eigen::MatrixXd half = Eigen::MatrixXd::Zero(pcount, pcount);
  Eigen::MatrixXd values(d, pcount);   // values[l]   = tangent of u_l
  Eigen::MatrixXd carried(d, pcount);  // carried[l]  = sum_k rho_k d_l(tangent of u_k)
  for (int pt = 0; pt < npts; ++pt) {
    carried.setZero();
    for (int l = 0; l < d; ++l) {
      values.row(l) = f.row((pt * d + l) * (1 + d));
      for (int k = 0; k < d; ++k) {
        const double rho = res.values[mom->offset + pt * d + k] / mom->scale;
        carried.row(l) += rho * f.row((pt * d + k) * (1 + d) + 1 + l);
      }
    }
    half.noalias() += weight * values.transpose() * carried;
  }
  g += half + half.transpose();
  return g;
}

// ---------------------------------------------------------------------------
// Linear solves
// ---------------------------------------------------------------------------

double gramian_damping(double loss) { return std::min(1e-5, loss); }

namespace {

/// One Cholesky attempt; returns false when the damped matrix is not
/// numerically positive definite.
bool try_spd_solve(const Eigen::MatrixXd& g, const Eigen::VectorXd& rhs,
                   double lambda, Eigen::VectorXd& x) {
  const int n = static_cast<int>(g.rows());
  Eigen::MatrixXd a = g;
  a.diagonal().array() += lambda;
  const int info_f = LAPACKE_dpotrf(LAPACK_COL_MAJOR, 'L', n, a.data(), n);
  if (info_f != 0) return false;
  x = rhs;
  const int info_s =
      LAPACKE_dpotrs(LAPACK_COL_MAJOR, 'L', n, 1, a.data(), n, x.data(), n);
  if (info_s != 0) return false;
  return all_finite(x);
}

void check_solve_shapes(const char* who, const Eigen::MatrixXd& g,
                        const Eigen::VectorXd& rhs) {
  if (g.rows() != g.cols()) {
    throw ArgumentError(std::string(who) + ": matrix must be square, got " +
                        std::to_string(g.rows()) + "x" +
                        std::to_string(g.cols()));
  }
  if (rhs.size() != g.rows()) {
    throw ArgumentError(std::string(who) + ": rhs length " +
                        std::to_string(rhs.size()) + " does not match order " +
                        std::to_string(g.rows()));
  }
}

}  // namespace

Eigen::VectorXd solve_spd(const Eigen::MatrixXd& g, const Eigen::VectorXd& rhs,
                          double lambda) {
  check_solve_shapes("solve_spd", g, rhs);
  Eigen::VectorXd x;
  if (!try_spd_solve(g, rhs, lambda, x)) {
    std::ostringstream msg;
    msg << "solve_spd: Cholesky factorization failed at damping " << lambda
        << " (order " << g.rows() << ", diagonal range ["
        << g.diagonal().minCoeff() << ", " << g.diagonal().maxCoeff() << "])";
    throw NumericalError(msg.str());
  }
  return x;
}

Eigen::VectorXd solve_direct(const Eigen::MatrixXd& g,
                             const Eigen::VectorXd& rhs, double loss) {
  check_solve_shapes("solve_direct", g, rhs);
  const double lambda0 = gramian_damping(loss);
  double lambda = lambda0;
  constexpr int kMaxAttempts = 6;  // initial try plus five retries
  Eigen::VectorXd x;
  for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
    if (try_spd_solve(g, rhs, lambda, x)) return x;
    // A zero floor would make the x10 ladder a no-op.
    const double floor =
        1e-12 * (1.0 + g.diagonal().cwiseAbs().maxCoeff());
    lambda = std::max(lambda, floor) * 10.0;
  }
  std::ostringstream msg;
  msg << "solve_direct: Cholesky factorization failed after " << kMaxAttempts
      << " attempts (initial damping " << lambda0 << ", final damping "
      << lambda / 10.0 << ", order " << g.rows() << ", diagonal range ["
      << g.diagonal().minCoeff() << ", " << g.diagonal().maxCoeff()
      << "]); the Gramian is too ill-conditioned for a direct solve";
  throw NumericalError(msg.str());
}

CgResult solve_cg(
    const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& matvec,
    const Eigen::VectorXd& rhs, double tol, int max_iter,
    double spectrum_floor) {
  if (!matvec) throw ArgumentError("solve_cg: matvec must be callable");
  if (!(tol > 0)) {
    throw ArgumentError("solve_cg: tolerance must be positive, got " +
                        std::to_string(tol));
  }
  if (max_iter < 0) {
    throw ArgumentError("solve_cg: max_iter must be non-negative, got " +
                        std::to_string(max_iter));
  }
  if (spectrum_floor < 0) {
    throw ArgumentError("solve_cg: spectrum_floor must be non-negative, got " +
                        std::to_string(spectrum_floor));
  }
  CgResult out;
  out.x = Eigen::VectorXd::Zero(rhs.size());
  const double bnorm = rhs.norm();
  if (bnorm == 0.0) {
    out.converged = true;
    return out;
  }
  Eigen::VectorXd r = rhs;  // residual of the zero iterate
  Eigen::VectorXd p = r;
  double rr = r.squaredNorm();
  for (int it = 1; it <= max_iter; ++it) {
    const Eigen::VectorXd ap = matvec(p);
    if (ap.size() != rhs.size()) {
      throw ArgumentError("solve_cg: matvec returned length " +
                          std::to_string(ap.size()) + ", expected " +
                          std::to_string(rhs.size()));
    }
    const double pap = p.dot(ap);
    if (!std::isfinite(pap) || pap <= 0.0) {
      throw NumericalError(
          "solve_cg: operator is not positive definite along the search "
          "direction (p.Ap = " +
          std::to_string(pap) + " at iteration " + std::to_string(it) + ")");
    }
    const double alpha = rr / pap;
    out.x += alpha * p;
    r -= alpha * ap;
    if (!all_finite(out.x)) {
      throw NumericalError("solve_cg: iterate became non-finite at iteration " +
                           std::to_string(it));
    }
    const double rr_next = r.squaredNorm();
    out.iterations = it;
    // |x - x*| = |A^-1 r| <= |r| / lambda_min(A); with a known floor the
    // residual test turns into a bound on the solution error itself.
    const double threshold = spectrum_floor > 0
                                 ? tol * spectrum_floor * out.x.norm()
                                 : tol * bnorm;
    if (std::sqrt(rr_next) <= threshold) {
      out.converged = true;
      return out;
    }
    p = r + (rr_next / rr) * p;
    rr = rr_next;
  }
  out.converged = false;
  return out;
}

// ---------------------------------------------------------------------------
// Line search
// ---------------------------------------------------------------------------

double line_search_eta(int grid_index) {
  if (grid_index < 0 || grid_index >= kLineSearchGrid) {
    throw ArgumentError("line_search_eta: index " + std::to_string(grid_index) +
                        " outside the 32-point grid");
  }
  if (grid_index == kLineSearchGrid - 1) return 0.0;
  return std::ldexp(1.0, -grid_index);  // 2^0 .. 2^-30
}

LineSearchResult line_search(
    const std::function<LossBreakdown(const Eigen::VectorXd&)>& loss_at,
    const Eigen::VectorXd& theta0, const Eigen::VectorXd& direction) {
  if (!loss_at) throw ArgumentError("line_search: loss functional must be callable");
  if (direction.size() != theta0.size()) {
    throw ArgumentError("line_search: direction length " +
                        std::to_string(direction.size()) +
                        " does not match parameter length " +
                        std::to_string(theta0.size()));
  }
  LineSearchResult best;
  double best_total = kInf;
  // Descending etas: the strict comparison keeps the largest step on ties.
  for (int i = 0; i < kLineSearchGrid; ++i) {
    const double eta = line_search_eta(i);
    LossBreakdown trial;
    double total = kInf;
    try {
      trial = loss_at(theta0 - eta * direction);
      if (std::isfinite(trial.total)) total = trial.total;
    } catch (const NumericalError&) {
      // Non-finite residuals at this step size: skip the grid point.
    }
    if (total < best_total) {
      best_total = total;
      best.eta = eta;
      best.loss = trial;
      best.grid_index = i;
    }
  }
  if (!std::isfinite(best_total)) {
    throw NumericalError(
        "line_search: loss is non-finite at every step size, including "
        "eta = 0");
  }
  return best;
}

LineSearchResult line_search(const ResidualAssembly& assembly,
                             const FlatParams& params,
                             const Eigen::VectorXd& direction) {
  FlatParams trial = params;
  auto loss_at = [&assembly, &trial](const Eigen::VectorXd& theta) {
    trial.values = theta;
    return assembly.loss(trial);
  };
  return line_search(loss_at, params.values, direction);
}

// ---------------------------------------------------------------------------
// Optimizer steps
// ---------------------------------------------------------------------------

OptState gnng_step(const ResidualAssembly& assembly, OptState state,
                   const GnngConfig& config) {
  const int pcount = assembly.parameter_count();
  if (config.energy_gramian && config.solver != GnngConfig::Solver::dense) {
    throw ArgumentError(
        "gnng_step: the energy Gramian is only available with the dense "
        "solver");
  }
  try {
    ResidualAssembly::ForwardPtr fwd = assembly.forward(state.params, true);
    const LossBreakdown before = loss_breakdown(assembly.residual(*fwd));
    const Eigen::VectorXd grad = gradient(assembly, *fwd);
    const double lambda = gramian_damping(before.total);

    Eigen::VectorXd direction;
    int cg_iterations = 0;
    bool cg_converged = true;
    if (config.solver == GnngConfig::Solver::dense) {
      const Eigen::MatrixXd g = config.energy_gramian
                                    ? engd_gramian(assembly, *fwd)
                                    : gramian_dense(assembly, *fwd);
      direction = solve_direct(g, grad, before.total);
    } else {
      const int max_iter =
          config.cg_max_iter > 0 ? config.cg_max_iter : 10 * pcount;
      auto damped = [&assembly, &fwd, lambda](const Eigen::VectorXd& v) {
        return (gramian_matvec(assembly, *fwd, v) + lambda * v).eval();
      };
      // The damping is a spectrum floor for the damped operator, which turns
      // cg_tol into a relative error bound on the direction itself.
      CgResult cg = solve_cg(damped, grad, config.cg_tol, max_iter, lambda);
      direction = std::move(cg.x);
      cg_iterations = cg.iterations;
      cg_converged = cg.converged;
    }

    const LineSearchResult ls = line_search(assembly, state.params, direction);

    state.params.values -= ls.eta * direction;
    state.iteration += 1;
    state.loss = ls.loss.total;
    state.loss_parts = ls.loss;
    state.eta = ls.eta;
    state.line_search_index = ls.grid_index;
    state.cg_iterations = cg_iterations;
    state.cg_converged = cg_converged;
    state.step_failed = false;
    state.failure.clear();
    return state;
  } catch (const NumericalError& err) {
    state.step_failed = true;
    state.failure = err.what();
    return state;
  }
}

double adam_learning_rate(int k) {
  if (k < 0) throw ArgumentError("adam_learning_rate: negative step index");
  if (k < 15000) return 1e-3;
  const int drops = 1 + (k - 15000) / 10000;
  return 1e-3 * std::pow(0.1, drops);
}

void adam_update(Eigen::VectorXd& values, const Eigen::VectorXd& grad,
                 AdamState& moments, const AdamConfig& config) {
  if (grad.size() != values.size()) {
    throw ArgumentError("adam_update: gradient length " +
                        std::to_string(grad.size()) +
                        " does not match parameter length " +
                        std::to_string(values.size()));
  }
  if (moments.m.size() != values.size()) {
    moments.m = Eigen::VectorXd::Zero(values.size());
    moments.v = Eigen::VectorXd::Zero(values.size());
    moments.step = 0;
  }
  const double lr = adam_learning_rate(moments.step);
  moments.m = config.beta1 * moments.m + (1.0 - config.beta1) * grad;
  moments.v =
      config.beta2 * moments.v + (1.0 - config.beta2) * grad.cwiseAbs2();
  moments.step += 1;
  const double bias1 = 1.0 - std::pow(config.beta1, moments.step);
  const double bias2 = 1.0 - std::pow(config.beta2, moments.step);
  values.array() -= lr * (moments.m.array() / bias1) /
                    ((moments.v.array() / bias2).sqrt() + config.eps);
}

OptState adam_step(const ResidualAssembly& assembly, OptState state,
                   AdamState& moments, const AdamConfig& config) {
  try {
    ResidualAssembly::ForwardPtr fwd = assembly.forward(state.params, true);
    const LossBreakdown before = loss_breakdown(assembly.residual(*fwd));
    const Eigen::VectorXd grad = gradient(assembly, *fwd);

    state.eta = adam_learning_rate(moments.step);
    adam_update(state.params.values, grad, moments, config);
    state.iteration += 1;
    state.loss = before.total;
    state.loss_parts = before;
    state.line_search_index = -1;
    state.cg_iterations = 0;
    state.cg_converged = true;
    state.step_failed = false;
    state.failure.clear();
    return state;
  } catch (const NumericalError& err) {
    state.step_failed = true;
    state.failure = err.what();
    return state;
  }
}

}  // namespace gnflow
