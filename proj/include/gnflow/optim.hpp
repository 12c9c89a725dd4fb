/// @file optim.hpp
/// @brief Gauss-Newton natural-gradient training loop pieces: loss gradient,
///        Gramian (dense and matrix-free), damped direct and CG solves,
///        logarithmic-grid line search, the Adam baseline, and the
///        energy-Gramian extension for stationary problems.
///
/// One optimizer iteration is
///   grad = J^T r,  solve (G + min(1e-5, L) I) d = grad  with G = J^T J,
///   eta* = argmin over {2^0 .. 2^-30, 0} of L(params - eta d),
///   params <- params - eta* d,
/// where the Gramian solve runs either on the materialized matrix (Cholesky,
/// with a x10 damping retry ladder) or matrix-free through conjugate
/// gradients on v -> J^T(J v) + lambda v.

#pragma once

#include <Eigen/Dense>
#include <functional>
#include <limits>
#include <string>

#include "gnflow/residual.hpp"

namespace gnflow {

// ---------------------------------------------------------------------------
// Gradient and Gramian
// ---------------------------------------------------------------------------

/// grad L = J^T r at the forward state (one reverse sweep).
Eigen::VectorXd gradient(const ResidualAssembly& assembly,
                         const ResidualAssembly::Forward& fwd);

/// G = J^T J from a materialized row-major Jacobian (one rank-R update).
Eigen::MatrixXd gramian_from_jacobian(const RowMatrixXd& jacobian);

/// Dense Gramian G = J^T J at the forward state. Symmetric by construction;
/// throws CapacityError when the Jacobian exceeds the assembly's budget.
Eigen::MatrixXd gramian_dense(const ResidualAssembly& assembly,
                              const ResidualAssembly::Forward& fwd);

/// Matrix-free Gramian product G v = J^T (J v); never materializes J.
Eigen::VectorXd gramian_matvec(const ResidualAssembly& assembly,
                               const ResidualAssembly::Forward& fwd,
                               const Eigen::VectorXd& v);

/// Energy-Gramian for stationary problems: G + H where
///   H_ij = (1/N) sum_pts < rho, (d_i u . grad) d_j u + (d_j u . grad) d_i u >
/// with rho the unscaled momentum residual and d_i u the parameter tangents
/// of the wrapped velocity. May be indefinite. Throws ArgumentError for
/// unsteady problems (the formula is stationary-only).
Eigen::MatrixXd engd_gramian(const ResidualAssembly& assembly,
                             const ResidualAssembly::Forward& fwd);

// ---------------------------------------------------------------------------
// Linear solves
// ---------------------------------------------------------------------------

/// lambda = min(1e-5, L): the additive damping of the Gramian.
double gramian_damping(double loss);

/// Single Cholesky solve of (G + lambda I) x = rhs. Throws NumericalError
/// when the damped matrix is not positive definite or the solution is
/// non-finite.
Eigen::VectorXd solve_spd(const Eigen::MatrixXd& G, const Eigen::VectorXd& rhs,
                          double lambda);

/// Damped direct solve with lambda = min(1e-5, loss); on factorization
/// failure retries with damping x10 up to five times before throwing a
/// NumericalError carrying diagonal diagnostics.
Eigen::VectorXd solve_direct(const Eigen::MatrixXd& G,
                             const Eigen::VectorXd& rhs, double loss);

struct CgResult {
  Eigen::VectorXd x;
  bool converged = false;
  int iterations = 0;
};

/// Conjugate gradients on an SPD operator from the zero vector. With
/// spectrum_floor == 0 the stop is the classical relative residual
/// |r| <= tol * |rhs|. When a positive lower bound on the operator's
/// smallest eigenvalue is known (the damped Gramian has floor lambda), pass
/// it: the stop tightens to |r| <= tol * floor * |x|, which bounds the
/// solution error by tol * |x| independently of the conditioning. Exceeding
/// max_iter flags non-convergence and returns the best iterate; non-finite
/// iterates or a non-positive curvature direction throw NumericalError.
CgResult solve_cg(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& matvec,
                  const Eigen::VectorXd& rhs, double tol, int max_iter,
                  double spectrum_floor = 0.0);

// ---------------------------------------------------------------------------
// Line search
// ---------------------------------------------------------------------------

/// The step-size grid {2^0, 2^-1, ..., 2^-30, 0} (32 entries).
constexpr int kLineSearchGrid = 32;
double line_search_eta(int grid_index);

struct LineSearchResult {
  double eta = 0.0;
  LossBreakdown loss;   ///< loss at the selected step
  int grid_index = -1;  ///< index into the eta grid
};

/// Evaluates `loss_at(theta0 - eta * direction)` on the grid and returns the
/// argmin; ties break toward larger eta. Evaluations that throw
/// NumericalError or return non-finite totals count as +inf; all-non-finite
/// grids throw NumericalError.
LineSearchResult line_search(
    const std::function<LossBreakdown(const Eigen::VectorXd&)>& loss_at,
    const Eigen::VectorXd& theta0, const Eigen::VectorXd& direction);

/// Assembly-bound convenience overload.
LineSearchResult line_search(const ResidualAssembly& assembly,
                             const FlatParams& params,
                             const Eigen::VectorXd& direction);

// ---------------------------------------------------------------------------
// Optimizer steps
// ---------------------------------------------------------------------------

struct GnngConfig {
  enum class Solver { dense, cg };
  Solver solver = Solver::dense;
  double cg_tol = 1e-5;
  int cg_max_iter = 0;          ///< 0 -> 10 * parameter count
  bool energy_gramian = false;  ///< dense + stationary only: use engd_gramian
};

struct OptState {
  FlatParams params;
  int iteration = 0;
  double loss = std::numeric_limits<double>::quiet_NaN();  ///< accepted loss
  LossBreakdown loss_parts;
  double eta = 0.0;           ///< last accepted step size
  int line_search_index = -1;
  int cg_iterations = 0;      ///< 0 on the dense path
  bool cg_converged = true;
  bool step_failed = false;   ///< set when a step was abandoned
  std::string failure;        ///< reason for the abandoned step
};

/// One damped Gauss-Newton iteration (gradient, Gramian solve, line search,
/// update). Numerical failures leave the parameters unchanged and flag the
/// state; configuration and capacity errors propagate.
OptState gnng_step(const ResidualAssembly& assembly, OptState state,
                   const GnngConfig& config);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m, v;  ///< first/second moment accumulators
  int step = 0;          ///< completed updates
};

/// Staircase schedule: 1e-3 for k < 15000, then x0.1 at 15000 and again
/// every 10000 steps.
double adam_learning_rate(int k);

/// One in-place Adam update (bias-corrected) at the schedule's rate for the
/// current step counter; increments the counter.
void adam_update(Eigen::VectorXd& values, const Eigen::VectorXd& grad,
                 AdamState& moments, const AdamConfig& config = {});

/// One Adam iteration on the assembly's loss; `state.loss` reports the loss
/// at the pre-update parameters.
OptState adam_step(const ResidualAssembly& assembly, OptState state,
                   AdamState& moments, const AdamConfig& config = {});

}  // namespace gnflow
