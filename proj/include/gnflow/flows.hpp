/// @file flows.hpp
/// @brief Closed-form benchmark flows, relative-L2 evaluation, and
///        parameter-direction pushforward fields.

#pragma once

#include <Eigen/Dense>
#include <limits>

#include "gnflow/problem.hpp"

namespace gnflow {

// ---------------------------------------------------------------------------
// Closed-form solutions
// ---------------------------------------------------------------------------

/// Kovasznay wake flow (steady 2D, nu = 1/40):
///   u = 1 - e^{lx} cos(2 pi y),  v = (l / 2 pi) e^{lx} sin(2 pi y),
///   p = (1 - e^{2lx}) / 2,  l = 1/(2 nu) - sqrt(1/(4 nu^2) + 4 pi^2).
std::array<double, 3> kovasznay_solution(double x, double y);

/// Beltrami flow (unsteady 3D, nu = 1), the divergence-free form
///   u = -[e^x sin(y+z) + e^z cos(x+y)] e^{-t}   (+ cyclic for v, w),
///   p = -1/2 [e^{2x} + e^{2y} + e^{2z} + 2 sin(x+y) cos(z+x) e^{y+z}
///       + 2 sin(y+z) cos(x+y) e^{z+x} + 2 sin(z+x) cos(y+z) e^{x+y}] e^{-2t}.
std::array<double, 4> beltrami_solution(double x, double y, double z, double t);

/// Taylor-Green vortex (unsteady 2D, nu = 1/500), F(t) = e^{-2 nu t}:
///   u = sin x cos y F,  v = -cos x sin y F,  p = (cos 2x + cos 2y) F^2 / 4.
std::array<double, 3> taylor_green_solution(double x, double y, double t);

// ---------------------------------------------------------------------------
// Problem factories
// ---------------------------------------------------------------------------

/// Steady 2D Kovasznay flow on [-0.5,1] x [-0.5,1.5]; soft boundary.
FlowProblem make_kovasznay();

/// Unsteady 3D Beltrami flow on [-1,1]^3 x [0,1]; soft boundary and initial.
FlowProblem make_beltrami();

/// Unsteady 2D Taylor-Green vortex on [0,2pi]^2 x [0,10]. Periodicity is
/// always imposed through the input embedding; `hard_constraints` addition-
/// ally imposes the divergence-free curl ansatz and exact initial values
/// (leaving only the momentum residual block). The soft variant keeps
/// divergence and initial conditions as residual blocks.
FlowProblem make_taylor_green(bool hard_constraints);

/// Factory by name ("kovasznay", "beltrami", "taylor_green"); throws
/// ConfigError for unknown names or unsupported constraint requests.
FlowProblem make_problem(const std::string& name, bool hard_constraints);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Relative L2 errors per field component plus their mean E_m.
struct ErrorReport {
  std::vector<double> component_errors;  // e_u, e_v[, e_w], e_p
  double mean_error = 0.0;
  double time_slice = std::numeric_limits<double>::quiet_NaN();
  int point_count = 0;
};

/// Predicted fields of the constrained ansatz at the given points; row i
/// holds (u, v[, w], p) at points.point(i).
Eigen::MatrixXd predict_fields(const FlatParams& params,
                               const FlowProblem& problem,
                               const PointSet& points);

/// Componentwise relative L2 errors over `eval_points` (which must already
/// lie at the evaluation time slice for unsteady problems; pass NaN for
/// steady ones). Pressure is mean-centered over the evaluation set on both
/// the predicted and true side before the norm. The caller supplies an
/// evaluation set at least ten times the training interior count (the
/// experiment runner uses the sampled validation set). Throws NumericalError
/// if a true component has zero norm.
ErrorReport relative_l2(const FlatParams& params, const FlowProblem& problem,
                        const PointSet& eval_points, double time_slice);

// ---------------------------------------------------------------------------
// Pushforward of a parameter direction
// ---------------------------------------------------------------------------

/// Tangent-space pushforward of a parameter direction: row i holds
/// sum_j direction_j * d(field_k)/d(param_j) at grid.point(i) for every field
/// component k, computed in forward tangent mode through the constrained
/// ansatz. `error_field` holds prediction minus truth at the same points.
/// Values are raw; exports normalize with normalize_max_abs.
struct PushforwardField {
  Eigen::MatrixXd direction_field;  // n_points x fields
  Eigen::MatrixXd error_field;      // n_points x fields
};

PushforwardField pushforward_field(const FlatParams& params,
                                   const FlowProblem& problem,
                                   const ParamTangent& direction,
                                   const PointSet& grid);

/// Scales each column to max |value| = 1 (columns that are identically zero
/// are left untouched).
void normalize_max_abs(Eigen::MatrixXd& fields);

}  // namespace gnflow
