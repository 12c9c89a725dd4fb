/// @file network.hpp
/// @brief MLP evaluation through jets and hard-constraint transformations.
///
/// The reference evaluators here process one point at a time with explicit
/// Jet objects; they define the semantics that the batched residual-assembly
/// kernels must reproduce and are what the derivative tests exercise.
///
/// Hard constraints (imposed by construction, removing the matching residual
/// block):
///   - periodic:        Fourier input embedding, see periodic_embed;
///   - divergence_free: velocity = curl of a learned potential;
///   - exact_initial:   u_hat = g(x) + ell(t) * N(t, x) with ell(0) = 0.

#pragma once

#include <span>
#include <vector>

#include "gnflow/jet.hpp"
#include "gnflow/params.hpp"

namespace gnflow {

/// Which conditions are imposed exactly by the ansatz ("hard") versus left to
/// residual blocks ("soft"). exact_initial requires an unsteady problem;
/// divergence_free requires jets of order 3 (the curl consumes one order).
/// The time multiplier for exact_initial is ell(t) = t.
struct ConstraintMode {
  bool divergence_free = false;
  bool exact_initial = false;
  bool periodic = false;
  std::array<double, 3> periods{0.0, 0.0, 0.0};
  bool boundary_soft = true;
};

/// Validates a constraint mode against the problem kind. Throws ConfigError
/// for contradictions (exact_initial on a steady problem, non-positive
/// period, a time multiplier with ell(0) != 0).
void validate_constraint_mode(const ConstraintMode& mode, bool unsteady);

/// Identity embedding: one seeded coordinate jet per input variable.
std::vector<Jet> identity_embed(std::span<const double> point,
                                const JetSpace& space);

/// Periodic embedding: each spatial coordinate x_j becomes the pair
/// (cos(2 pi x_j / P_j), sin(2 pi x_j / P_j)); the trailing time coordinate
/// (when `unsteady`) passes through as a seed. Throws ArgumentError for
/// non-positive periods.
std::vector<Jet> periodic_embed(std::span<const double> point,
                                std::span<const double> periods, bool unsteady,
                                const JetSpace& space);

/// Embedding dispatch for a topology (identity unless periodic is set).
std::vector<Jet> embed_point(const Topology& topo, std::span<const double> point,
                             const JetSpace& space);

/// Forward pass of one sub-network on embedded input jets: affine layers with
/// tanh activations, final layer affine. Returns one jet per output.
std::vector<Jet> mlp_eval(const FlatParams& params, NetId net,
                          std::span<const Jet> inputs);

/// Plain scalar forward pass (no jets); used by evaluation paths that only
/// need values.
Eigen::VectorXd mlp_value(const FlatParams& params, NetId net,
                          const Eigen::VectorXd& embedded_input);

/// Velocity from a learned potential. d=2: one potential jet psi, u =
/// (d_y psi, -d_x psi). d=3: vector potential A, u = curl A. Input jets must
/// have order >= 3; outputs live one order lower. Throws ArgumentError for a
/// wrong potential count or insufficient order.
std::vector<Jet> divergence_free_wrap(std::span<const Jet> potential, int d);

/// Exact initial conditions: u_hat_k = g_k + ell * N_k (jet product). All
/// jets must share a space; ell is the time-multiplier jet ell(t) evaluated
/// at the point (ell(t) = t in this artifact).
std::vector<Jet> ic_wrap(std::span<const Jet> raw, const Jet& ell,
                         std::span<const Jet> g);

/// Value-level counterpart of divergence_free_wrap for evaluation paths that
/// only need velocity values: reads the curl components off potential jets of
/// any order >= 1. Returns d values.
std::vector<double> potential_velocity_values(std::span<const Jet> potential,
                                              int d);

/// Forward pass carrying a parameter-space tangent direction v alongside the
/// values: value[k] is the usual output jet, tangent[k] its directional
/// derivative sum_j v_j d(output_k)/d(param_j) as a jet (so spatial partials
/// of the tangent field come for free). Reference per-point implementation.
struct JetPair {
  std::vector<Jet> value;
  std::vector<Jet> tangent;
};
JetPair mlp_eval_tangent(const FlatParams& params, NetId net,
                         std::span<const Jet> inputs, const ParamTangent& v);

}  // namespace gnflow
