/// @file residual.hpp
/// @brief Navier-Stokes residual operators, stacked residual assembly with
///        1/sqrt(N) block scaling, and parameter-space JVP/VJP/Jacobian of
///        the discrete residual.
///
/// The discrete residual stacks blocks in the order
///   momentum (d rows per interior point, point-major),
///   divergence (1 row per interior point),
///   boundary (d rows per boundary point, point-major),
///   initial (d rows per initial point, point-major);
/// hard-constrained conditions contribute no block. Every entry carries its
/// block's 1/sqrt(point count) factor, so L = 1/2 ||r||^2 is the Monte-Carlo
/// estimate of the continuous least-squares energy.
///
/// ResidualAssembly holds the problem, collocation, and topology, and owns
/// the batched evaluation engine: network layers run as one dgemm per layer
/// over all points of a batch (jet coefficients as rows), activations and
/// their tangent multipliers act on contiguous per-point coefficient
/// segments, and parameter derivatives traverse the same tape forward
/// (JVP) or in reverse (VJP, Jacobian rows).

#pragma once

#include <Eigen/Dense>
#include <memory>

#include "gnflow/problem.hpp"

namespace gnflow {

// ---------------------------------------------------------------------------
// Residual layout
// ---------------------------------------------------------------------------

enum class BlockKind { momentum, divergence, boundary, initial };
std::string_view block_name(BlockKind kind);

struct Block {
  BlockKind kind;
  int offset = 0;          ///< first row in the stacked residual
  int rows = 0;            ///< rows_per_point * point_count
  int rows_per_point = 0;
  int point_count = 0;
  double scale = 0.0;      ///< 1/sqrt(point_count), baked into every entry
};

struct BlockLayout {
  std::vector<Block> blocks;
  int total = 0;
  const Block* find(BlockKind kind) const;
};

struct ResidualVector {
  BlockLayout layout;
  Eigen::VectorXd values;
};

/// L = 1/2 ||r||^2 with its per-block partial sums (inactive blocks stay 0).
struct LossBreakdown {
  double total = 0.0;
  double momentum = 0.0;
  double divergence = 0.0;
  double boundary = 0.0;
  double initial = 0.0;
};
LossBreakdown loss_breakdown(const ResidualVector& r);

// ---------------------------------------------------------------------------
// Pointwise residual operators (reference semantics on jets)
// ---------------------------------------------------------------------------

/// Momentum residual, d components:
///   [d u_k/dt] - nu Lap u_k + sum_j u_j d_j u_k + d_k p - f_k.
/// Velocity jets need order >= 2, the pressure jet order >= 1, all with the
/// same variable count (time last when unsteady). ArgumentError otherwise.
std::vector<double> momentum_residual(std::span<const Jet> u, const Jet& p,
                                      double nu, std::span<const double> f,
                                      bool unsteady);

/// Directional derivative of the momentum residual under velocity/pressure
/// tangents:
///   [d du_k/dt] - nu Lap du_k + (du . grad) u_k + (u . grad) du_k + d_k dp.
/// `du` may be empty (pure pressure direction) and `dp` may be null.
std::vector<double> momentum_residual_tangent(std::span<const Jet> u,
                                              std::span<const Jet> du,
                                              const Jet* dp, double nu,
                                              bool unsteady);

/// sum_k d_k u_k (order >= 1 required).
double divergence_residual(std::span<const Jet> u);

/// Componentwise u - g.
std::vector<double> boundary_residual(std::span<const double> u_value,
                                      std::span<const double> g_value);

/// Componentwise u0_pred - u0_true.
std::vector<double> initial_residual(std::span<const double> u0_pred,
                                     std::span<const double> u0_true);

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

using RowMatrixXd =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ResidualAssembly {
 public:
  /// Validates problem/topology/collocation consistency (dimensions match,
  /// constraint mode legal, every active block has points, potential output
  /// width fits the curl ansatz); throws ArgumentError/ConfigError.
  ResidualAssembly(FlowProblem problem, CollocationSet colloc,
                   Topology topology);
  ~ResidualAssembly();
  ResidualAssembly(ResidualAssembly&&) noexcept;
  ResidualAssembly& operator=(ResidualAssembly&&) noexcept;
  ResidualAssembly(const ResidualAssembly&) = delete;
  ResidualAssembly& operator=(const ResidualAssembly&) = delete;

  const FlowProblem& problem() const;
  const CollocationSet& collocation() const;
  const Topology& topology() const;
  const BlockLayout& layout() const;
  int residual_size() const;
  int parameter_count() const;

  /// Evaluation state at one parameter vector: network tapes, wrapped
  /// interior jets, the residual, and the per-point residual Jacobians with
  /// respect to the network output coefficients. `need_tape = false` skips
  /// everything the plain residual does not need (the line-search path).
  struct Forward;
  struct ForwardDeleter {
    void operator()(Forward* f) const;
  };
  using ForwardPtr = std::unique_ptr<Forward, ForwardDeleter>;
  ForwardPtr forward(const FlatParams& params, bool need_tape = true) const;

  const ResidualVector& residual(const Forward& fwd) const;

  /// J v by forward tangent propagation through the tape (never forms J).
  Eigen::VectorXd jvp(const Forward& fwd, const Eigen::VectorXd& v) const;

  /// J^T w by one reverse sweep through the tape (never forms J).
  Eigen::VectorXd vjp(const Forward& fwd, const Eigen::VectorXd& w) const;

  /// Full R x P Jacobian, block-row order as in the residual. Throws
  /// CapacityError when R*P exceeds the memory budget.
  RowMatrixXd jacobian(const Forward& fwd) const;

  /// Values and spatial gradients of the parameter tangents of the wrapped
  /// interior velocity: row ((pt*d + k)*(1+d) + j) holds, for j = 0 the
  /// value and for j >= 1 the d_{x_j} derivative, of d u_k / d param at
  /// interior point pt. Used by the ENGD Gramian extension. Budget-checked.
  RowMatrixXd interior_velocity_jacobian(const Forward& fwd) const;

  /// Wrapped velocity jets (d per interior point, order 2).
  std::span<const Jet> interior_velocity(const Forward& fwd) const;

  // One-shot convenience entry points.
  ResidualVector assemble(const FlatParams& params) const;
  LossBreakdown loss(const FlatParams& params) const;
  Eigen::VectorXd param_jvp(const FlatParams& params,
                            const Eigen::VectorXd& v) const;
  Eigen::VectorXd param_vjp(const FlatParams& params,
                            const Eigen::VectorXd& w) const;
  Eigen::MatrixXd dense_jacobian(const FlatParams& params) const;

  /// Memory budget for materialized Jacobians (default 8 GiB).
  void set_jacobian_budget_bytes(std::size_t bytes);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace gnflow
