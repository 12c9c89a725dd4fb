/// @file problem.hpp
/// @brief Benchmark problem description and collocation point sets.

#pragma once

#include <array>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "gnflow/jet.hpp"
#include "gnflow/network.hpp"

namespace gnflow {

/// A flat list of points; each point has `stride` coordinates (spatial dims
/// first, time last for unsteady problems), stored row-major.
struct PointSet {
  int stride = 0;
  std::vector<double> coords;

  int count() const {
    return stride > 0 ? static_cast<int>(coords.size()) / stride : 0;
  }
  std::span<const double> point(int i) const {
    return {coords.data() + static_cast<std::size_t>(i) * stride,
            static_cast<std::size_t>(stride)};
  }
  void push(std::span<const double> c) {
    coords.insert(coords.end(), c.begin(), c.end());
  }
};

/// Training and validation point sets. `initial` points carry a trailing
/// time coordinate fixed at the interval start so every set shares the
/// problem's input stride. Inactive sets are empty.
struct CollocationSet {
  PointSet interior;
  PointSet boundary;
  PointSet initial;
  PointSet validation;
};

/// One incompressible Navier-Stokes benchmark: domain, viscosity, data, the
/// closed-form solution (value and jet form), and the constraint mode its
/// ansatz uses. Coordinate spans always have length dim (+1 when unsteady).
struct FlowProblem {
  std::string name;
  int dim = 2;
  bool unsteady = false;
  double viscosity = 1.0;
  std::array<std::array<double, 2>, 3> bounds{};  // per spatial axis
  std::array<double, 2> time_interval{0.0, 0.0};
  ConstraintMode constraints;

  /// Fills d velocity components followed by pressure.
  std::function<void(std::span<const double>, std::span<double>)> solution;
  /// Same fields as jets of order K in the problem's input space.
  std::function<std::vector<Jet>(std::span<const double>, int)> solution_jets;
  /// Momentum forcing, d components (identically zero for all benchmarks).
  std::function<void(std::span<const double>, std::span<double>)> forcing;
  /// Dirichlet boundary velocity g, d components.
  std::function<void(std::span<const double>, std::span<double>)> boundary_data;
  /// Initial velocity u0, d components (input includes the trailing t=t0).
  std::function<void(std::span<const double>, std::span<double>)> initial_data;

  int input_dim() const { return dim + (unsteady ? 1 : 0); }
  int fields() const { return dim + 1; }
};

/// Collocation counts and strategy. Grid counts are per-axis; random counts
/// are totals. A zero validation count auto-sizes to at least ten times the
/// interior count.
struct CollocationSpec {
  enum class Strategy { equidistant_grid, uniform_random };
  Strategy interior_strategy = Strategy::equidistant_grid;
  std::vector<int> interior_grid;  // per-axis counts (grid strategy)
  int interior_count = 0;          // total (random strategy)
  int boundary_count = 0;          // total over all edges/faces
  int initial_count = 0;           // total (unsteady soft-initial only)
  int validation_count = 0;        // 0 = auto (>= 10x interior)
};

/// Problem-specific default collocation spec (grid shapes and counts of the
/// reference experiments).
CollocationSpec default_collocation(const FlowProblem& problem);

/// Samples all point sets. Deterministic for a fixed seed; throws
/// ArgumentError for counts incompatible with the strategy or domain.
CollocationSet sample_collocation(const FlowProblem& problem,
                                  const CollocationSpec& spec,
                                  std::uint64_t seed);

}  // namespace gnflow
