/// @file collocation.cpp
/// @brief Deterministic collocation sampling for the benchmark problems.

#include <cmath>

#include "gnflow/errors.hpp"
#include "gnflow/problem.hpp"
#include "gnflow/rng.hpp"

namespace gnflow {

namespace {

std::vector<double> linspace(double lo, double hi, int n, bool inclusive) {
  std::vector<double> v(n);
  if (n == 1) {
    v[0] = lo;
    return v;
  }
  const double step = (hi - lo) / (inclusive ? n - 1 : n);
  for (int i = 0; i < n; ++i) v[i] = lo + step * i;
  return v;
}

int exact_root(int count, int dim) {
  const int n = static_cast<int>(std::llround(std::pow(double(count), 1.0 / dim)));
  for (int c : {n - 1, n, n + 1})
    if (c > 0 && static_cast<int>(std::llround(std::pow(double(c), dim))) == count)
      return c;
  throw ArgumentError("collocation: count " + std::to_string(count) +
                      " is not a " + std::to_string(dim) + "-dimensional grid");
}

void push_point(PointSet& set, std::span<const double> spatial, double t,
                bool unsteady) {
  set.push(spatial);
  if (unsteady) set.coords.push_back(t);
}

/// Interior points: equidistant inclusive grid over the spatial axes (steady)
/// or uniform random over space-time (unsteady default).
PointSet sample_interior(const FlowProblem& P, const CollocationSpec& spec,
                         Rng& rng) {
  PointSet set;
  set.stride = P.input_dim();
  if (spec.interior_strategy == CollocationSpec::Strategy::equidistant_grid) {
    std::vector<int> grid = spec.interior_grid;
    if (grid.empty())
      grid.assign(P.dim, exact_root(spec.interior_count, P.dim));
    if (static_cast<int>(grid.size()) != P.dim)
      throw ArgumentError("collocation: interior grid needs one count per "
                          "spatial axis");
    if (P.unsteady)
      throw ArgumentError("collocation: grid interior sampling is only "
                          "supported for steady problems");
    std::vector<std::vector<double>> axes(P.dim);
    for (int a = 0; a < P.dim; ++a)
      axes[a] = linspace(P.bounds[a][0], P.bounds[a][1], grid[a], true);
    if (P.dim == 2) {
      for (double x : axes[0])
        for (double y : axes[1]) {
          const std::array<double, 2> pt{x, y};
          push_point(set, pt, 0.0, false);
        }
    } else {
      for (double x : axes[0])
        for (double y : axes[1])
          for (double z : axes[2]) {
            const std::array<double, 3> pt{x, y, z};
            push_point(set, pt, 0.0, false);
          }
    }
  } else {
    if (spec.interior_count <= 0)
      throw ArgumentError("collocation: interior count must be positive");
    for (int i = 0; i < spec.interior_count; ++i) {
      std::array<double, 3> pt{};
      for (int a = 0; a < P.dim; ++a)
        pt[a] = rng.uniform(P.bounds[a][0], P.bounds[a][1]);
      push_point(set, std::span<const double>(pt.data(), std::size_t(P.dim)),
                 rng.uniform(P.time_interval[0], P.time_interval[1]),
                 P.unsteady);
    }
  }
  return set;
}

/// Boundary points. 2D: equidistant points per edge, each edge half-open so
/// every corner appears exactly once. 3D: an inclusive n x n grid on each of
/// the six faces. Unsteady problems attach a uniform-random time to each
/// point.
PointSet sample_boundary(const FlowProblem& P, int count, Rng& rng) {
  PointSet set;
  set.stride = P.input_dim();
  if (count == 0) return set;
  auto draw_time = [&]() {
    return P.unsteady ? rng.uniform(P.time_interval[0], P.time_interval[1])
                      : 0.0;
  };
  if (P.dim == 2) {
    if (count % 4 != 0)
      throw ArgumentError("collocation: 2D boundary count must be a "
                          "multiple of 4 (one quarter per edge)");
    const int per_edge = count / 4;
    const double x0 = P.bounds[0][0], x1 = P.bounds[0][1];
    const double y0 = P.bounds[1][0], y1 = P.bounds[1][1];
    const auto ts = linspace(0.0, 1.0, per_edge, false);
    // Counterclockwise: bottom, right, top, left; half-open edges.
    for (double s : ts) push_point(set, std::array<double, 2>{x0 + s * (x1 - x0), y0}, draw_time(), P.unsteady);
    for (double s : ts) push_point(set, std::array<double, 2>{x1, y0 + s * (y1 - y0)}, draw_time(), P.unsteady);
    for (double s : ts) push_point(set, std::array<double, 2>{x1 - s * (x1 - x0), y1}, draw_time(), P.unsteady);
    for (double s : ts) push_point(set, std::array<double, 2>{x0, y1 - s * (y1 - y0)}, draw_time(), P.unsteady);
  } else {
    if (count % 6 != 0)
      throw ArgumentError("collocation: 3D boundary count must split evenly "
                          "over 6 faces");
    const int n = exact_root(count / 6, 2);
    for (int axis = 0; axis < 3; ++axis) {
      const int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
      for (int side = 0; side < 2; ++side) {
        const auto u = linspace(P.bounds[a1][0], P.bounds[a1][1], n, true);
        const auto v = linspace(P.bounds[a2][0], P.bounds[a2][1], n, true);
        for (double uu : u)
          for (double vv : v) {
            std::array<double, 3> pt{};
            pt[axis] = P.bounds[axis][side];
            pt[a1] = uu;
            pt[a2] = vv;
            push_point(set, pt, draw_time(), P.unsteady);
          }
      }
    }
  }
  return set;
}

/// Initial points: uniform random spatial points at the interval start.
PointSet sample_initial(const FlowProblem& P, int count, Rng& rng) {
  PointSet set;
  set.stride = P.input_dim();
  for (int i = 0; i < count; ++i) {
    std::array<double, 3> pt{};
    for (int a = 0; a < P.dim; ++a)
      pt[a] = rng.uniform(P.bounds[a][0], P.bounds[a][1]);
    push_point(set, std::span<const double>(pt.data(), std::size_t(P.dim)),
               P.time_interval[0], P.unsteady);
  }
  return set;
}

/// Validation points: an inclusive spatial grid, pinned at the final time for
/// unsteady problems.
PointSet sample_validation(const FlowProblem& P, std::vector<int> grid,
                           int interior_count) {
  PointSet set;
  set.stride = P.input_dim();
  long long total = 1;
  for (int g : grid) total *= g;
  if (static_cast<int>(grid.size()) != P.dim || total < 10LL * interior_count)
    throw ArgumentError("collocation: validation grid must cover at least ten "
                        "times the interior count");
  std::vector<std::vector<double>> axes(P.dim);
  for (int a = 0; a < P.dim; ++a)
    axes[a] = linspace(P.bounds[a][0], P.bounds[a][1], grid[a], true);
  const double T = P.time_interval[1];
  if (P.dim == 2) {
    for (double x : axes[0])
      for (double y : axes[1])
        push_point(set, std::array<double, 2>{x, y}, T, P.unsteady);
  } else {
    for (double x : axes[0])
      for (double y : axes[1])
        for (double z : axes[2])
          push_point(set, std::array<double, 3>{x, y, z}, T, P.unsteady);
  }
  return set;
}

}  // namespace

CollocationSpec default_collocation(const FlowProblem& problem) {
  CollocationSpec spec;
  if (problem.name == "kovasznay") {
    spec.interior_strategy = CollocationSpec::Strategy::equidistant_grid;
    spec.interior_grid = {51, 51};
    spec.boundary_count = 400;
  } else if (problem.name == "beltrami") {
    spec.interior_strategy = CollocationSpec::Strategy::uniform_random;
    spec.interior_count = 10000;
    spec.boundary_count = 31 * 31 * 6;
    spec.initial_count = 961;
  } else if (problem.name == "taylor_green") {
    spec.interior_strategy = CollocationSpec::Strategy::uniform_random;
    spec.interior_count = 8000;
    spec.boundary_count = 0;  // periodicity is built into the ansatz
    spec.initial_count = 961;
  } else {
    throw ConfigError("no default collocation for problem '" + problem.name +
                      "'");
  }
  return spec;
}

CollocationSet sample_collocation(const FlowProblem& problem,
                                  const CollocationSpec& spec,
                                  std::uint64_t seed) {
  // Independent sub-streams so changing one set's count leaves the others'
  // draws untouched.
  std::uint64_t state = seed;
  Rng rng_interior(splitmix64(state));
  Rng rng_boundary(splitmix64(state));
  Rng rng_initial(splitmix64(state));

  CollocationSet out;
  out.interior = sample_interior(problem, spec, rng_interior);

  const bool wants_boundary =
      problem.constraints.boundary_soft && spec.boundary_count > 0;
  out.boundary =
      sample_boundary(problem, wants_boundary ? spec.boundary_count : 0,
                      rng_boundary);

  const bool wants_initial = problem.unsteady &&
                             !problem.constraints.exact_initial &&
                             spec.initial_count > 0;
  out.initial =
      sample_initial(problem, wants_initial ? spec.initial_count : 0,
                     rng_initial);

  const int interior_count = out.interior.count();
  std::vector<int> vgrid;
  if (spec.validation_count > 0) {
    vgrid.assign(problem.dim, exact_root(spec.validation_count, problem.dim));
  } else if (problem.name == "kovasznay") {
    vgrid = {153, 170};  // 26010 points, aspect-matched to the 1.5 x 2 domain
  } else {
    const int per_axis = static_cast<int>(
        std::ceil(std::pow(10.0 * interior_count, 1.0 / problem.dim)));
    vgrid.assign(problem.dim, per_axis);
  }
  out.validation = sample_validation(problem, vgrid, interior_count);
  return out;
}

}  // namespace gnflow
