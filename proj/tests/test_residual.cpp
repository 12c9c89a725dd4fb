/// @file test_residual.cpp
/// @brief Tests for the pointwise residual operators, the stacked residual
///        assembly, and the parameter-space JVP/VJP/Jacobian.
///
/// Derivative oracles: the batched engine is checked against the per-point
/// reference evaluators (mlp_eval / mlp_eval_tangent on explicit jets),
/// against central finite differences of the assembled residual, and against
/// hand-computed entries for linear-in-parameter networks. The momentum
/// operator is quadratic in the velocity, so central differences in a fixed
/// direction reproduce its tangent exactly up to roundoff.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gnflow/errors.hpp"
#include "gnflow/flows.hpp"
#include "gnflow/residual.hpp"
#include "gnflow/rng.hpp"

using namespace gnflow;

namespace {

Topology topology_for(const FlowProblem& P, std::vector<int> hidden) {
  Topology t;
  t.dim = P.dim;
  t.unsteady = P.unsteady;
  t.hidden_velocity = hidden;
  t.hidden_pressure = hidden;
  t.velocity_output =
      P.constraints.divergence_free ? (P.dim == 2 ? 1 : 3) : P.dim;
  t.embedding.periodic = P.constraints.periodic;
  t.embedding.periods = P.constraints.periods;
  return t;
}

/// Small assembly for one of the named benchmarks.
struct Rig {
  FlowProblem prob;
  Topology topo;
  FlatParams params;
  ResidualAssembly assembly;
};

Rig make_rig(const std::string& name, bool hard, std::vector<int> hidden,
             std::uint64_t seed) {
  FlowProblem prob = make_problem(name, hard);
  CollocationSpec spec;
  if (name == "kovasznay") {
    spec.interior_strategy = CollocationSpec::Strategy::equidistant_grid;
    spec.interior_grid = {5, 5};
    spec.boundary_count = 40;
  } else if (name == "taylor_green") {
    spec.interior_strategy = CollocationSpec::Strategy::uniform_random;
    spec.interior_count = 40;
    spec.initial_count = hard ? 0 : 12;
  } else {  // beltrami
    spec.interior_strategy = CollocationSpec::Strategy::uniform_random;
    spec.interior_count = 30;
    spec.boundary_count = 24;
    spec.initial_count = 10;
  }
  CollocationSet pts = sample_collocation(prob, spec, seed);
  Topology topo = topology_for(prob, std::move(hidden));
  FlatParams params = glorot_init(topo, seed + 1);
  ResidualAssembly assembly(prob, std::move(pts), topo);
  return Rig{std::move(prob), std::move(topo), std::move(params),
             std::move(assembly)};
}

/// Reference per-point interior residual through the single-point jet
/// evaluators (independent of the batched engine).
std::vector<double> ref_interior_residual(const Rig& rig,
                                          std::span<const double> pt) {
  const FlowProblem& P = rig.prob;
  const int d = P.dim;
  const int m = P.input_dim();
  const bool divfree = P.constraints.divergence_free;

  const JetSpace& sv = jet_space(m, divfree ? 3 : 2);
  std::vector<Jet> raw =
      mlp_eval(rig.params, NetId::velocity, embed_point(rig.topo, pt, sv));
  std::vector<Jet> u = divfree ? divergence_free_wrap(raw, d) : raw;
  if (P.constraints.exact_initial) {
    const JetSpace& sw = jet_space(m, 2);
    std::vector<double> q(pt.begin(), pt.end());
    q[m - 1] = P.time_interval[0];
    std::vector<Jet> js = P.solution_jets(q, 2);
    std::vector<Jet> g(js.begin(), js.begin() + d);
    for (Jet& gj : g)
      for (int c = 0; c < sw.ncoef; ++c)
        if (sw.alpha[c][m - 1] != 0) gj.c[c] = 0.0;
    Jet ell = jet_seed_in(sw, pt, m - 1);
    ell.c[0] -= P.time_interval[0];
    u = ic_wrap(u, ell, g);
  }
  const JetSpace& sp = jet_space(m, 1);
  const std::vector<Jet> pj =
      mlp_eval(rig.params, NetId::pressure, embed_point(rig.topo, pt, sp));

  std::vector<double> f(d, 0.0);
  if (P.forcing) P.forcing(pt, f);
  std::vector<double> out =
      momentum_residual(u, pj[0], P.viscosity, f, P.unsteady);
  if (!divfree) out.push_back(divergence_residual(u));
  return out;
}

/// Reference boundary/initial velocity values at one point.
std::vector<double> ref_surface_velocity(const Rig& rig,
                                         std::span<const double> pt) {
  const FlowProblem& P = rig.prob;
  const int d = P.dim;
  const int m = P.input_dim();
  const bool divfree = P.constraints.divergence_free;
  const JetSpace& sb = jet_space(m, divfree ? 1 : 0);
  std::vector<Jet> raw =
      mlp_eval(rig.params, NetId::velocity, embed_point(rig.topo, pt, sb));
  std::vector<double> v(d);
  if (divfree) {
    v = potential_velocity_values(raw, d);
  } else {
    for (int k = 0; k < d; ++k) v[k] = raw[k].value();
  }
  if (P.constraints.exact_initial) {
    std::vector<double> q(pt.begin(), pt.end());
    q[m - 1] = P.time_interval[0];
    std::vector<double> g0(d);
    P.initial_data(q, g0);
    for (int k = 0; k < d; ++k)
      v[k] = g0[k] + (pt[m - 1] - P.time_interval[0]) * v[k];
  }
  return v;
}

Jet const_jet(double v, const JetSpace& s) { return jet_constant(v, s); }

}  // namespace

// ===========================================================================
// Pointwise operators
// ===========================================================================

TEST_CASE("momentum residual on hand-built fields") {
  const JetSpace& s = jet_space(2, 2);
  const double xy[2] = {0.7, -0.4};
  const Jet x = jet_seed_in(s, xy, 0);
  const Jet y = jet_seed_in(s, xy, 1);

  // u = (y, 0), p = 0, steady, nu arbitrary: shear flow with zero Laplacian,
  // (u . grad) u = (y d_x)(y, 0) = (0, 0).
  std::vector<Jet> u = {y, const_jet(0.0, s)};
  const Jet p0 = jet_constant(0.0, jet_space(2, 1));
  auto r = momentum_residual(u, p0, 0.025, {}, false);
  CHECK(r[0] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(r[1] == doctest::Approx(0.0).epsilon(1e-15));

  // Same velocity with p = x: the pressure gradient (1, 0) survives.
  const Jet px = jet_seed_in(jet_space(2, 1), xy, 0);
  r = momentum_residual(u, px, 0.025, {}, false);
  CHECK(r[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r[1] == doctest::Approx(0.0).epsilon(1e-15));

  // Forcing subtracts componentwise.
  const double f[2] = {0.25, -3.0};
  r = momentum_residual(u, px, 0.025, f, false);
  CHECK(r[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(r[1] == doctest::Approx(3.0).epsilon(1e-15));

  // u = (x^2, 0), p = 0, nu = 1: -nu Lap u = (-2, 0); convection
  // (x^2 d_x)(x^2, 0) = (2 x^3, 0).
  std::vector<Jet> u2 = {jet_mul(x, x), const_jet(0.0, s)};
  r = momentum_residual(u2, p0, 1.0, {}, false);
  CHECK(r[0] == doctest::Approx(-2.0 + 2.0 * 0.7 * 0.7 * 0.7).epsilon(1e-14));
  CHECK(r[1] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("unsteady momentum picks up the time derivative") {
  const JetSpace& s = jet_space(3, 2);  // (x, y, t)
  const double q[3] = {0.3, 0.8, 0.6};
  const Jet t = jet_seed_in(s, q, 2);
  // u = (t, 0): d u / dt = (1, 0), everything else vanishes with p = 0.
  std::vector<Jet> u = {t, const_jet(0.0, s)};
  const Jet p0 = jet_constant(0.0, jet_space(3, 1));
  auto r = momentum_residual(u, p0, 1.0, {}, true);
  CHECK(r[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(r[1] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("divergence residual examples") {
  const JetSpace& s = jet_space(2, 2);
  const double xy[2] = {1.3, 0.2};
  const Jet x = jet_seed_in(s, xy, 0);
  const Jet y = jet_seed_in(s, xy, 1);
  // u = (x, -y) is solenoidal; u = (x, y) has divergence 2.
  std::vector<Jet> sol = {x, jet_neg(y)};
  std::vector<Jet> src = {x, y};
  CHECK(divergence_residual(sol) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(divergence_residual(src) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("boundary and initial residuals subtract data") {
  const double u[2] = {1.5, -2.0};
  const double g[2] = {1.0, -2.5};
  auto rb = boundary_residual(u, g);
  CHECK(rb[0] == doctest::Approx(0.5));
  CHECK(rb[1] == doctest::Approx(0.5));
  auto ri = initial_residual(u, g);
  CHECK(ri[0] == doctest::Approx(0.5));
  CHECK(ri[1] == doctest::Approx(0.5));
  const double bad[3] = {0, 0, 0};
  CHECK_THROWS_AS(boundary_residual(u, bad), ArgumentError);
  CHECK_THROWS_AS(initial_residual(bad, u), ArgumentError);
}

TEST_CASE("pointwise operators reject insufficient jet order") {
  const JetSpace& s1 = jet_space(2, 1);
  const double xy[2] = {0.0, 0.0};
  std::vector<Jet> u1 = {jet_seed_in(s1, xy, 0), jet_seed_in(s1, xy, 1)};
  const Jet p = jet_constant(0.0, jet_space(2, 1));
  CHECK_THROWS_AS(momentum_residual(u1, p, 1.0, {}, false), ArgumentError);
  const Jet p0 = jet_constant(0.0, jet_space(2, 0));
  const JetSpace& s2 = jet_space(2, 2);
  std::vector<Jet> u2 = {jet_constant(0.0, s2), jet_constant(0.0, s2)};
  CHECK_THROWS_AS(momentum_residual(u2, p0, 1.0, {}, false), ArgumentError);
  std::vector<Jet> u0 = {jet_constant(0.0, jet_space(2, 0)),
                         jet_constant(0.0, jet_space(2, 0))};
  CHECK_THROWS_AS(divergence_residual(u0), ArgumentError);
  // Variable-count mismatch: 3 variables for a 2-component steady field is
  // fine only when the extra variable is time; 4 variables is not.
  std::vector<Jet> u4 = {jet_constant(0.0, jet_space(4, 2)),
                         jet_constant(0.0, jet_space(4, 2))};
  CHECK_THROWS_AS(divergence_residual(u4), ArgumentError);
}

TEST_CASE("closed-form flows annihilate the residual operators") {
  // Momentum and divergence at the exact solutions vanish to roundoff;
  // evaluated at many random interior points of each benchmark.
  for (const std::string name : {"kovasznay", "beltrami", "taylor_green"}) {
    const FlowProblem P = make_problem(name, false);
    Rng rng(7 + name.size());
    const int m = P.input_dim();
    std::vector<double> q(m);
    double worst = 0.0;
    for (int it = 0; it < 300; ++it) {
      for (int a = 0; a < P.dim; ++a)
        q[a] = rng.uniform(P.bounds[a][0], P.bounds[a][1]);
      if (P.unsteady)
        q[m - 1] = rng.uniform(P.time_interval[0], P.time_interval[1]);
      const std::vector<Jet> js = P.solution_jets(q, 2);
      const std::span<const Jet> u{js.data(), static_cast<std::size_t>(P.dim)};
      const std::vector<double> mom =
          momentum_residual(u, js[P.dim], P.viscosity, {}, P.unsteady);
      for (double v : mom) worst = std::max(worst, std::abs(v));
      worst = std::max(worst, std::abs(divergence_residual(u)));
    }
    INFO(name);
    CHECK(worst <= 1e-10);
  }
}

TEST_CASE("momentum tangent equals the directional difference quotient") {
  // The operator is quadratic in (u, p), so a central difference in a fixed
  // direction is exact: r(u + h du) - r(u - h du) = 2 h T(du) identically.
  const JetSpace& s = jet_space(3, 2);
  const JetSpace& sp = jet_space(3, 1);
  Rng rng(99);
  const int d = 2;
  auto random_jet = [&](const JetSpace& sj) {
    Jet j;
    j.space = &sj;
    j.c.fill(0.0);
    for (int c = 0; c < sj.ncoef; ++c) j.c[c] = rng.uniform(-1.0, 1.0);
    return j;
  };
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<Jet> u = {random_jet(s), random_jet(s)};
    std::vector<Jet> du = {random_jet(s), random_jet(s)};
    Jet dp = random_jet(sp);
    const double h = 0.5;
    std::vector<Jet> up(d), um(d);
    for (int k = 0; k < d; ++k) {
      up[k] = jet_add(u[k], jet_scale(du[k], h));
      um[k] = jet_add(u[k], jet_scale(du[k], -h));
    }
    const Jet pz = jet_constant(0.0, sp);
    const Jet pp = jet_scale(dp, h), pm = jet_scale(dp, -h);
    const auto rp = momentum_residual(up, pp, 0.05, {}, true);
    const auto rm = momentum_residual(um, pm, 0.05, {}, true);
    const auto tan = momentum_residual_tangent(u, du, &dp, 0.05, true);
    for (int k = 0; k < d; ++k)
      CHECK(std::abs((rp[k] - rm[k]) / (2.0 * h) - tan[k]) <= 1e-12);
    // Pure pressure direction.
    const auto tp = momentum_residual_tangent(u, {}, &dp, 0.05, true);
    const auto r0p = momentum_residual(u, pp, 0.05, {}, true);
    const auto r0m = momentum_residual(u, pm, 0.05, {}, true);
    for (int k = 0; k < d; ++k)
      CHECK(std::abs((r0p[k] - r0m[k]) / (2.0 * h) - tp[k]) <= 1e-12);
    (void)pz;
  }
}

// ===========================================================================
// Layout and loss
// ===========================================================================

TEST_CASE("stacked layout of the steady soft-constrained benchmark") {
  const FlowProblem P = make_problem("kovasznay", false);
  CollocationSet pts = sample_collocation(P, default_collocation(P), 3);
  ResidualAssembly A(P, std::move(pts), topology_for(P, {50, 50, 50, 50}));

  // 2601 interior points and 400 boundary points stack to
  // 2 * 2601 + 2601 + 2 * 400 = 8603 residual entries.
  CHECK(A.residual_size() == 8603);
  const BlockLayout& L = A.layout();
  REQUIRE(L.blocks.size() == 3);
  const Block* mb = L.find(BlockKind::momentum);
  const Block* db = L.find(BlockKind::divergence);
  const Block* bb = L.find(BlockKind::boundary);
  REQUIRE(mb != nullptr);
  REQUIRE(db != nullptr);
  REQUIRE(bb != nullptr);
  CHECK(L.find(BlockKind::initial) == nullptr);
  CHECK(mb->offset == 0);
  CHECK(mb->rows == 5202);
  CHECK(mb->rows_per_point == 2);
  CHECK(mb->scale == doctest::Approx(1.0 / std::sqrt(2601.0)).epsilon(1e-15));
  CHECK(db->offset == 5202);
  CHECK(db->rows == 2601);
  CHECK(bb->offset == 7803);
  CHECK(bb->rows == 800);
  CHECK(bb->scale == doctest::Approx(1.0 / std::sqrt(400.0)).epsilon(1e-15));
  CHECK(L.total == 8603);
}

TEST_CASE("hard constraints drop their blocks") {
  const FlowProblem P = make_problem("taylor_green", true);
  CollocationSpec spec;
  spec.interior_strategy = CollocationSpec::Strategy::uniform_random;
  spec.interior_count = 64;
  CollocationSet pts = sample_collocation(P, spec, 5);
  ResidualAssembly A(P, std::move(pts), topology_for(P, {8, 8}));
  // Divergence-free curl ansatz + exact initial + periodic embedding leave
  // only the momentum block.
  CHECK(A.layout().blocks.size() == 1);
  CHECK(A.residual_size() == 2 * 64);
  CHECK(A.layout().find(BlockKind::momentum)->scale ==
        doctest::Approx(1.0 / 8.0).epsilon(1e-15));
}

TEST_CASE("loss is half the squared norm, split by block") {
  // Single-entry residual r = 3 gives L = 4.5.
  BlockLayout lay;
  lay.blocks.push_back(Block{BlockKind::momentum, 0, 1, 1, 1, 1.0});
  lay.total = 1;
  ResidualVector r{lay, Eigen::VectorXd::Constant(1, 3.0)};
  const LossBreakdown lb = loss_breakdown(r);
  CHECK(lb.total == doctest::Approx(4.5).epsilon(1e-15));
  CHECK(lb.momentum == doctest::Approx(4.5).epsilon(1e-15));
  CHECK(lb.divergence == 0.0);
  CHECK(lb.boundary == 0.0);
  CHECK(lb.initial == 0.0);

  // On a real assembly the parts sum to the total and match the norm.
  Rig rig = make_rig("kovasznay", false, {6, 6}, 11);
  const ResidualVector rv = rig.assembly.assemble(rig.params);
  const LossBreakdown full = loss_breakdown(rv);
  CHECK(full.total ==
        doctest::Approx(0.5 * rv.values.squaredNorm()).epsilon(1e-14));
  CHECK(full.total == doctest::Approx(full.momentum + full.divergence +
                                      full.boundary + full.initial)
                          .epsilon(1e-14));
  CHECK(full.total == doctest::Approx(rig.assembly.loss(rig.params).total)
                          .epsilon(1e-14));

  ResidualVector broken = rv;
  broken.values.conservativeResize(5);
  CHECK_THROWS_AS(loss_breakdown(broken), ArgumentError);
}

// ===========================================================================
// Assembly against the per-point reference evaluators
// ===========================================================================

TEST_CASE("batched residual matches the per-point jet pipeline") {
  for (const auto& [name, hard] :
       std::vector<std::pair<std::string, bool>>{{"kovasznay", false},
                                                 {"taylor_green", true},
                                                 {"taylor_green", false},
                                                 {"beltrami", false}}) {
    CAPTURE(name);
    CAPTURE(hard);
    Rig rig = make_rig(name, hard, {7, 5}, 21);
    const ResidualVector r = rig.assembly.assemble(rig.params);
    const BlockLayout& L = r.layout;
    const Block* mb = L.find(BlockKind::momentum);
    const Block* db = L.find(BlockKind::divergence);
    const CollocationSet& pts = rig.assembly.collocation();
    const int d = rig.prob.dim;

    double worst = 0.0;
    for (int pt = 0; pt < pts.interior.count(); ++pt) {
      const std::vector<double> ref =
          ref_interior_residual(rig, pts.interior.point(pt));
      for (int k = 0; k < d; ++k)
        worst = std::max(worst, std::abs(r.values[mb->offset + pt * d + k] -
                                         mb->scale * ref[k]));
      if (db != nullptr)
        worst = std::max(worst, std::abs(r.values[db->offset + pt] -
                                         db->scale * ref[d]));
    }
    if (const Block* bb = L.find(BlockKind::boundary)) {
      for (int pt = 0; pt < pts.boundary.count(); ++pt) {
        const auto bpt = pts.boundary.point(pt);
        const std::vector<double> uv = ref_surface_velocity(rig, bpt);
        std::vector<double> g(d);
        rig.prob.boundary_data(bpt, g);
        for (int k = 0; k < d; ++k)
          worst = std::max(worst, std::abs(r.values[bb->offset + pt * d + k] -
                                           bb->scale * (uv[k] - g[k])));
      }
    }
    if (const Block* ib = L.find(BlockKind::initial)) {
      for (int pt = 0; pt < pts.initial.count(); ++pt) {
        const auto ipt = pts.initial.point(pt);
        const std::vector<double> uv = ref_surface_velocity(rig, ipt);
        std::vector<double> u0(d);
        rig.prob.initial_data(ipt, u0);
        for (int k = 0; k < d; ++k)
          worst = std::max(worst, std::abs(r.values[ib->offset + pt * d + k] -
                                           ib->scale * (uv[k] - u0[k])));
      }
    }
    CHECK(worst <= 1e-12);
  }
}

TEST_CASE("assembled residual at the exact solution parameters is small") {
  // There is no parameter vector realizing the exact solution, but the
  // residual of the zero network on the hard-constrained ansatz reduces to
  // the momentum residual of the pure initial trace g at every point; check
  // it stays finite and assembly-stable instead, and check determinism.
  Rig a = make_rig("taylor_green", true, {6, 6}, 31);
  Rig b = make_rig("taylor_green", true, {6, 6}, 31);
  const ResidualVector ra = a.assembly.assemble(a.params);
  const ResidualVector rb = b.assembly.assemble(b.params);
  REQUIRE(ra.values.size() == rb.values.size());
  for (int i = 0; i < ra.values.size(); ++i) CHECK(ra.values[i] == rb.values[i]);
}

TEST_CASE("interior velocity jets expose the wrapped ansatz") {
  Rig rig = make_rig("taylor_green", true, {6, 6}, 41);
  auto fwd = rig.assembly.forward(rig.params, true);
  const std::span<const Jet> u = rig.assembly.interior_velocity(*fwd);
  const CollocationSet& pts = rig.assembly.collocation();
  REQUIRE(static_cast<int>(u.size()) == 2 * pts.interior.count());
  // Divergence of the wrapped field vanishes identically.
  double worst = 0.0;
  for (int pt = 0; pt < pts.interior.count(); ++pt) {
    const std::span<const Jet> upt{u.data() + 2 * pt, 2};
    worst = std::max(worst, std::abs(divergence_residual(upt)));
  }
  CHECK(worst <= 1e-12);
}

// ===========================================================================
// Parameter derivatives
// ===========================================================================

TEST_CASE("parameter JVP matches central finite differences") {
  for (const auto& [name, hard] :
       std::vector<std::pair<std::string, bool>>{{"kovasznay", false},
                                                 {"taylor_green", true},
                                                 {"beltrami", false}}) {
    CAPTURE(name);
    CAPTURE(hard);
    Rig rig = make_rig(name, hard, {6, 6}, 51);
    Rng rng(17);
    Eigen::VectorXd v(rig.params.values.size());
    for (int i = 0; i < v.size(); ++i) v[i] = rng.uniform(-1.0, 1.0);

    const Eigen::VectorXd jv = rig.assembly.param_jvp(rig.params, v);

    const double h = 1e-6;
    FlatParams pp = rig.params, pm = rig.params;
    pp.values += h * v;
    pm.values -= h * v;
    const Eigen::VectorXd fd = (rig.assembly.assemble(pp).values -
                                rig.assembly.assemble(pm).values) /
                               (2.0 * h);
    const double scale = std::max(1.0, jv.norm());
    CHECK((jv - fd).norm() / scale <= 1e-6);

    // The zero direction maps to the zero tangent.
    CHECK(rig.assembly.param_jvp(rig.params, Eigen::VectorXd::Zero(v.size()))
              .norm() == 0.0);
  }
}

TEST_CASE("JVP and VJP satisfy the adjoint identity") {
  for (const auto& [name, hard] :
       std::vector<std::pair<std::string, bool>>{{"kovasznay", false},
                                                 {"taylor_green", true},
                                                 {"taylor_green", false},
                                                 {"beltrami", false}}) {
    CAPTURE(name);
    CAPTURE(hard);
    Rig rig = make_rig(name, hard, {6, 6}, 61);
    auto fwd = rig.assembly.forward(rig.params, true);
    Rng rng(23);
    const int P = rig.assembly.parameter_count();
    const int R = rig.assembly.residual_size();
    for (int rep = 0; rep < 3; ++rep) {
      Eigen::VectorXd v(P), w(R);
      for (int i = 0; i < P; ++i) v[i] = rng.uniform(-1.0, 1.0);
      for (int i = 0; i < R; ++i) w[i] = rng.uniform(-1.0, 1.0);
      const double lhs = rig.assembly.jvp(*fwd, v).dot(w);
      const double rhs = v.dot(rig.assembly.vjp(*fwd, w));
      CHECK(std::abs(lhs - rhs) <=
            1e-12 * std::max(1.0, std::abs(lhs)));
    }
  }
}

TEST_CASE("VJP of the residual is the loss gradient") {
  Rig rig = make_rig("kovasznay", false, {6, 6}, 71);
  auto fwd = rig.assembly.forward(rig.params, true);
  const Eigen::VectorXd grad =
      rig.assembly.vjp(*fwd, rig.assembly.residual(*fwd).values);

  Rng rng(29);
  Eigen::VectorXd v(grad.size());
  for (int i = 0; i < v.size(); ++i) v[i] = rng.uniform(-1.0, 1.0);
  const double h = 1e-6;
  FlatParams pp = rig.params, pm = rig.params;
  pp.values += h * v;
  pm.values -= h * v;
  const double fd =
      (rig.assembly.loss(pp).total - rig.assembly.loss(pm).total) / (2.0 * h);
  CHECK(std::abs(grad.dot(v) - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
}

TEST_CASE("dense Jacobian agrees with JVP columns and VJP rows") {
  for (const auto& [name, hard] :
       std::vector<std::pair<std::string, bool>>{{"kovasznay", false},
                                                 {"taylor_green", true},
                                                 {"beltrami", false}}) {
    CAPTURE(name);
    CAPTURE(hard);
    Rig rig = make_rig(name, hard, {5, 4}, 81);
    auto fwd = rig.assembly.forward(rig.params, true);
    const RowMatrixXd J = rig.assembly.jacobian(*fwd);
    const int P = rig.assembly.parameter_count();
    const int R = rig.assembly.residual_size();
    REQUIRE(J.rows() == R);
    REQUIRE(J.cols() == P);

    // Every column against the tangent engine.
    double worst = 0.0;
    Eigen::VectorXd e = Eigen::VectorXd::Zero(P);
    for (int i = 0; i < P; ++i) {
      e[i] = 1.0;
      const Eigen::VectorXd col = rig.assembly.jvp(*fwd, e);
      e[i] = 0.0;
      worst = std::max(worst, (J.col(i) - col).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 1e-13);

    // Random cotangents against the reverse engine.
    Rng rng(37);
    for (int rep = 0; rep < 3; ++rep) {
      Eigen::VectorXd w(R);
      for (int i = 0; i < R; ++i) w[i] = rng.uniform(-1.0, 1.0);
      const Eigen::VectorXd jt = J.transpose() * w;
      const Eigen::VectorXd ad = rig.assembly.vjp(*fwd, w);
      CHECK((jt - ad).cwiseAbs().maxCoeff() <= 1e-12);
    }

    // The convenience wrapper returns the same matrix.
    const Eigen::MatrixXd Jd = rig.assembly.dense_jacobian(rig.params);
    CHECK((Jd - J).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("hand-computed Jacobian entries of a linear network") {
  // Depth-zero networks make u = W x + b exactly linear in parameters:
  // the divergence residual is (W00 + W11) / sqrt(N), so its derivative
  // w.r.t. W00 and W11 is the block scale and vanishes for every other
  // parameter of the diagonal-free set at a single point.
  FlowProblem P = make_problem("kovasznay", false);
  CollocationSpec spec;
  spec.interior_strategy = CollocationSpec::Strategy::equidistant_grid;
  spec.interior_grid = {2, 2};
  spec.boundary_count = 4;
  CollocationSet pts = sample_collocation(P, spec, 3);
  Topology topo = topology_for(P, {});  // no hidden layers
  FlatParams params = glorot_init(topo, 5);
  ResidualAssembly A(P, std::move(pts), topo);
  REQUIRE(A.parameter_count() == 9);  // 2x2+2 velocity, 2+1 pressure

  const Eigen::MatrixXd J = A.dense_jacobian(params);
  const Block* db = A.layout().find(BlockKind::divergence);
  const Block* mb = A.layout().find(BlockKind::momentum);
  REQUIRE(db != nullptr);
  const double sc = db->scale;
  for (int pt = 0; pt < db->point_count; ++pt) {
    const int row = db->offset + pt;
    // Velocity weights W (row-major 2x2) sit at parameters 0..3, biases 4..5.
    CHECK(J(row, 0) == doctest::Approx(sc).epsilon(1e-14));  // W00
    CHECK(J(row, 1) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(J(row, 2) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(J(row, 3) == doctest::Approx(sc).epsilon(1e-14));  // W11
    CHECK(J(row, 4) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(J(row, 5) == doctest::Approx(0.0).epsilon(1e-14));
    // Divergence is velocity-only: pressure parameters 6..8 get zero.
    for (int i = 6; i < 9; ++i)
      CHECK(J(row, i) == doctest::Approx(0.0).epsilon(1e-14));
  }
  // Momentum row k: the pressure-gradient term d_k p = wp_k contributes
  // exactly scale w.r.t. wp_k and nothing w.r.t. the pressure bias.
  for (int pt = 0; pt < mb->point_count; ++pt)
    for (int k = 0; k < 2; ++k) {
      const int row = mb->offset + pt * 2 + k;
      CHECK(J(row, 6 + k) == doctest::Approx(mb->scale).epsilon(1e-14));
      CHECK(J(row, 8) == doctest::Approx(0.0).epsilon(1e-14));
    }
}

TEST_CASE("interior velocity Jacobian matches the tangent evaluator") {
  for (const auto& [name, hard] :
       std::vector<std::pair<std::string, bool>>{{"kovasznay", false},
                                                 {"taylor_green", true}}) {
    CAPTURE(name);
    CAPTURE(hard);
    Rig rig = make_rig(name, hard, {5, 4}, 91);
    auto fwd = rig.assembly.forward(rig.params, true);
    const RowMatrixXd F = rig.assembly.interior_velocity_jacobian(*fwd);
    const CollocationSet& pts = rig.assembly.collocation();
    const int d = rig.prob.dim;
    const int m = rig.prob.input_dim();
    const int P = rig.assembly.parameter_count();
    REQUIRE(F.rows() == static_cast<long>(pts.interior.count()) * d * (1 + d));
    REQUIRE(F.cols() == P);

    const bool divfree = rig.prob.constraints.divergence_free;
    const JetSpace& sv = jet_space(m, divfree ? 3 : 2);
    const JetSpace& sw = jet_space(m, 2);
    Rng rng(43);
    double worst = 0.0;
    for (int rep = 0; rep < 10; ++rep) {
      const int i = static_cast<int>(rng.uniform(0.0, double(P)));
      Eigen::VectorXd e = Eigen::VectorXd::Zero(P);
      e[i] = 1.0;
      for (int pt = 0; pt < pts.interior.count(); ++pt) {
        const auto q = pts.interior.point(pt);
        const JetPair jp = mlp_eval_tangent(
            rig.params, NetId::velocity, embed_point(rig.topo, q, sv), e);
        std::vector<Jet> du = divfree
                                  ? divergence_free_wrap(jp.tangent, d)
                                  : jp.tangent;
        if (rig.prob.constraints.exact_initial) {
          Jet ell = jet_seed_in(sw, q, m - 1);
          ell.c[0] -= rig.prob.time_interval[0];
          for (Jet& j : du) j = jet_mul(ell, j);
        }
        for (int k = 0; k < d; ++k) {
          const long r0 = (static_cast<long>(pt) * d + k) * (1 + d);
          worst = std::max(worst, std::abs(F(r0, i) - du[k].value()));
          for (int j = 0; j < d; ++j)
            worst = std::max(worst, std::abs(F(r0 + 1 + j, i) - du[k].d1(j)));
        }
      }
    }
    CHECK(worst <= 1e-12);
  }
}

// ===========================================================================
// Guards
// ===========================================================================

TEST_CASE("assembly constructor rejects inconsistent setups") {
  FlowProblem P = make_problem("kovasznay", false);
  CollocationSpec spec;
  spec.interior_grid = {3, 3};
  spec.boundary_count = 8;
  CollocationSet pts = sample_collocation(P, spec, 3);
  Topology good = topology_for(P, {4});

  {  // wrong velocity output width for the ansatz
    Topology t = good;
    t.velocity_output = 1;
    CHECK_THROWS_AS(ResidualAssembly(P, pts, t), ConfigError);
  }
  {  // topology kind disagrees with the problem
    Topology t = good;
    t.unsteady = true;
    CHECK_THROWS_AS(ResidualAssembly(P, pts, t), ArgumentError);
  }
  {  // soft boundary conditions with no boundary points
    CollocationSet empty = pts;
    empty.boundary = PointSet{};
    CHECK_THROWS_AS(ResidualAssembly(P, empty, good), ArgumentError);
  }
  {  // unsupported activation
    Topology t = good;
    t.activation = "relu";
    CHECK_THROWS_AS(ResidualAssembly(P, pts, t), ArgumentError);
  }
  {  // periodic embedding without the matching constraint
    Topology t = good;
    t.embedding.periodic = true;
    t.embedding.periods = {1.0, 1.0, 0.0};
    CHECK_THROWS_AS(ResidualAssembly(P, pts, t), ConfigError);
  }
}

TEST_CASE("assembly guards its evaluation inputs") {
  Rig rig = make_rig("kovasznay", false, {4}, 101);
  // Parameter vector of the wrong length.
  FlatParams bad = rig.params;
  bad.values.conservativeResize(bad.values.size() - 1);
  CHECK_THROWS_AS(rig.assembly.assemble(bad), ArgumentError);

  // Derivatives need a taped forward.
  auto lean = rig.assembly.forward(rig.params, false);
  const Eigen::VectorXd v =
      Eigen::VectorXd::Zero(rig.assembly.parameter_count());
  CHECK_THROWS_AS(rig.assembly.jvp(*lean, v), ArgumentError);

  // Mismatched tangent/cotangent lengths.
  auto fwd = rig.assembly.forward(rig.params, true);
  CHECK_THROWS_AS(rig.assembly.jvp(*fwd, Eigen::VectorXd::Zero(3)),
                  ArgumentError);
  CHECK_THROWS_AS(rig.assembly.vjp(*fwd, Eigen::VectorXd::Zero(3)),
                  ArgumentError);

  // Forward states are bound to their assembly.
  Rig other = make_rig("kovasznay", false, {4}, 103);
  CHECK_THROWS_AS(other.assembly.residual(*fwd), ArgumentError);

  // The dense path respects the memory budget and points to the
  // matrix-free alternative.
  rig.assembly.set_jacobian_budget_bytes(16);
  try {
    (void)rig.assembly.jacobian(*fwd);
    CHECK(false);
  } catch (const CapacityError& e) {
    CHECK(std::string(e.what()).find("cg") != std::string::npos);
  }
}

TEST_CASE("derivatives are deterministic") {
  Rig a = make_rig("beltrami", false, {5, 5}, 111);
  Rig b = make_rig("beltrami", false, {5, 5}, 111);
  auto fa = a.assembly.forward(a.params, true);
  auto fb = b.assembly.forward(b.params, true);
  Rng rng(47);
  Eigen::VectorXd v(a.assembly.parameter_count());
  for (int i = 0; i < v.size(); ++i) v[i] = rng.uniform(-1.0, 1.0);
  const Eigen::VectorXd ja = a.assembly.jvp(*fa, v);
  const Eigen::VectorXd jb = b.assembly.jvp(*fb, v);
  for (int i = 0; i < ja.size(); ++i) CHECK(ja[i] == jb[i]);
  Eigen::VectorXd w(a.assembly.residual_size());
  for (int i = 0; i < w.size(); ++i) w[i] = rng.uniform(-1.0, 1.0);
  const Eigen::VectorXd ga = a.assembly.vjp(*fa, w);
  const Eigen::VectorXd gb = b.assembly.vjp(*fb, w);
  for (int i = 0; i < ga.size(); ++i) CHECK(ga[i] == gb[i]);
}
