/// @file test_network.cpp
/// @brief Tests for parameter layout, initialization, MLP jet evaluation, and
///        the hard-constraint transformations.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "gnflow/errors.hpp"
#include "gnflow/network.hpp"
#include "gnflow/rng.hpp"

using namespace gnflow;

namespace {

Topology small_topology(int dim, bool unsteady, std::vector<int> hidden,
                        int vel_out) {
  Topology t;
  t.dim = dim;
  t.unsteady = unsteady;
  t.hidden_velocity = hidden;
  t.hidden_pressure = hidden;
  t.velocity_output = vel_out;
  return t;
}

}  // namespace

TEST_CASE("glorot bounds, determinism, zero biases") {
  // Velocity net [2, 4, 1]: first weight matrix bounded by sqrt(6/6) = 1,
  // second by sqrt(6/5).
  Topology topo = small_topology(2, false, {4}, 1);
  FlatParams p = glorot_init(topo, 42);

  const NetLayout vel = net_layout(topo, NetId::velocity);
  REQUIRE(vel.layers.size() == 2);
  const double b1 = 1.0, b2 = std::sqrt(6.0 / 5.0);
  double maxw1 = 0.0, maxw2 = 0.0;
  for (int i = 0; i < 4 * 2; ++i)
    maxw1 = std::max(maxw1, std::abs(p.values[vel.layers[0].w_off + i]));
  for (int i = 0; i < 1 * 4; ++i)
    maxw2 = std::max(maxw2, std::abs(p.values[vel.layers[1].w_off + i]));
  CHECK(maxw1 <= b1);
  CHECK(maxw2 <= b2);
  CHECK(maxw1 > 0.05 * b1);  // drawn, not degenerate

  for (const LayerDims& ld : vel.layers)
    for (int o = 0; o < ld.out; ++o) CHECK(p.values[ld.b_off + o] == 0.0);

  FlatParams q = glorot_init(topo, 42);
  CHECK(p.values == q.values);
  FlatParams r = glorot_init(topo, 43);
  CHECK(p.values != r.values);

  Topology bad = topo;
  bad.hidden_velocity = {0};
  CHECK_THROWS_AS(glorot_init(bad, 1), ArgumentError);
}

TEST_CASE("parameter count and flatten/unflatten round-trip") {
  Topology topo = small_topology(2, true, {8, 8}, 2);
  // Velocity [3,8,8,2]: (3+1)*8 + (8+1)*8 + (8+1)*2 = 122; pressure [3,8,8,1]:
  // 32 + 72 + 9 = 113.
  CHECK(param_count(topo) == 122 + 113);

  FlatParams p = glorot_init(topo, 7);
  Eigen::VectorXd rebuilt = Eigen::VectorXd::Zero(p.values.size());
  for (NetId net : {NetId::velocity, NetId::pressure}) {
    const NetLayout lay = net_layout(topo, net);
    for (const LayerDims& ld : lay.layers) {
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                     Eigen::RowMajor>>
          W(p.values.data() + ld.w_off, ld.out, ld.in);
      Eigen::Map<const Eigen::VectorXd> b(p.values.data() + ld.b_off, ld.out);
      // Unflatten to matrices, then flatten back into place.
      Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                               Eigen::RowMajor>>(rebuilt.data() + ld.w_off,
                                                 ld.out, ld.in) = W;
      Eigen::Map<Eigen::VectorXd>(rebuilt.data() + ld.b_off, ld.out) = b;
    }
  }
  CHECK(p.values == rebuilt);
}

TEST_CASE("mlp_eval basics") {
  const std::array<double, 2> x{2.0, 3.0};
  const JetSpace& s = jet_space(2, 2);

  SUBCASE("zero parameters give zero jets") {
    Topology topo = small_topology(2, false, {4, 4}, 2);
    FlatParams p{topo, Eigen::VectorXd::Zero(param_count(topo))};
    auto out = mlp_eval(p, NetId::velocity, identity_embed(x, s));
    REQUIRE(out.size() == 2);
    for (const Jet& j : out)
      for (int k = 0; k < s.ncoef; ++k) CHECK(j.c[k] == 0.0);
  }

  SUBCASE("single linear neuron w=(1,1), b=0") {
    Topology topo = small_topology(2, false, {}, 1);
    FlatParams p{topo, Eigen::VectorXd::Zero(param_count(topo))};
    p.values[0] = 1.0;
    p.values[1] = 1.0;
    auto out = mlp_eval(p, NetId::velocity, identity_embed(x, s));
    REQUIRE(out.size() == 1);
    CHECK(out[0].value() == doctest::Approx(5.0).epsilon(1e-15));
    CHECK(out[0].d1(0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(out[0].d1(1) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(out[0].d2(0, 0) == 0.0);
    CHECK(out[0].d2(0, 1) == 0.0);
  }

  SUBCASE("jet value agrees with the plain forward pass") {
    Topology topo = small_topology(2, false, {8, 8}, 2);
    FlatParams p = glorot_init(topo, 3);
    Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
      const std::array<double, 2> pt{rng.uniform(-1, 1), rng.uniform(-1, 1)};
      auto jets = mlp_eval(p, NetId::velocity, identity_embed(pt, s));
      Eigen::VectorXd in(2);
      in << pt[0], pt[1];
      Eigen::VectorXd vals = mlp_value(p, NetId::velocity, in);
      for (int k = 0; k < 2; ++k)
        CHECK(std::abs(jets[k].value() - vals[k]) <=
              1e-14 * std::max(1.0, std::abs(vals[k])));
    }
  }

  SUBCASE("input mismatch raises") {
    Topology topo = small_topology(2, false, {4}, 2);
    FlatParams p = glorot_init(topo, 1);
    std::vector<Jet> one{jet_seed_in(s, x, 0)};
    CHECK_THROWS_AS(mlp_eval(p, NetId::velocity, one), ArgumentError);
  }
}

TEST_CASE("periodic embedding") {
  const std::array<double, 1> periods{2.0 * M_PI};

  SUBCASE("x = 0 maps to (1, 0); x = pi/2 maps to (0, 1)") {
    const JetSpace& s = jet_space(1, 2);
    const std::array<double, 1> x0{0.0};
    auto e0 = periodic_embed(x0, periods, false, s);
    REQUIRE(e0.size() == 2);
    CHECK(e0[0].value() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(e0[1].value() == doctest::Approx(0.0).epsilon(1e-15));

    const std::array<double, 1> x1{M_PI / 2.0};
    auto e1 = periodic_embed(x1, periods, false, s);
    CHECK(std::abs(e1[0].value()) <= 1e-15);
    CHECK(e1[1].value() == doctest::Approx(1.0).epsilon(1e-15));
  }

  SUBCASE("embedding is periodic to trig rounding") {
    const JetSpace& s = jet_space(2, 2);
    const std::array<double, 2> per{2.0 * M_PI, 2.0 * M_PI};
    Rng rng(17);
    for (int rep = 0; rep < 50; ++rep) {
      const std::array<double, 2> x{rng.uniform(0, 2 * M_PI),
                                    rng.uniform(0, 2 * M_PI)};
      const std::array<double, 2> xs{x[0] + 2 * M_PI, x[1]};
      auto a = periodic_embed(x, per, false, s);
      auto b = periodic_embed(xs, per, false, s);
      for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(std::abs(a[i].value() - b[i].value()) <= 1e-12);
    }
  }

  SUBCASE("time passes through; bad period raises") {
    const JetSpace& s = jet_space(2, 2);  // (x, t)
    const std::array<double, 2> xt{0.3, 0.8};
    auto e = periodic_embed(xt, periods, true, s);
    REQUIRE(e.size() == 3);
    CHECK(e[2].value() == 0.8);
    CHECK(e[2].d1(1) == 1.0);

    const std::array<double, 1> bad{-1.0};
    CHECK_THROWS_AS(periodic_embed(xt, bad, true, s), ArgumentError);
  }
}

TEST_CASE("divergence-free wrap") {
  SUBCASE("psi(x,y) = x gives u = (0, -1)") {
    const JetSpace& s = jet_space(2, 3);
    const std::array<double, 2> x{0.4, -0.2};
    std::vector<Jet> psi{jet_seed_in(s, x, 0)};
    auto u = divergence_free_wrap(psi, 2);
    REQUIRE(u.size() == 2);
    CHECK(u[0].value() == 0.0);
    CHECK(u[1].value() == -1.0);
    CHECK(u[0].d1(0) + u[1].d1(1) == 0.0);
  }

  SUBCASE("psi = sin x sin y gives the Taylor-Green velocity shape") {
    const JetSpace& s = jet_space(2, 3);
    const std::array<double, 2> x{0.7, 1.1};
    std::vector<Jet> psi{
        jet_mul(jet_sin(jet_seed_in(s, x, 0)), jet_sin(jet_seed_in(s, x, 1)))};
    auto u = divergence_free_wrap(psi, 2);
    CHECK(u[0].value() ==
          doctest::Approx(std::sin(x[0]) * std::cos(x[1])).epsilon(1e-14));
    CHECK(u[1].value() ==
          doctest::Approx(-std::cos(x[0]) * std::sin(x[1])).epsilon(1e-14));
  }

  SUBCASE("random 2D potential net: div u = 0 at 100 points") {
    Topology topo = small_topology(2, false, {8, 8}, 1);
    FlatParams p = glorot_init(topo, 21);
    const JetSpace& s = jet_space(2, 3);
    Rng rng(22);
    for (int rep = 0; rep < 100; ++rep) {
      const std::array<double, 2> x{rng.uniform(-1, 1), rng.uniform(-1, 1)};
      auto psi = mlp_eval(p, NetId::velocity, identity_embed(x, s));
      auto u = divergence_free_wrap(psi, 2);
      CHECK(std::abs(u[0].d1(0) + u[1].d1(1)) <= 1e-12);
    }
  }

  SUBCASE("random 3D vector potential net: div u = 0 at 100 points") {
    Topology topo = small_topology(3, false, {6, 6}, 3);
    FlatParams p = glorot_init(topo, 23);
    const JetSpace& s = jet_space(3, 3);
    Rng rng(24);
    for (int rep = 0; rep < 100; ++rep) {
      const std::array<double, 3> x{rng.uniform(-1, 1), rng.uniform(-1, 1),
                                    rng.uniform(-1, 1)};
      auto A = mlp_eval(p, NetId::velocity, identity_embed(x, s));
      auto u = divergence_free_wrap(A, 3);
      CHECK(std::abs(u[0].d1(0) + u[1].d1(1) + u[2].d1(2)) <= 1e-12);
    }
  }

  SUBCASE("insufficient order or wrong count raises") {
    const JetSpace& s2 = jet_space(2, 2);
    const std::array<double, 2> x{0.0, 0.0};
    std::vector<Jet> loworder{jet_seed_in(s2, x, 0)};
    CHECK_THROWS_AS(divergence_free_wrap(loworder, 2), ArgumentError);
    const JetSpace& s3 = jet_space(2, 3);
    std::vector<Jet> two{jet_seed_in(s3, x, 0), jet_seed_in(s3, x, 1)};
    CHECK_THROWS_AS(divergence_free_wrap(two, 2), ArgumentError);
  }
}

TEST_CASE("initial-condition wrap") {
  SUBCASE("output equals g exactly at t = 0") {
    // 2D unsteady space (x, y, t), t = 0.
    const JetSpace& s = jet_space(3, 2);
    Rng rng(31);
    Topology topo = small_topology(2, true, {6}, 2);
    FlatParams p = glorot_init(topo, 33);
    for (int rep = 0; rep < 20; ++rep) {
      const std::array<double, 3> x{rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0};
      auto raw = mlp_eval(p, NetId::velocity, identity_embed(x, s));
      const Jet ell = jet_seed_in(s, x, 2);  // ell(t) = t
      std::vector<Jet> g{jet_sin(jet_seed_in(s, x, 0)),
                         jet_cos(jet_seed_in(s, x, 1))};
      auto u = ic_wrap(raw, ell, g);
      CHECK(std::abs(u[0].value() - g[0].value()) <= 1e-14);
      CHECK(std::abs(u[1].value() - g[1].value()) <= 1e-14);
    }
  }

  SUBCASE("ell = t, N = 1, g = 0: value t and unit time derivative") {
    const JetSpace& s = jet_space(1, 2);  // time only
    const std::array<double, 1> t{0.37};
    const Jet ell = jet_seed_in(s, t, 0);
    std::vector<Jet> raw{jet_constant(1.0, s)};
    std::vector<Jet> g{jet_constant(0.0, s)};
    auto u = ic_wrap(raw, ell, g);
    CHECK(u[0].value() == doctest::Approx(0.37).epsilon(1e-15));
    CHECK(u[0].d1(0) == doctest::Approx(1.0).epsilon(1e-15));
  }

  SUBCASE("divergence-free g and N give divergence-free output") {
    // Potential net in (x, y, t); N = curl(psi) at K=2, g = Taylor-Green
    // initial velocity, ell = t.
    const JetSpace& s3 = jet_space(3, 3);
    Topology topo = small_topology(2, true, {8}, 1);
    FlatParams p = glorot_init(topo, 41);
    Rng rng(43);
    for (int rep = 0; rep < 100; ++rep) {
      const std::array<double, 3> x{rng.uniform(0, 2 * M_PI),
                                    rng.uniform(0, 2 * M_PI),
                                    rng.uniform(0, 1)};
      auto psi = mlp_eval(p, NetId::velocity, identity_embed(x, s3));
      auto N = divergence_free_wrap(psi, 2);  // K = 2 jets
      const JetSpace& s2 = *N[0].space;
      const Jet ell = jet_seed_in(s2, x, 2);
      const Jet jx = jet_seed_in(s2, x, 0), jy = jet_seed_in(s2, x, 1);
      std::vector<Jet> g{jet_mul(jet_sin(jx), jet_cos(jy)),
                         jet_neg(jet_mul(jet_cos(jx), jet_sin(jy)))};
      auto u = ic_wrap(N, ell, g);
      CHECK(std::abs(u[0].d1(0) + u[1].d1(1)) <= 1e-12);
    }
  }
}

TEST_CASE("wrapped-network partials match finite differences") {
  // Full Taylor-Green-style pipeline: periodic embed -> potential net ->
  // curl -> ic wrap. First-order partials of the wrapped velocity compared
  // against central differences of the wrapped values (step 1e-4, tol 1e-5
  // relative with unit floor).
  Topology topo = small_topology(2, true, {6, 6}, 1);
  topo.embedding.periodic = true;
  topo.embedding.periods = {2 * M_PI, 2 * M_PI, 0.0};
  FlatParams p = glorot_init(topo, 51);
  const JetSpace& s3 = jet_space(3, 3);

  auto wrapped = [&](const std::array<double, 3>& x) {
    auto emb = embed_point(topo, x, s3);
    auto psi = mlp_eval(p, NetId::velocity, emb);
    auto N = divergence_free_wrap(psi, 2);
    const JetSpace& s2 = *N[0].space;
    const Jet ell = jet_seed_in(s2, x, 2);
    const Jet jx = jet_seed_in(s2, x, 0), jy = jet_seed_in(s2, x, 1);
    std::vector<Jet> g{jet_mul(jet_sin(jx), jet_cos(jy)),
                       jet_neg(jet_mul(jet_cos(jx), jet_sin(jy)))};
    return ic_wrap(N, ell, g);
  };

  Rng rng(53);
  const double h = 1e-4;
  for (int rep = 0; rep < 20; ++rep) {
    std::array<double, 3> x{rng.uniform(0, 2 * M_PI), rng.uniform(0, 2 * M_PI),
                            rng.uniform(0, 1)};
    auto u = wrapped(x);
    for (int comp = 0; comp < 2; ++comp) {
      for (int v = 0; v < 3; ++v) {
        auto xp = x, xm = x;
        xp[v] += h;
        xm[v] -= h;
        const double fd =
            (wrapped(xp)[comp].value() - wrapped(xm)[comp].value()) / (2 * h);
        CHECK(std::abs(u[comp].d1(v) - fd) <=
              1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST_CASE("constraint mode validation") {
  ConstraintMode hard;
  hard.divergence_free = true;
  hard.exact_initial = true;
  hard.periodic = true;
  hard.periods = {2 * M_PI, 2 * M_PI, 0.0};
  hard.boundary_soft = false;
  CHECK_NOTHROW(validate_constraint_mode(hard, /*unsteady=*/true));
  CHECK_THROWS_AS(validate_constraint_mode(hard, /*unsteady=*/false),
                  ConfigError);
}
