/// @file network.cpp
/// @brief Reference (per-point) network evaluation and constraint wraps.

#include "gnflow/network.hpp"

#include <cmath>

#include "gnflow/errors.hpp"

namespace gnflow {

void validate_constraint_mode(const ConstraintMode& mode, bool unsteady) {
  if (mode.exact_initial && !unsteady)
    throw ConfigError("constraints: exact_initial requires an unsteady problem");
  if (mode.periodic) {
    for (double p : mode.periods)
      if (p < 0.0)
        throw ConfigError("constraints: periods must be positive");
  }
  // The time multiplier is fixed to ell(t) = t, which satisfies ell(0) = 0;
  // assert the contract anyway so a future multiplier change cannot silently
  // break the exact-initial guarantee.
  if (mode.exact_initial) {
    const double ell0 = 0.0;  // ell(0) with ell(t) = t
    if (ell0 != 0.0)
      throw ConfigError("constraints: initial-condition multiplier must vanish at t = 0");
  }
}

std::vector<Jet> identity_embed(std::span<const double> point,
                                const JetSpace& space) {
  std::vector<Jet> out;
  out.reserve(space.m);
  for (int v = 0; v < space.m; ++v) out.push_back(jet_seed_in(space, point, v));
  return out;
}

std::vector<Jet> periodic_embed(std::span<const double> point,
                                std::span<const double> periods, bool unsteady,
                                const JetSpace& space) {
  const int nspatial = space.m - (unsteady ? 1 : 0);
  if (static_cast<int>(periods.size()) != nspatial)
    throw ArgumentError("periodic_embed: need one period per spatial dimension");
  std::vector<Jet> out;
  out.reserve(2 * nspatial + (unsteady ? 1 : 0));
  for (int v = 0; v < nspatial; ++v) {
    if (!(periods[v] > 0.0))
      throw ArgumentError("periodic_embed: periods must be positive");
    const Jet arg =
        jet_scale(jet_seed_in(space, point, v), 2.0 * M_PI / periods[v]);
    out.push_back(jet_cos(arg));
    out.push_back(jet_sin(arg));
  }
  if (unsteady) out.push_back(jet_seed_in(space, point, space.m - 1));
  return out;
}

std::vector<Jet> embed_point(const Topology& topo, std::span<const double> point,
                             const JetSpace& space) {
  if (space.m != topo.input_dim())
    throw ArgumentError("embed_point: coordinate count does not match topology");
  if (topo.embedding.periodic) {
    return periodic_embed(point,
                          std::span<const double>(topo.embedding.periods.data(),
                                                  std::size_t(topo.dim)),
                          topo.unsteady, space);
  }
  return identity_embed(point, space);
}

std::vector<Jet> mlp_eval(const FlatParams& params, NetId net,
                          std::span<const Jet> inputs) {
  if (params.topology.activation != "tanh")
    throw ArgumentError("mlp_eval: only tanh activation is supported");
  const NetLayout lay = net_layout(params.topology, net);
  if (static_cast<int>(inputs.size()) != lay.in_dim)
    throw ArgumentError("mlp_eval: input jet count does not match topology");
  for (const Jet& j : inputs)
    if (j.space != inputs[0].space)
      throw ArgumentError("mlp_eval: input jets must share one space");
  const JetSpace& space = *inputs[0].space;

  std::vector<Jet> x(inputs.begin(), inputs.end());
  for (std::size_t l = 0; l < lay.layers.size(); ++l) {
    const LayerDims& ld = lay.layers[l];
    const bool last = (l + 1 == lay.layers.size());
    std::vector<Jet> y(ld.out);
    for (int o = 0; o < ld.out; ++o) {
      Jet acc = jet_constant(params.values[ld.b_off + o], space);
      for (int i = 0; i < ld.in; ++i) {
        const double w = params.values[ld.w_off + std::ptrdiff_t(o) * ld.in + i];
        for (int k = 0; k < space.ncoef; ++k) acc.c[k] += w * x[i].c[k];
      }
      y[o] = last ? acc : jet_tanh(acc);
    }
    x = std::move(y);
  }
  return x;
}

Eigen::VectorXd mlp_value(const FlatParams& params, NetId net,
                          const Eigen::VectorXd& embedded_input) {
  const NetLayout lay = net_layout(params.topology, net);
  if (embedded_input.size() != lay.in_dim)
    throw ArgumentError("mlp_value: input width does not match topology");
  Eigen::VectorXd x = embedded_input;
  for (std::size_t l = 0; l < lay.layers.size(); ++l) {
    const LayerDims& ld = lay.layers[l];
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        W(params.values.data() + ld.w_off, ld.out, ld.in);
    Eigen::Map<const Eigen::VectorXd> b(params.values.data() + ld.b_off, ld.out);
    Eigen::VectorXd y = W * x + b;
    if (l + 1 < lay.layers.size()) y = y.array().tanh();
    x = std::move(y);
  }
  return x;
}

std::vector<Jet> divergence_free_wrap(std::span<const Jet> potential, int d) {
  if (d != 2 && d != 3)
    throw ArgumentError("divergence_free_wrap: dimension must be 2 or 3");
  const std::size_t want = d == 2 ? 1 : 3;
  if (potential.size() != want)
    throw ArgumentError("divergence_free_wrap: wrong potential component count");
  for (const Jet& j : potential) {
    if (j.space == nullptr || j.space->K < 3)
      throw ArgumentError("divergence_free_wrap: potential jets need order >= 3");
    if (j.space != potential[0].space)
      throw ArgumentError("divergence_free_wrap: potential jets must share a space");
  }

  std::vector<Jet> u;
  if (d == 2) {
    // u = (d_y psi, -d_x psi).
    u.push_back(jet_deriv(potential[0], 1));
    u.push_back(jet_neg(jet_deriv(potential[0], 0)));
  } else {
    // u = curl A.
    u.push_back(jet_sub(jet_deriv(potential[2], 1), jet_deriv(potential[1], 2)));
    u.push_back(jet_sub(jet_deriv(potential[0], 2), jet_deriv(potential[2], 0)));
    u.push_back(jet_sub(jet_deriv(potential[1], 0), jet_deriv(potential[0], 1)));
  }
  return u;
}

std::vector<Jet> ic_wrap(std::span<const Jet> raw, const Jet& ell,
                         std::span<const Jet> g) {
  if (raw.size() != g.size())
    throw ArgumentError("ic_wrap: raw output and initial data sizes differ");
  std::vector<Jet> out;
  out.reserve(raw.size());
  for (std::size_t k = 0; k < raw.size(); ++k)
    out.push_back(jet_add(g[k], jet_mul(ell, raw[k])));
  return out;
}

std::vector<double> potential_velocity_values(std::span<const Jet> potential,
                                              int d) {
  if (d != 2 && d != 3)
    throw ArgumentError("potential_velocity_values: dimension must be 2 or 3");
  const std::size_t want = d == 2 ? 1 : 3;
  if (potential.size() != want)
    throw ArgumentError("potential_velocity_values: wrong component count");
  for (const Jet& j : potential)
    if (j.space == nullptr || j.space->K < 1)
      throw ArgumentError("potential_velocity_values: jets need order >= 1");
  if (d == 2)
    return {potential[0].d1(1), -potential[0].d1(0)};
  return {potential[2].d1(1) - potential[1].d1(2),
          potential[0].d1(2) - potential[2].d1(0),
          potential[1].d1(0) - potential[0].d1(1)};
}

JetPair mlp_eval_tangent(const FlatParams& params, NetId net,
                         std::span<const Jet> inputs, const ParamTangent& v) {
  if (params.topology.activation != "tanh")
    throw ArgumentError("mlp_eval_tangent: only tanh activation is supported");
  if (v.size() != params.values.size())
    throw ArgumentError("mlp_eval_tangent: tangent length does not match params");
  const NetLayout lay = net_layout(params.topology, net);
  if (static_cast<int>(inputs.size()) != lay.in_dim)
    throw ArgumentError("mlp_eval_tangent: input jet count does not match topology");
  const JetSpace& space = *inputs[0].space;

  std::vector<Jet> x(inputs.begin(), inputs.end());
  std::vector<Jet> xdot(x.size(), jet_constant(0.0, space));  // inputs are fixed
  for (std::size_t l = 0; l < lay.layers.size(); ++l) {
    const LayerDims& ld = lay.layers[l];
    const bool last = (l + 1 == lay.layers.size());
    std::vector<Jet> y(ld.out), ydot(ld.out);
    for (int o = 0; o < ld.out; ++o) {
      Jet acc = jet_constant(params.values[ld.b_off + o], space);
      Jet accdot = jet_constant(v[ld.b_off + o], space);
      for (int i = 0; i < ld.in; ++i) {
        const std::ptrdiff_t wi = ld.w_off + std::ptrdiff_t(o) * ld.in + i;
        const double w = params.values[wi];
        const double wdot = v[wi];
        for (int k = 0; k < space.ncoef; ++k) {
          acc.c[k] += w * x[i].c[k];
          accdot.c[k] += w * xdot[i].c[k] + wdot * x[i].c[k];
        }
      }
      if (last) {
        y[o] = acc;
        ydot[o] = accdot;
      } else {
        y[o] = jet_tanh(acc);
        // d tanh(a) = (1 - tanh(a)^2) (*) da in the truncated algebra.
        Jet D = jet_mul(y[o], y[o]);
        for (int k = 0; k < space.ncoef; ++k) D.c[k] = -D.c[k];
        D.c[0] += 1.0;
        ydot[o] = jet_mul(D, accdot);
      }
    }
    x = std::move(y);
    xdot = std::move(ydot);
  }
  return {std::move(x), std::move(xdot)};
}

}  // namespace gnflow
