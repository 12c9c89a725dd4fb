/// @file params.cpp
/// @brief Parameter layout resolution and Glorot initialization.

#include "gnflow/params.hpp"

#include <cmath>

#include "gnflow/errors.hpp"
#include "gnflow/rng.hpp"

namespace gnflow {

namespace {

std::vector<int> widths_of(const Topology& topo, NetId net) {
  std::vector<int> w;
  w.push_back(topo.embedded_dim());
  const auto& hidden =
      net == NetId::velocity ? topo.hidden_velocity : topo.hidden_pressure;
  for (int h : hidden) w.push_back(h);
  w.push_back(net == NetId::velocity ? topo.velocity_output : 1);
  return w;
}

}  // namespace

NetLayout net_layout(const Topology& topo, NetId net) {
  if (topo.dim != 2 && topo.dim != 3)
    throw ArgumentError("topology: spatial dimension must be 2 or 3");

  NetLayout lay;
  // The velocity slice starts at 0; the pressure slice follows it.
  if (net == NetId::pressure) {
    const NetLayout vel = net_layout(topo, NetId::velocity);
    lay.offset = vel.offset + vel.size;
  }

  const std::vector<int> w = widths_of(topo, net);
  std::ptrdiff_t cursor = lay.offset;
  for (std::size_t l = 0; l + 1 < w.size(); ++l) {
    if (w[l] < 1 || w[l + 1] < 1)
      throw ArgumentError("topology: zero-width layer");
    LayerDims ld;
    ld.in = w[l];
    ld.out = w[l + 1];
    ld.w_off = cursor;
    ld.b_off = cursor + std::ptrdiff_t(ld.in) * ld.out;
    cursor = ld.b_off + ld.out;
    lay.layers.push_back(ld);
  }
  lay.size = cursor - lay.offset;
  lay.in_dim = w.front();
  lay.out_dim = w.back();
  return lay;
}

std::ptrdiff_t param_count(const Topology& topo) {
  const NetLayout p = net_layout(topo, NetId::pressure);
  return p.offset + p.size;
}

FlatParams glorot_init(const Topology& topo, std::uint64_t seed) {
  FlatParams params;
  params.topology = topo;
  params.values = Eigen::VectorXd::Zero(param_count(topo));

  std::uint64_t state = seed;
  Rng rng(splitmix64(state));
  for (NetId net : {NetId::velocity, NetId::pressure}) {
    const NetLayout lay = net_layout(topo, net);
    for (const LayerDims& ld : lay.layers) {
      const double bound = std::sqrt(6.0 / (ld.in + ld.out));
      for (int r = 0; r < ld.out; ++r)
        for (int c = 0; c < ld.in; ++c)
          params.values[ld.w_off + std::ptrdiff_t(r) * ld.in + c] =
              rng.uniform(-bound, bound);
      // Biases stay zero.
    }
  }
  return params;
}

}  // namespace gnflow
