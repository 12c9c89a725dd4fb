/// @file params.hpp
/// @brief Flattened trainable parameters and network topology metadata.
///
/// Both sub-networks (velocity and pressure) live in one contiguous parameter
/// vector: all velocity parameters first, then all pressure parameters
/// (the theta / psi split). Within a sub-network, parameters are laid out
/// layer by layer as [weights row-major (out x in), biases]. Every module
/// that differentiates with respect to parameters shares this indexing, so a
/// ParamTangent is just a vector of the same length.

#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace gnflow {

enum class NetId { velocity, pressure };

/// Input treatment in front of both sub-networks. With `periodic`, each
/// spatial coordinate x_j is replaced by (cos(2 pi x_j / P_j),
/// sin(2 pi x_j / P_j)); the time coordinate always passes through unchanged.
struct Embedding {
  bool periodic = false;
  std::array<double, 3> periods{0.0, 0.0, 0.0};
};

/// Shapes of the two MLPs plus the input descriptor. `velocity_output` is the
/// raw output width of the velocity sub-network: d for a direct ansatz, or
/// the potential width (1 in 2D, 3 in 3D) when the divergence-free wrap is
/// active.
struct Topology {
  int dim = 2;
  bool unsteady = false;
  Embedding embedding;
  std::vector<int> hidden_velocity{50, 50, 50, 50};
  std::vector<int> hidden_pressure{50, 50, 50, 50};
  int velocity_output = 2;
  std::string activation = "tanh";

  /// Raw coordinate count (spatial dims plus time when unsteady).
  int input_dim() const { return dim + (unsteady ? 1 : 0); }

  /// Network input width after the embedding.
  int embedded_dim() const {
    return (embedding.periodic ? 2 * dim : dim) + (unsteady ? 1 : 0);
  }
};

/// One affine layer's dimensions and offsets into the flat parameter vector.
struct LayerDims {
  int in = 0;
  int out = 0;
  std::ptrdiff_t w_off = 0;  ///< weights, row-major (out x in)
  std::ptrdiff_t b_off = 0;  ///< biases (out)
};

/// Resolved per-network layout. Layers alternate affine / tanh; the final
/// affine layer has no activation. An empty hidden list yields a single
/// affine layer (used by tiny linear-in-parameters test networks).
struct NetLayout {
  std::vector<LayerDims> layers;
  std::ptrdiff_t offset = 0;  ///< start of this network's slice
  std::ptrdiff_t size = 0;    ///< parameter count of this network
  int in_dim = 0;
  int out_dim = 0;
};

/// Builds the layout of one sub-network (validates widths >= 1).
NetLayout net_layout(const Topology& topo, NetId net);

/// Total trainable parameter count P across both sub-networks.
std::ptrdiff_t param_count(const Topology& topo);

/// The flattened parameter vector with its topology metadata.
struct FlatParams {
  Topology topology;
  Eigen::VectorXd values;
};

/// A tangent/cotangent in parameter space. Indexing is identical to
/// FlatParams::values of the paired parameters; lengths are validated at
/// every operation boundary.
using ParamTangent = Eigen::VectorXd;

/// Glorot-uniform initialization: weights uniform on
/// +-sqrt(6 / (fan_in + fan_out)) drawn in storage order (velocity layers
/// then pressure layers, weights row-major), biases exactly zero.
/// Deterministic for a fixed seed.
FlatParams glorot_init(const Topology& topo, std::uint64_t seed);

}  // namespace gnflow
