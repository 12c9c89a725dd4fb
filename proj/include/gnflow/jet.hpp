/// @file jet.hpp
/// @brief Dense multivariate truncated Taylor expansions ("jets").
///
/// A Jet carries the Taylor coefficients of a scalar function at a point, for
/// all multi-indices of total degree <= K in m variables (m in 1..4, K in
/// 0..3; at most C(4+3,3) = 35 coefficients). Coefficients are stored in
/// Taylor normalization, i.e. f(x+h) = sum_a c_a h^a, so the partial
/// derivative d^a f equals a! * c_a.
///
/// Propagating seeded coordinate jets through the arithmetic below yields the
/// exact spatial/temporal partials (value, gradient, Laplacian, mixed terms)
/// of any composition of the supported primitives — this is how the PDE
/// residuals obtain network derivatives without symbolic differentiation.
///
/// Design notes:
///   - Multi-indices are enumerated degree-major; within a degree the first
///     variable's exponent descends (so the first-order coefficient of
///     variable v always sits at index 1+v).
///   - Multiplication uses a precomputed sparse table of (i, j, k) triples
///     with alpha_i + alpha_j = alpha_k, shared per (m, K) via a registry.
///   - Unary transcendentals compose the univariate Taylor polynomial of f
///     with the nilpotent part of the argument (exact in the truncated
///     algebra).
///   - Raw-buffer variants of the kernels operate on coefficient segments in
///     larger matrices; the Jet struct is a convenience wrapper around one
///     such segment.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace gnflow {

/// Exponent vector for up to 4 variables (unused trailing entries are 0).
using MultiIndex = std::array<std::uint8_t, 4>;

/// Static description of the coefficient space for (m variables, order K):
/// multi-index enumeration, multiplication table, derivative-extraction maps.
struct JetSpace {
  int m = 0;       ///< number of variables (1..4)
  int K = 0;       ///< truncation order (0..3)
  int ncoef = 0;   ///< number of multi-indices of total degree <= K

  std::vector<MultiIndex> alpha;  ///< multi-index of each coefficient

  /// c_out[k] += c_a[i] * c_b[j] for every entry; sorted by k for locality.
  struct MulEntry {
    std::uint16_t i, j, k;
  };
  std::vector<MulEntry> mul;

  /// Derivative extraction d/dx_v maps this space into (m, K-1):
  /// lower.c[b] = dsrc[v][b].factor * c[dsrc[v][b].src].
  struct DerivEntry {
    std::uint16_t src;
    double factor;
  };
  std::array<std::vector<DerivEntry>, 4> dsrc;

  std::array<std::uint16_t, 4> idx_first{};  ///< index of e_v (valid if K>=1)
  std::array<std::uint16_t, 4> idx_diag2{};  ///< index of 2e_v (valid if K>=2)

  /// Index of a multi-index in this space, or -1 if degree exceeds K.
  int index_of(const MultiIndex& a) const;
};

/// Registry of the 16 spaces (m in 1..4, K in 0..3), built once.
const JetSpace& jet_space(int m, int K);

/// One truncated Taylor expansion. The active coefficient count is
/// space->ncoef; trailing storage is unused.
struct Jet {
  static constexpr int kMaxCoef = 35;

  const JetSpace* space = nullptr;
  std::array<double, kMaxCoef> c{};

  double value() const { return c[0]; }

  /// First-order partial d f / d x_v.
  double d1(int v) const { return c[space->idx_first[v]]; }

  /// Second-order partial d^2 f / (d x_v d x_w), de-normalized.
  double d2(int v, int w) const;

  /// Sum of d^2 f / d x_v^2 over the first nvars variables (the spatial
  /// Laplacian when time is the trailing variable).
  double laplacian(int nvars) const;
};

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

/// Jet of a constant function.
Jet jet_constant(double value, const JetSpace& space);

/// Jet of the coordinate function x -> x[var_index] in the given space
/// (no restriction on K; used internally for K in {0, 1} as well).
Jet jet_seed_in(const JetSpace& space, std::span<const double> x, int var_index);

/// Public seeding operation: coordinate jet with m = x.size() variables.
/// Requires K in {2, 3} and 0 <= var_index < m (ArgumentError otherwise).
Jet jet_seed(std::span<const double> x, int var_index, int order);

// ---------------------------------------------------------------------------
// Arithmetic (argument jets must share a space; ArgumentError otherwise)
// ---------------------------------------------------------------------------

Jet jet_add(const Jet& a, const Jet& b);
Jet jet_sub(const Jet& a, const Jet& b);
Jet jet_neg(const Jet& a);
Jet jet_scale(const Jet& a, double s);
/// a + s (adds to the value coefficient only).
Jet jet_shift(const Jet& a, double s);
Jet jet_mul(const Jet& a, const Jet& b);

/// Truncated composition f(g) from the first four derivative values of f at
/// g.value(): f_derivs = { f, f', f'', f''' } evaluated at g.value().
Jet jet_compose(const Jet& g, const std::array<double, 4>& f_derivs);

Jet jet_tanh(const Jet& a);
Jet jet_sin(const Jet& a);
Jet jet_cos(const Jet& a);
Jet jet_exp(const Jet& a);

/// d a / d x_v as a jet of order K-1 in the same variables.
/// Requires K >= 1 (ArgumentError otherwise).
Jet jet_deriv(const Jet& a, int v);

/// Dispatcher over the primitive set {add, mul, neg, tanh, sin, cos, exp,
/// affine}. "affine" computes extra[0] + sum_i extra[1+i] * args[i]; the
/// other names take their natural arity. Unknown names or wrong arity raise
/// ArgumentError.
Jet jet_primitive(std::string_view op, std::span<const Jet> args,
                  std::span<const double> extra = {});

// ---------------------------------------------------------------------------
// Raw-buffer kernels (hot paths; buffers hold space.ncoef doubles)
// ---------------------------------------------------------------------------

/// out = a * b (overwrites out; out must not alias a or b).
void jet_mul_buf(const JetSpace& space, const double* a, const double* b,
                 double* out);

/// out += a * b.
void jet_mul_acc_buf(const JetSpace& space, const double* a, const double* b,
                     double* out);

/// Adjoint of b -> a*b: bbar[j] += a[i] * obar[k] over the mul table.
void jet_mul_adj_buf(const JetSpace& space, const double* a,
                     const double* obar, double* bbar);

/// In-place tanh of the jet in `g`; if `dcoef` is non-null it receives the
/// jet of tanh'(g) = 1 - tanh(g)^2 (the exact tangent multiplier).
void jet_tanh_buf(const JetSpace& space, double* g, double* dcoef);

}  // namespace gnflow
