/// @file jet.cpp
/// @brief Jet space registry and truncated Taylor arithmetic.

#include "gnflow/jet.hpp"

#include <algorithm>
#include <cmath>

#include "gnflow/errors.hpp"

namespace gnflow {

namespace {

/// Enumerates all exponent vectors with the given total degree, first
/// variable's exponent descending (degree-major order is produced by calling
/// this for q = 0..K in turn).
void enumerate_degree(int m, int var, int budget, MultiIndex cur,
                      std::vector<MultiIndex>* out) {
  if (var == m - 1) {
    cur[var] = static_cast<std::uint8_t>(budget);
    out->push_back(cur);
    return;
  }
  for (int e = budget; e >= 0; --e) {
    cur[var] = static_cast<std::uint8_t>(e);
    enumerate_degree(m, var + 1, budget - e, cur, out);
  }
}

std::vector<MultiIndex> enumerate_all(int m, int K) {
  std::vector<MultiIndex> alpha;
  for (int q = 0; q <= K; ++q) enumerate_degree(m, 0, q, MultiIndex{}, &alpha);
  return alpha;
}

int total_degree(const MultiIndex& a) {
  return int(a[0]) + int(a[1]) + int(a[2]) + int(a[3]);
}

JetSpace build_space(int m, int K) {
  JetSpace s;
  s.m = m;
  s.K = K;
  s.alpha = enumerate_all(m, K);
  s.ncoef = static_cast<int>(s.alpha.size());

  for (int v = 0; v < m; ++v) {
    MultiIndex first{};
    first[v] = 1;
    if (K >= 1) s.idx_first[v] = static_cast<std::uint16_t>(s.index_of(first));
    MultiIndex diag{};
    diag[v] = 2;
    if (K >= 2) s.idx_diag2[v] = static_cast<std::uint16_t>(s.index_of(diag));
  }

  // Multiplication table: every ordered pair whose exponent sum stays in the
  // space. Sorted by output index for a deterministic, cache-friendly sweep.
  for (int i = 0; i < s.ncoef; ++i) {
    for (int j = 0; j < s.ncoef; ++j) {
      if (total_degree(s.alpha[i]) + total_degree(s.alpha[j]) > K) continue;
      MultiIndex sum{};
      for (int v = 0; v < 4; ++v)
        sum[v] = static_cast<std::uint8_t>(s.alpha[i][v] + s.alpha[j][v]);
      const int k = s.index_of(sum);
      s.mul.push_back({static_cast<std::uint16_t>(i),
                       static_cast<std::uint16_t>(j),
                       static_cast<std::uint16_t>(k)});
    }
  }
  std::sort(s.mul.begin(), s.mul.end(), [](const auto& a, const auto& b) {
    return std::tie(a.k, a.i, a.j) < std::tie(b.k, b.i, b.j);
  });

  // Derivative-extraction maps into (m, K-1).
  if (K >= 1) {
    const std::vector<MultiIndex> lower = enumerate_all(m, K - 1);
    for (int v = 0; v < m; ++v) {
      s.dsrc[v].resize(lower.size());
      for (std::size_t b = 0; b < lower.size(); ++b) {
        MultiIndex up = lower[b];
        up[v] = static_cast<std::uint8_t>(up[v] + 1);
        s.dsrc[v][b] = {static_cast<std::uint16_t>(s.index_of(up)),
                        double(lower[b][v]) + 1.0};
      }
    }
  }
  return s;
}

void check_same_space(const Jet& a, const Jet& b) {
  if (a.space == nullptr || a.space != b.space)
    throw ArgumentError("jet arithmetic requires operands in the same (m, K) space");
}

}  // namespace

int JetSpace::index_of(const MultiIndex& a) const {
  for (int i = 0; i < ncoef; ++i)
    if (alpha[i] == a) return i;
  return -1;
}

const JetSpace& jet_space(int m, int K) {
  if (m < 1 || m > 4 || K < 0 || K > 3)
    throw ArgumentError("jet_space: m must be in 1..4 and K in 0..3");
  // All 16 spaces are built eagerly on first use; magic statics make this
  // thread-safe and the singleton addresses stable (jets compare spaces by
  // pointer).
  static const std::vector<JetSpace> registry = [] {
    std::vector<JetSpace> all;
    all.reserve(16);
    for (int mm = 1; mm <= 4; ++mm)
      for (int kk = 0; kk <= 3; ++kk) all.push_back(build_space(mm, kk));
    return all;
  }();
  return registry[(m - 1) * 4 + K];
}

double Jet::d2(int v, int w) const {
  if (v == w) return 2.0 * c[space->idx_diag2[v]];
  MultiIndex a{};
  a[v] = 1;
  a[w] = 1;
  return c[space->index_of(a)];
}

double Jet::laplacian(int nvars) const {
  double sum = 0.0;
  for (int v = 0; v < nvars; ++v) sum += 2.0 * c[space->idx_diag2[v]];
  return sum;
}

Jet jet_constant(double value, const JetSpace& space) {
  Jet out;
  out.space = &space;
  out.c[0] = value;
  return out;
}

Jet jet_seed_in(const JetSpace& space, std::span<const double> x, int var_index) {
  if (var_index < 0 || var_index >= space.m)
    throw ArgumentError("jet_seed: var_index out of range");
  if (static_cast<int>(x.size()) != space.m)
    throw ArgumentError("jet_seed: coordinate count does not match space");
  Jet out = jet_constant(x[var_index], space);
  if (space.K >= 1) out.c[space.idx_first[var_index]] = 1.0;
  return out;
}

Jet jet_seed(std::span<const double> x, int var_index, int order) {
  if (order != 2 && order != 3)
    throw ArgumentError("jet_seed: order must be 2 or 3");
  if (x.empty() || x.size() > 4)
    throw ArgumentError("jet_seed: need 1..4 coordinates");
  return jet_seed_in(jet_space(static_cast<int>(x.size()), order), x, var_index);
}

Jet jet_add(const Jet& a, const Jet& b) {
  check_same_space(a, b);
  Jet out = a;
  for (int i = 0; i < a.space->ncoef; ++i) out.c[i] += b.c[i];
  return out;
}

Jet jet_sub(const Jet& a, const Jet& b) {
  check_same_space(a, b);
  Jet out = a;
  for (int i = 0; i < a.space->ncoef; ++i) out.c[i] -= b.c[i];
  return out;
}

Jet jet_neg(const Jet& a) {
  Jet out = a;
  for (int i = 0; i < a.space->ncoef; ++i) out.c[i] = -out.c[i];
  return out;
}

Jet jet_scale(const Jet& a, double s) {
  Jet out = a;
  for (int i = 0; i < a.space->ncoef; ++i) out.c[i] *= s;
  return out;
}

Jet jet_shift(const Jet& a, double s) {
  Jet out = a;
  out.c[0] += s;
  return out;
}

Jet jet_mul(const Jet& a, const Jet& b) {
  check_same_space(a, b);
  Jet out;
  out.space = a.space;
  jet_mul_buf(*a.space, a.c.data(), b.c.data(), out.c.data());
  return out;
}

Jet jet_compose(const Jet& g, const std::array<double, 4>& f_derivs) {
  const JetSpace& s = *g.space;
  Jet out = jet_constant(f_derivs[0], s);
  if (s.K == 0) return out;

  // Nilpotent part of g: same coefficients with the value zeroed. Its powers
  // vanish beyond degree K, making the Taylor composition exact.
  std::array<double, Jet::kMaxCoef> ghat = g.c;
  ghat[0] = 0.0;
  for (int i = 0; i < s.ncoef; ++i) out.c[i] += f_derivs[1] * ghat[i];
  if (s.K >= 2) {
    std::array<double, Jet::kMaxCoef> g2{};
    jet_mul_buf(s, ghat.data(), ghat.data(), g2.data());
    const double h2 = f_derivs[2] / 2.0;
    for (int i = 0; i < s.ncoef; ++i) out.c[i] += h2 * g2[i];
    if (s.K >= 3) {
      std::array<double, Jet::kMaxCoef> g3{};
      jet_mul_buf(s, ghat.data(), g2.data(), g3.data());
      const double h3 = f_derivs[3] / 6.0;
      for (int i = 0; i < s.ncoef; ++i) out.c[i] += h3 * g3[i];
    }
  }
  return out;
}

Jet jet_tanh(const Jet& a) {
  const double t = std::tanh(a.value());
  const double dt = 1.0 - t * t;
  return jet_compose(a, {t, dt, -2.0 * t * dt, -2.0 * dt * (1.0 - 3.0 * t * t)});
}

Jet jet_sin(const Jet& a) {
  const double s = std::sin(a.value());
  const double c = std::cos(a.value());
  return jet_compose(a, {s, c, -s, -c});
}

Jet jet_cos(const Jet& a) {
  const double s = std::sin(a.value());
  const double c = std::cos(a.value());
  return jet_compose(a, {c, -s, -c, s});
}

Jet jet_exp(const Jet& a) {
  const double e = std::exp(a.value());
  return jet_compose(a, {e, e, e, e});
}

Jet jet_deriv(const Jet& a, int v) {
  const JetSpace& s = *a.space;
  if (s.K < 1) throw ArgumentError("jet_deriv: jet order must be >= 1");
  if (v < 0 || v >= s.m) throw ArgumentError("jet_deriv: variable out of range");
  const JetSpace& lower = jet_space(s.m, s.K - 1);
  Jet out;
  out.space = &lower;
  for (int b = 0; b < lower.ncoef; ++b) {
    const auto& e = s.dsrc[v][b];
    out.c[b] = e.factor * a.c[e.src];
  }
  return out;
}

Jet jet_primitive(std::string_view op, std::span<const Jet> args,
                  std::span<const double> extra) {
  const auto need = [&](std::size_t n) {
    if (args.size() != n)
      throw ArgumentError("jet_primitive: wrong arity for primitive");
  };
  if (op == "add") {
    need(2);
    return jet_add(args[0], args[1]);
  }
  if (op == "mul") {
    need(2);
    return jet_mul(args[0], args[1]);
  }
  if (op == "neg") {
    need(1);
    return jet_neg(args[0]);
  }
  if (op == "tanh") {
    need(1);
    return jet_tanh(args[0]);
  }
  if (op == "sin") {
    need(1);
    return jet_sin(args[0]);
  }
  if (op == "cos") {
    need(1);
    return jet_cos(args[0]);
  }
  if (op == "exp") {
    need(1);
    return jet_exp(args[0]);
  }
  if (op == "affine") {
    if (args.empty())
      throw ArgumentError("jet_primitive: affine needs at least one argument");
    if (extra.size() != args.size() + 1)
      throw ArgumentError(
          "jet_primitive: affine needs extra = [c0, w_0, ..., w_{n-1}]");
    for (std::size_t i = 1; i < args.size(); ++i)
      check_same_space(args[0], args[i]);
    Jet out = jet_constant(extra[0], *args[0].space);
    for (std::size_t i = 0; i < args.size(); ++i) {
      for (int k = 0; k < args[0].space->ncoef; ++k)
        out.c[k] += extra[1 + i] * args[i].c[k];
    }
    return out;
  }
  throw ArgumentError("jet_primitive: unknown primitive name");
}

void jet_mul_buf(const JetSpace& space, const double* a, const double* b,
                 double* out) {
  for (int k = 0; k < space.ncoef; ++k) out[k] = 0.0;
  for (const auto& e : space.mul) out[e.k] += a[e.i] * b[e.j];
}

void jet_mul_acc_buf(const JetSpace& space, const double* a, const double* b,
                     double* out) {
  for (const auto& e : space.mul) out[e.k] += a[e.i] * b[e.j];
}

void jet_mul_adj_buf(const JetSpace& space, const double* a,
                     const double* obar, double* bbar) {
  for (const auto& e : space.mul) bbar[e.j] += a[e.i] * obar[e.k];
}

void jet_tanh_buf(const JetSpace& space, double* g, double* dcoef) {
  const double t = std::tanh(g[0]);
  const double dt = 1.0 - t * t;
  Jet tmp;
  tmp.space = &space;
  std::copy(g, g + space.ncoef, tmp.c.begin());
  const Jet res =
      jet_compose(tmp, {t, dt, -2.0 * t * dt, -2.0 * dt * (1.0 - 3.0 * t * t)});
  std::copy(res.c.begin(), res.c.begin() + space.ncoef, g);
  if (dcoef != nullptr) {
    // tanh'(g) = 1 - tanh(g)^2, formed from the already-truncated output so
    // the tangent rule d tanh(g) = D * dg holds exactly in the algebra.
    std::array<double, Jet::kMaxCoef> tt{};
    jet_mul_buf(space, g, g, tt.data());
    for (int i = 0; i < space.ncoef; ++i) dcoef[i] = -tt[i];
    dcoef[0] += 1.0;
  }
}

}  // namespace gnflow
