#include "gnflow/residual.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>

#include "gnflow/errors.hpp"
#include "gnflow/network.hpp"

namespace gnflow {

// ---------------------------------------------------------------------------
// Layout
// ---------------------------------------------------------------------------

std::string_view block_name(BlockKind kind) {
  switch (kind) {
    case BlockKind::momentum: return "momentum";
    case BlockKind::divergence: return "divergence";
    case BlockKind::boundary: return "boundary";
    case BlockKind::initial: return "initial";
  }
  return "unknown";
}

const Block* BlockLayout::find(BlockKind kind) const {
  for (const Block& b : blocks)
    if (b.kind == kind) return &b;
  return nullptr;
}

LossBreakdown loss_breakdown(const ResidualVector& r) {
  if (r.values.size() != r.layout.total)
    throw ArgumentError("loss_breakdown: residual length disagrees with its layout");
  LossBreakdown out;
  for (const Block& b : r.layout.blocks) {
    const double half_sq = 0.5 * r.values.segment(b.offset, b.rows).squaredNorm();
    switch (b.kind) {
      case BlockKind::momentum: out.momentum += half_sq; break;
      case BlockKind::divergence: out.divergence += half_sq; break;
      case BlockKind::boundary: out.boundary += half_sq; break;
      case BlockKind::initial: out.initial += half_sq; break;
    }
    out.total += half_sq;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pointwise residual operators
// ---------------------------------------------------------------------------

namespace {

void check_velocity_jets(std::span<const Jet> u, bool unsteady, int min_order,
                         const char* who) {
  const int d = static_cast<int>(u.size());
  if (d < 2 || d > 3)
    throw ArgumentError(std::string(who) + ": velocity needs 2 or 3 components");
  const JetSpace* s = u[0].space;
  if (s == nullptr) throw ArgumentError(std::string(who) + ": unset jet space");
  if (s->m != d + (unsteady ? 1 : 0))
    throw ArgumentError(std::string(who) +
                        ": jet variable count disagrees with the problem kind");
  if (s->K < min_order)
    throw ArgumentError(std::string(who) + ": velocity jets need order >= " +
                        std::to_string(min_order));
  for (const Jet& j : u)
    if (j.space != s)
      throw ArgumentError(std::string(who) +
                          ": velocity components live in different jet spaces");
}

}  // namespace

std::vector<double> momentum_residual(std::span<const Jet> u, const Jet& p,
                                      double nu, std::span<const double> f,
                                      bool unsteady) {
  check_velocity_jets(u, unsteady, 2, "momentum_residual");
  const int d = static_cast<int>(u.size());
  const int m = u[0].space->m;
  if (p.space == nullptr || p.space->m != m || p.space->K < 1)
    throw ArgumentError("momentum_residual: pressure jet needs order >= 1 in the same variables");
  if (!f.empty() && static_cast<int>(f.size()) != d)
    throw ArgumentError("momentum_residual: forcing must have one value per velocity component");
  std::vector<double> r(d);
  for (int k = 0; k < d; ++k) {
    double val = unsteady ? u[k].d1(m - 1) : 0.0;
    val -= nu * u[k].laplacian(d);
    for (int j = 0; j < d; ++j) val += u[j].value() * u[k].d1(j);
    val += p.d1(k);
    if (!f.empty()) val -= f[k];
    r[k] = val;
  }
  return r;
}

std::vector<double> momentum_residual_tangent(std::span<const Jet> u,
                                              std::span<const Jet> du,
                                              const Jet* dp, double nu,
                                              bool unsteady) {
  check_velocity_jets(u, unsteady, 1, "momentum_residual_tangent");
  const int d = static_cast<int>(u.size());
  const int m = u[0].space->m;
  const bool has_du = !du.empty();
  if (has_du) {
    if (static_cast<int>(du.size()) != d)
      throw ArgumentError("momentum_residual_tangent: velocity tangent component count mismatch");
    check_velocity_jets(du, unsteady, 2, "momentum_residual_tangent");
  }
  if (dp != nullptr && (dp->space == nullptr || dp->space->m != m || dp->space->K < 1))
    throw ArgumentError("momentum_residual_tangent: pressure tangent needs order >= 1");
  std::vector<double> r(d, 0.0);
  for (int k = 0; k < d; ++k) {
    double val = 0.0;
    if (has_du) {
      if (unsteady) val += du[k].d1(m - 1);
      val -= nu * du[k].laplacian(d);
      for (int j = 0; j < d; ++j)
        val += du[j].value() * u[k].d1(j) + u[j].value() * du[k].d1(j);
    }
    if (dp != nullptr) val += dp->d1(k);
    r[k] = val;
  }
  return r;
}

double divergence_residual(std::span<const Jet> u) {
  const int d = static_cast<int>(u.size());
  if (d < 2 || d > 3)
    throw ArgumentError("divergence_residual: velocity needs 2 or 3 components");
  const JetSpace* s = u[0].space;
  if (s == nullptr || s->K < 1)
    throw ArgumentError("divergence_residual: velocity jets need order >= 1");
  if (s->m != d && s->m != d + 1)
    throw ArgumentError("divergence_residual: jet variable count disagrees with the dimension");
  for (const Jet& j : u)
    if (j.space != s)
      throw ArgumentError("divergence_residual: velocity components live in different jet spaces");
  double div = 0.0;
  for (int k = 0; k < d; ++k) div += u[k].d1(k);
  return div;
}

std::vector<double> boundary_residual(std::span<const double> u_value,
                                      std::span<const double> g_value) {
  if (u_value.size() != g_value.size() || u_value.empty())
    throw ArgumentError("boundary_residual: value/data length mismatch");
  std::vector<double> r(u_value.size());
  for (std::size_t k = 0; k < u_value.size(); ++k) r[k] = u_value[k] - g_value[k];
  return r;
}

std::vector<double> initial_residual(std::span<const double> u0_pred,
                                     std::span<const double> u0_true) {
  if (u0_pred.size() != u0_true.size() || u0_pred.empty())
    throw ArgumentError("initial_residual: value/data length mismatch");
  std::vector<double> r(u0_pred.size());
  for (std::size_t k = 0; k < u0_pred.size(); ++k) r[k] = u0_pred[k] - u0_true[k];
  return r;
}

// ---------------------------------------------------------------------------
// Batched network evaluation on jet coefficients
// ---------------------------------------------------------------------------

namespace {

/// Jet coefficients of one batch, one sub-network. Rows of x0 are
/// (point-major) coefficient vectors of the embedded inputs; columns are the
/// embedded coordinates. x0 is parameter-independent and precomputed.
struct NetBatch {
  const JetSpace* space = nullptr;
  int npts = 0;
  Eigen::MatrixXd x0;

  long rows() const { return static_cast<long>(npts) * space->ncoef; }
};

/// Stored forward state of one batch: tanh outputs (inputs of the next
/// layer), the tanh derivative coefficients, and the final affine output.
struct Tape {
  std::vector<Eigen::MatrixXd> hidden_out;
  std::vector<Eigen::MatrixXd> dcoef;
  Eigen::MatrixXd out;
};

const Eigen::MatrixXd& layer_input(const NetBatch& nb, const Tape& tape, int l) {
  return l == 0 ? nb.x0 : tape.hidden_out[l - 1];
}

/// y (bc x out) = x (bc x in) * W^T + bias on value rows. The row-major
/// (out x in) weight buffer doubles as a column-major (in x out) matrix, so
/// a single NoTrans/NoTrans dgemm computes the product for all points and
/// coefficients at once.
void affine_forward(const Eigen::MatrixXd& x, const double* w, const double* b,
                    int in, int out, int npts, int ncoef, Eigen::MatrixXd& y) {
  const int bc = npts * ncoef;
  y.resize(bc, out);
  cblas_dgemm(CblasColMajor, CblasNoTrans, CblasNoTrans, bc, out, in, 1.0,
              x.data(), bc, w, in, 0.0, y.data(), bc);
  for (int o = 0; o < out; ++o) {
    double* col = y.data() + static_cast<std::ptrdiff_t>(o) * bc;
    for (int pt = 0; pt < npts; ++pt) col[static_cast<std::ptrdiff_t>(pt) * ncoef] += b[o];
  }
}

void batch_forward(const NetBatch& nb, const NetLayout& lay,
                   const Eigen::VectorXd& theta, Tape& tape, bool need_tape) {
  tape.hidden_out.clear();
  tape.dcoef.clear();
  const int C = nb.space->ncoef;
  if (nb.npts == 0) {
    tape.out.resize(0, lay.out_dim);
    return;
  }
  const int L = static_cast<int>(lay.layers.size());
  Eigen::MatrixXd scratch;
  const Eigen::MatrixXd* x = &nb.x0;
  for (int l = 0; l < L; ++l) {
    const LayerDims& ld = lay.layers[l];
    Eigen::MatrixXd y;
    affine_forward(*x, theta.data() + ld.w_off, theta.data() + ld.b_off, ld.in,
                   ld.out, nb.npts, C, y);
    if (l + 1 == L) {
      tape.out = std::move(y);
      break;
    }
    const long bc = static_cast<long>(nb.npts) * C;
    Eigen::MatrixXd dc;
    if (need_tape) dc.resize(bc, ld.out);
    for (int o = 0; o < ld.out; ++o)
      for (int pt = 0; pt < nb.npts; ++pt) {
        const std::ptrdiff_t seg = static_cast<std::ptrdiff_t>(o) * bc +
                                   static_cast<std::ptrdiff_t>(pt) * C;
        jet_tanh_buf(*nb.space, y.data() + seg,
                     need_tape ? dc.data() + seg : nullptr);
      }
    if (need_tape) {
      tape.dcoef.push_back(std::move(dc));
      tape.hidden_out.push_back(std::move(y));
      x = &tape.hidden_out.back();
    } else {
      scratch = std::move(y);
      x = &scratch;
    }
  }
}

/// Forward tangent sweep: d(out)/d(theta) . v for every point/coefficient.
Eigen::MatrixXd batch_tangent(const NetBatch& nb, const NetLayout& lay,
                              const Eigen::VectorXd& theta, const Tape& tape,
                              const Eigen::VectorXd& v) {
  const int C = nb.space->ncoef;
  if (nb.npts == 0) return Eigen::MatrixXd(0, lay.out_dim);
  const long bc = static_cast<long>(nb.npts) * C;
  const int L = static_cast<int>(lay.layers.size());
  Eigen::MatrixXd xdot;
  double tmp[Jet::kMaxCoef];
  for (int l = 0; l < L; ++l) {
    const LayerDims& ld = lay.layers[l];
    const Eigen::MatrixXd& x = layer_input(nb, tape, l);
    Eigen::MatrixXd adot(bc, ld.out);
    cblas_dgemm(CblasColMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(bc),
                ld.out, ld.in, 1.0, x.data(), static_cast<int>(bc),
                v.data() + ld.w_off, ld.in, 0.0, adot.data(), static_cast<int>(bc));
    if (l > 0)
      cblas_dgemm(CblasColMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(bc),
                  ld.out, ld.in, 1.0, xdot.data(), static_cast<int>(bc),
                  theta.data() + ld.w_off, ld.in, 1.0, adot.data(),
                  static_cast<int>(bc));
    for (int o = 0; o < ld.out; ++o) {
      const double bdot = v[ld.b_off + o];
      double* col = adot.data() + static_cast<std::ptrdiff_t>(o) * bc;
      for (int pt = 0; pt < nb.npts; ++pt)
        col[static_cast<std::ptrdiff_t>(pt) * C] += bdot;
    }
    if (l + 1 == L) return adot;
    const Eigen::MatrixXd& dmat = tape.dcoef[l];
    for (int o = 0; o < ld.out; ++o)
      for (int pt = 0; pt < nb.npts; ++pt) {
        const std::ptrdiff_t seg = static_cast<std::ptrdiff_t>(o) * bc +
                                   static_cast<std::ptrdiff_t>(pt) * C;
        jet_mul_buf(*nb.space, dmat.data() + seg, adot.data() + seg, tmp);
        std::copy(tmp, tmp + C, adot.data() + seg);
      }
    xdot = std::move(adot);
  }
  return xdot;  // unreachable
}

/// Reverse sweep of one batch for a single combined seed: accumulates
/// J_batch^T w into grad.
void batch_backward(const NetBatch& nb, const NetLayout& lay,
                    const Eigen::VectorXd& theta, const Tape& tape,
                    Eigen::MatrixXd ybar, Eigen::VectorXd& grad) {
  if (nb.npts == 0) return;
  const int C = nb.space->ncoef;
  const long bc = static_cast<long>(nb.npts) * C;
  const int L = static_cast<int>(lay.layers.size());
  Eigen::MatrixXd abar = std::move(ybar);
  for (int l = L - 1; l >= 0; --l) {
    const LayerDims& ld = lay.layers[l];
    const Eigen::MatrixXd& x = layer_input(nb, tape, l);
    // grad_W (row-major out x in, i.e. column-major in x out) += x^T abar.
    cblas_dgemm(CblasColMajor, CblasTrans, CblasNoTrans, ld.in, ld.out,
                static_cast<int>(bc), 1.0, x.data(), static_cast<int>(bc),
                abar.data(), static_cast<int>(bc), 1.0,
                grad.data() + ld.w_off, ld.in);
    for (int o = 0; o < ld.out; ++o) {
      const double* col = abar.data() + static_cast<std::ptrdiff_t>(o) * bc;
      double s = 0.0;
      for (int pt = 0; pt < nb.npts; ++pt)
        s += col[static_cast<std::ptrdiff_t>(pt) * C];
      grad[ld.b_off + o] += s;
    }
    if (l == 0) break;
    Eigen::MatrixXd xbar(bc, ld.in);
    cblas_dgemm(CblasColMajor, CblasNoTrans, CblasTrans, static_cast<int>(bc),
                ld.in, ld.out, 1.0, abar.data(), static_cast<int>(bc),
                theta.data() + ld.w_off, ld.in, 0.0, xbar.data(),
                static_cast<int>(bc));
    Eigen::MatrixXd prev = Eigen::MatrixXd::Zero(bc, ld.in);
    const Eigen::MatrixXd& dmat = tape.dcoef[l - 1];
    for (int i = 0; i < ld.in; ++i)
      for (int pt = 0; pt < nb.npts; ++pt) {
        const std::ptrdiff_t seg = static_cast<std::ptrdiff_t>(i) * bc +
                                   static_cast<std::ptrdiff_t>(pt) * C;
        jet_mul_adj_buf(*nb.space, dmat.data() + seg, xbar.data() + seg,
                        prev.data() + seg);
      }
    abar = std::move(prev);
  }
}

/// Row-major seed matrix whose row (pt * nseeds + s) holds, from column
/// col0 on, the output-coefficient cotangent of seed s at point pt in
/// (output o, coefficient c) order.
struct SeedView {
  const double* data = nullptr;
  std::ptrdiff_t stride = 0;  ///< row stride of the seed matrix
  int col0 = 0;

  double at(int pt, int nseeds, int s, int o, int C, int c) const {
    return data[(static_cast<std::ptrdiff_t>(pt) * nseeds + s) * stride + col0 +
                static_cast<std::ptrdiff_t>(o) * C + c];
  }
};

/// Multi-seed reverse sweep filling whole Jacobian rows: every point carries
/// `nseeds` independent cotangents. Cotangent propagation through the layers
/// runs batched per seed (one dgemm per layer and seed); the per-point
/// weight cotangents are small strided products written straight into the
/// row-major Jacobian, whose weight segments are column-major (in x out)
/// views by the parameter layout. Points are processed in chunks to bound
/// scratch memory.
template <typename RowOf>
void jac_backward(const NetBatch& nb, const NetLayout& lay,
                  const Eigen::VectorXd& theta, const Tape& tape, int nseeds,
                  const SeedView& seeds, const RowOf& row_of, RowMatrixXd& J) {
  if (nb.npts == 0 || nseeds == 0) return;
  const int C = nb.space->ncoef;
  const long bc = static_cast<long>(nb.npts) * C;
  const int L = static_cast<int>(lay.layers.size());
  const std::ptrdiff_t pcols = J.cols();

  int maxdim = 0;
  for (const LayerDims& ld : lay.layers) maxdim = std::max({maxdim, ld.in, ld.out});
  const long per_pt = static_cast<long>(C) * maxdim * nseeds * 3 * 8;
  const long scratch_budget = 256L << 20;
  const int chunk = static_cast<int>(
      std::clamp(scratch_budget / std::max(per_pt, 1L), 1L, static_cast<long>(nb.npts)));

  using StridedMap =
      Eigen::Map<const Eigen::MatrixXd, 0, Eigen::OuterStride<>>;
  for (int pt0 = 0; pt0 < nb.npts; pt0 += chunk) {
    const int n = std::min(chunk, nb.npts - pt0);
    const long bcc = static_cast<long>(n) * C;
    const int out_last = lay.layers[L - 1].out;
    Eigen::MatrixXd abar(bcc, static_cast<long>(out_last) * nseeds);
    for (int s = 0; s < nseeds; ++s)
      for (int o = 0; o < out_last; ++o) {
        double* col = abar.data() + (static_cast<std::ptrdiff_t>(s) * out_last + o) * bcc;
        for (int pl = 0; pl < n; ++pl)
          for (int c = 0; c < C; ++c)
            col[static_cast<std::ptrdiff_t>(pl) * C + c] =
                seeds.at(pt0 + pl, nseeds, s, o, C, c);
      }
    for (int l = L - 1; l >= 0; --l) {
      const LayerDims& ld = lay.layers[l];
      const Eigen::MatrixXd& x = layer_input(nb, tape, l);
      for (int pl = 0; pl < n; ++pl) {
        const int pt = pt0 + pl;
        StridedMap xp(x.data() + static_cast<std::ptrdiff_t>(pt) * C, C, ld.in,
                      Eigen::OuterStride<>(bc));
        for (int s = 0; s < nseeds; ++s) {
          StridedMap aps(abar.data() +
                             static_cast<std::ptrdiff_t>(s) * ld.out * bcc +
                             static_cast<std::ptrdiff_t>(pl) * C,
                         C, ld.out, Eigen::OuterStride<>(bcc));
          double* jrow = J.data() + static_cast<std::ptrdiff_t>(row_of(pt, s)) * pcols;
          Eigen::Map<Eigen::MatrixXd> wbar(jrow + ld.w_off, ld.in, ld.out);
          wbar.noalias() += xp.transpose() * aps;
          double* brow = jrow + ld.b_off;
          for (int o = 0; o < ld.out; ++o) brow[o] += aps(0, o);
        }
      }
      if (l == 0) break;
      Eigen::MatrixXd xbar(bcc, static_cast<long>(ld.in) * nseeds);
      for (int s = 0; s < nseeds; ++s)
        cblas_dgemm(CblasColMajor, CblasNoTrans, CblasTrans,
                    static_cast<int>(bcc), ld.in, ld.out, 1.0,
                    abar.data() + static_cast<std::ptrdiff_t>(s) * ld.out * bcc,
                    static_cast<int>(bcc), theta.data() + ld.w_off, ld.in, 0.0,
                    xbar.data() + static_cast<std::ptrdiff_t>(s) * ld.in * bcc,
                    static_cast<int>(bcc));
      Eigen::MatrixXd prev =
          Eigen::MatrixXd::Zero(bcc, static_cast<long>(ld.in) * nseeds);
      const Eigen::MatrixXd& dmat = tape.dcoef[l - 1];
      for (int s = 0; s < nseeds; ++s)
        for (int i = 0; i < ld.in; ++i)
          for (int pl = 0; pl < n; ++pl) {
            const std::ptrdiff_t seg =
                (static_cast<std::ptrdiff_t>(s) * ld.in + i) * bcc +
                static_cast<std::ptrdiff_t>(pl) * C;
            jet_mul_adj_buf(*nb.space,
                            dmat.data() + static_cast<std::ptrdiff_t>(i) * bc +
                                static_cast<std::ptrdiff_t>(pt0 + pl) * C,
                            xbar.data() + seg, prev.data() + seg);
          }
      abar = std::move(prev);
    }
  }
}

Jet zero_jet(const JetSpace& space) {
  Jet j;
  j.space = &space;
  j.c.fill(0.0);
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// Assembly implementation
// ---------------------------------------------------------------------------

struct ResidualAssembly::Forward {
  const ResidualAssembly::Impl* owner = nullptr;
  Eigen::VectorXd theta;
  bool has_tape = false;
  Tape t_iv, t_ip, t_bv, t_0v;
  std::vector<Jet> u_hat;  ///< wrapped interior velocity, d jets per point
  std::vector<Jet> p_hat;  ///< interior pressure, one jet per point
  /// Per-point residual Jacobian w.r.t. raw network output coefficients:
  /// row (pt * rows_int + s), columns [velocity (o, c) | pressure (c)],
  /// block scales folded in.
  RowMatrixXd s_int;
  ResidualVector res;
};

void ResidualAssembly::ForwardDeleter::operator()(Forward* f) const { delete f; }

struct ResidualAssembly::Impl {
  FlowProblem prob;
  CollocationSet pts;
  Topology topo;
  NetLayout lay_v, lay_p;
  std::ptrdiff_t pcount = 0;
  BlockLayout layout;

  bool divfree = false, exact_ic = false, unsteady = false;
  bool has_div = false, has_bnd = false, has_init = false;
  int d = 0, m = 0;
  const JetSpace* sv = nullptr;     ///< interior velocity space (m, 3 or 2)
  const JetSpace* swrap = nullptr;  ///< wrapped velocity space (m, 2)
  const JetSpace* sp = nullptr;     ///< pressure space (m, 1)
  const JetSpace* sb = nullptr;     ///< boundary/initial space (m, 1 or 0)

  NetBatch b_iv, b_ip, b_bv, b_0v;

  std::vector<double> f_int;    ///< forcing, d per interior point
  std::vector<Jet> g_int;       ///< exact-initial trace jets, d per point
  std::vector<Jet> ell_int;     ///< exact-initial time multiplier per point
  std::vector<double> g_bnd;    ///< boundary data, d per boundary point
  std::vector<double> g0_bnd;   ///< exact-initial trace values on the boundary
  std::vector<double> ell_bnd;  ///< t - t0 per boundary point
  std::vector<double> u0_init;  ///< initial data, d per initial point

  RowMatrixXd s_bnd;   ///< parameter-independent boundary seeds
  RowMatrixXd s_init;  ///< parameter-independent initial seeds

  std::size_t budget = static_cast<std::size_t>(8) << 30;

  int rows_int() const { return d + (has_div ? 1 : 0); }
  int ncols_int() const { return topo.velocity_output * sv->ncoef + sp->ncoef; }

  void validate() const;
  void setup();
  void fill_x0(NetBatch& nb, const PointSet& set, const JetSpace& space) const;
  void build_surface_seeds(const PointSet& set, double scale, bool with_ell,
                           RowMatrixXd& s) const;
  std::vector<Jet> wrap_interior(int pt, std::span<const Jet> raw) const;
  std::vector<Jet> wrap_interior_tangent(int pt, std::span<const Jet> draw) const;
  void check_params(const FlatParams& params) const;
  void run_forward(Forward& f, const FlatParams& params, bool need_tape) const;
  void surface_values(const Tape& tape, const PointSet& set, bool with_ell,
                      int pt, double* uval) const;
};

void ResidualAssembly::Impl::validate() const {
  if (prob.dim != 2 && prob.dim != 3)
    throw ArgumentError("assembly: problem dimension must be 2 or 3");
  if (topo.dim != prob.dim || topo.unsteady != prob.unsteady)
    throw ArgumentError("assembly: topology dimension/kind disagrees with the problem");
  validate_constraint_mode(prob.constraints, prob.unsteady);
  const ConstraintMode& cm = prob.constraints;
  if (topo.embedding.periodic != cm.periodic)
    throw ConfigError("assembly: topology embedding disagrees with the periodic constraint");
  if (cm.periodic)
    for (int j = 0; j < prob.dim; ++j)
      if (topo.embedding.periods[j] != cm.periods[j])
        throw ConfigError("assembly: embedding periods disagree with the constraint mode");
  const int want_out = cm.divergence_free ? (prob.dim == 2 ? 1 : 3) : prob.dim;
  if (topo.velocity_output != want_out)
    throw ConfigError("assembly: velocity output width " +
                      std::to_string(topo.velocity_output) + " does not fit the ansatz (want " +
                      std::to_string(want_out) + ")");
  if (topo.activation != "tanh")
    throw ArgumentError("assembly: unsupported activation '" + topo.activation + "'");

  if (pts.interior.count() <= 0)
    throw ArgumentError("assembly: at least one interior collocation point is required");
  const int idim = prob.input_dim();
  auto check_stride = [&](const PointSet& s, const char* who) {
    if (s.count() > 0 && s.stride != idim)
      throw ArgumentError(std::string("assembly: ") + who +
                          " point stride disagrees with the problem input dimension");
  };
  check_stride(pts.interior, "interior");
  check_stride(pts.boundary, "boundary");
  check_stride(pts.initial, "initial");

  if (cm.boundary_soft && pts.boundary.count() == 0)
    throw ArgumentError("assembly: soft boundary conditions need boundary collocation points");
  if (!cm.boundary_soft && pts.boundary.count() > 0)
    throw ArgumentError("assembly: boundary points supplied but the boundary condition is hard");
  const bool want_init = prob.unsteady && !cm.exact_initial;
  if (want_init && pts.initial.count() == 0)
    throw ArgumentError("assembly: soft initial conditions need initial collocation points");
  if (!want_init && pts.initial.count() > 0)
    throw ArgumentError("assembly: initial points supplied but the initial condition is exact");

  if (cm.boundary_soft && !prob.boundary_data)
    throw ConfigError("assembly: soft boundary conditions need boundary data");
  if (want_init && !prob.initial_data)
    throw ConfigError("assembly: soft initial conditions need initial data");
  if (cm.exact_initial && !prob.solution_jets)
    throw ConfigError("assembly: the exact-initial ansatz needs the initial trace in jet form");
  if (cm.exact_initial && cm.boundary_soft && !prob.initial_data)
    throw ConfigError("assembly: exact-initial boundary values need initial data");
}

void ResidualAssembly::Impl::fill_x0(NetBatch& nb, const PointSet& set,
                                     const JetSpace& space) const {
  nb.space = &space;
  nb.npts = set.count();
  const int C = space.ncoef;
  const int e = topo.embedded_dim();
  nb.x0.resize(static_cast<long>(nb.npts) * C, e);
  for (int pt = 0; pt < nb.npts; ++pt) {
    const std::vector<Jet> emb = embed_point(topo, set.point(pt), space);
    for (int j = 0; j < e; ++j)
      for (int c = 0; c < C; ++c)
        nb.x0(static_cast<long>(pt) * C + c, j) = emb[j].c[c];
  }
}

void ResidualAssembly::Impl::build_surface_seeds(const PointSet& set, double scale,
                                                 bool with_ell, RowMatrixXd& s) const {
  const int n = set.count();
  const int out_v = topo.velocity_output;
  const int Cb = sb->ncoef;
  s.resize(static_cast<long>(n) * d, static_cast<long>(out_v) * Cb);
  if (n == 0) return;
  s.setZero();
  std::vector<Jet> basis(out_v, zero_jet(*sb));
  std::vector<double> dv(d);
  for (int o = 0; o < out_v; ++o)
    for (int c = 0; c < Cb; ++c) {
      basis[o].c[c] = 1.0;
      if (divfree) {
        dv = potential_velocity_values(basis, d);
      } else {
        for (int k = 0; k < d; ++k) dv[k] = basis[k].value();
      }
      basis[o].c[c] = 0.0;
      for (int pt = 0; pt < n; ++pt) {
        const double fac = scale * (with_ell ? ell_bnd[pt] : 1.0);
        for (int k = 0; k < d; ++k)
          s(static_cast<long>(pt) * d + k, static_cast<long>(o) * Cb + c) = fac * dv[k];
      }
    }
}

void ResidualAssembly::Impl::setup() {
  d = prob.dim;
  m = prob.input_dim();
  unsteady = prob.unsteady;
  divfree = prob.constraints.divergence_free;
  exact_ic = prob.constraints.exact_initial;
  has_div = !divfree;
  has_bnd = prob.constraints.boundary_soft && pts.boundary.count() > 0;
  has_init = unsteady && !exact_ic && pts.initial.count() > 0;

  lay_v = net_layout(topo, NetId::velocity);
  lay_p = net_layout(topo, NetId::pressure);
  pcount = param_count(topo);

  sv = &jet_space(m, divfree ? 3 : 2);
  swrap = &jet_space(m, 2);
  sp = &jet_space(m, 1);
  sb = &jet_space(m, divfree ? 1 : 0);

  const int ni = pts.interior.count();
  int off = 0;
  auto add_block = [&](BlockKind kind, int rows_per_point, int count) {
    Block b;
    b.kind = kind;
    b.offset = off;
    b.rows_per_point = rows_per_point;
    b.point_count = count;
    b.rows = rows_per_point * count;
    b.scale = 1.0 / std::sqrt(static_cast<double>(count));
    off += b.rows;
    layout.blocks.push_back(b);
  };
  add_block(BlockKind::momentum, d, ni);
  if (has_div) add_block(BlockKind::divergence, 1, ni);
  if (has_bnd) add_block(BlockKind::boundary, d, pts.boundary.count());
  if (has_init) add_block(BlockKind::initial, d, pts.initial.count());
  layout.total = off;

  fill_x0(b_iv, pts.interior, *sv);
  fill_x0(b_ip, pts.interior, *sp);
  fill_x0(b_bv, pts.boundary, *sb);
  fill_x0(b_0v, pts.initial, *sb);

  // Forcing values (zero when the problem defines none).
  f_int.assign(static_cast<std::size_t>(ni) * d, 0.0);
  if (prob.forcing)
    for (int pt = 0; pt < ni; ++pt)
      prob.forcing(pts.interior.point(pt), {f_int.data() + static_cast<std::size_t>(pt) * d,
                                            static_cast<std::size_t>(d)});

  const double t0 = prob.time_interval[0];
  if (exact_ic) {
    // Initial trace g as a time-constant jet: the t0 slice of the solution
    // with every time-bearing coefficient removed.
    g_int.resize(static_cast<std::size_t>(ni) * d);
    ell_int.resize(ni);
    std::vector<double> q(m);
    for (int pt = 0; pt < ni; ++pt) {
      const std::span<const double> x = pts.interior.point(pt);
      std::copy(x.begin(), x.end(), q.begin());
      q[m - 1] = t0;
      std::vector<Jet> js = prob.solution_jets(q, 2);
      for (int k = 0; k < d; ++k) {
        Jet g = js[k];
        for (int c = 0; c < swrap->ncoef; ++c)
          if (swrap->alpha[c][m - 1] != 0) g.c[c] = 0.0;
        g_int[static_cast<std::size_t>(pt) * d + k] = g;
      }
      Jet ell = jet_seed_in(*swrap, x, m - 1);
      ell.c[0] -= t0;
      ell_int[pt] = ell;
    }
  }

  if (has_bnd) {
    const int nbp = pts.boundary.count();
    g_bnd.resize(static_cast<std::size_t>(nbp) * d);
    for (int pt = 0; pt < nbp; ++pt)
      prob.boundary_data(pts.boundary.point(pt),
                         {g_bnd.data() + static_cast<std::size_t>(pt) * d,
                          static_cast<std::size_t>(d)});
    if (exact_ic) {
      g0_bnd.resize(static_cast<std::size_t>(nbp) * d);
      ell_bnd.resize(nbp);
      std::vector<double> q(m);
      for (int pt = 0; pt < nbp; ++pt) {
        const std::span<const double> x = pts.boundary.point(pt);
        std::copy(x.begin(), x.end(), q.begin());
        q[m - 1] = t0;
        prob.initial_data(q, {g0_bnd.data() + static_cast<std::size_t>(pt) * d,
                              static_cast<std::size_t>(d)});
        ell_bnd[pt] = x[m - 1] - t0;
      }
    }
    build_surface_seeds(pts.boundary, layout.find(BlockKind::boundary)->scale,
                        exact_ic, s_bnd);
  }

  if (has_init) {
    const int n0 = pts.initial.count();
    u0_init.resize(static_cast<std::size_t>(n0) * d);
    for (int pt = 0; pt < n0; ++pt)
      prob.initial_data(pts.initial.point(pt),
                        {u0_init.data() + static_cast<std::size_t>(pt) * d,
                         static_cast<std::size_t>(d)});
    build_surface_seeds(pts.initial, layout.find(BlockKind::initial)->scale,
                        false, s_init);
  }
}

std::vector<Jet> ResidualAssembly::Impl::wrap_interior(int pt,
                                                       std::span<const Jet> raw) const {
  std::vector<Jet> u;
  if (divfree)
    u = divergence_free_wrap(raw, d);
  else
    u.assign(raw.begin(), raw.end());
  if (exact_ic) {
    const std::span<const Jet> g{g_int.data() + static_cast<std::size_t>(pt) * d,
                                 static_cast<std::size_t>(d)};
    u = ic_wrap(u, ell_int[pt], g);
  }
  return u;
}

std::vector<Jet> ResidualAssembly::Impl::wrap_interior_tangent(
    int pt, std::span<const Jet> draw) const {
  std::vector<Jet> du;
  if (divfree)
    du = divergence_free_wrap(draw, d);
  else
    du.assign(draw.begin(), draw.end());
  if (exact_ic)
    for (Jet& j : du) j = jet_mul(ell_int[pt], j);
  return du;
}

void ResidualAssembly::Impl::check_params(const FlatParams& params) const {
  const Topology& t = params.topology;
  const bool same = t.dim == topo.dim && t.unsteady == topo.unsteady &&
                    t.embedding.periodic == topo.embedding.periodic &&
                    t.hidden_velocity == topo.hidden_velocity &&
                    t.hidden_pressure == topo.hidden_pressure &&
                    t.velocity_output == topo.velocity_output &&
                    t.activation == topo.activation;
  if (!same || params.values.size() != pcount)
    throw ArgumentError("assembly: parameter topology does not match the assembly topology");
}

void ResidualAssembly::Impl::surface_values(const Tape& tape, const PointSet& set,
                                            bool with_ell, int pt, double* uval) const {
  const int out_v = topo.velocity_output;
  const int Cb = sb->ncoef;
  const long bc = static_cast<long>(set.count()) * Cb;
  if (divfree) {
    std::vector<Jet> raw(out_v, zero_jet(*sb));
    for (int o = 0; o < out_v; ++o) {
      const double* src = tape.out.data() + static_cast<std::ptrdiff_t>(o) * bc +
                          static_cast<std::ptrdiff_t>(pt) * Cb;
      std::copy(src, src + Cb, raw[o].c.begin());
    }
    const std::vector<double> v = potential_velocity_values(raw, d);
    std::copy(v.begin(), v.end(), uval);
  } else {
    for (int k = 0; k < d; ++k)
      uval[k] = tape.out(static_cast<long>(pt) * Cb, k);
  }
  if (exact_ic) {
    const double ell = with_ell ? ell_bnd[pt] : 0.0;
    for (int k = 0; k < d; ++k)
      uval[k] = g0_bnd[static_cast<std::size_t>(pt) * d + k] + ell * uval[k];
  }
}

void ResidualAssembly::Impl::run_forward(Forward& f, const FlatParams& params,
                                         bool need_tape) const {
  check_params(params);
  f.theta = params.values;
  f.has_tape = need_tape;
  batch_forward(b_iv, lay_v, f.theta, f.t_iv, need_tape);
  batch_forward(b_ip, lay_p, f.theta, f.t_ip, need_tape);
  batch_forward(b_bv, lay_v, f.theta, f.t_bv, need_tape);
  batch_forward(b_0v, lay_v, f.theta, f.t_0v, need_tape);

  f.res.layout = layout;
  f.res.values.resize(layout.total);

  const Block* mb = layout.find(BlockKind::momentum);
  const Block* db = layout.find(BlockKind::divergence);
  const Block* bb = layout.find(BlockKind::boundary);
  const Block* ib = layout.find(BlockKind::initial);

  const int ni = pts.interior.count();
  const int out_v = topo.velocity_output;
  const int Cv = sv->ncoef;
  const int Cp = sp->ncoef;
  const long bcv = static_cast<long>(ni) * Cv;
  const int rint = rows_int();

  if (need_tape) {
    f.u_hat.resize(static_cast<std::size_t>(ni) * d);
    f.p_hat.resize(ni);
    f.s_int.resize(static_cast<long>(ni) * rint, ncols_int());
    f.s_int.setZero();
  }

  std::vector<Jet> raw(out_v, zero_jet(*sv));
  std::vector<Jet> draw(out_v, zero_jet(*sv));
  for (int pt = 0; pt < ni; ++pt) {
    for (int o = 0; o < out_v; ++o) {
      const double* src = f.t_iv.out.data() + static_cast<std::ptrdiff_t>(o) * bcv +
                          static_cast<std::ptrdiff_t>(pt) * Cv;
      std::copy(src, src + Cv, raw[o].c.begin());
    }
    const std::vector<Jet> u = wrap_interior(pt, raw);
    Jet p = zero_jet(*sp);
    {
      const double* src = f.t_ip.out.data() + static_cast<std::ptrdiff_t>(pt) * Cp;
      std::copy(src, src + Cp, p.c.begin());
    }
    const std::vector<double> mom = momentum_residual(
        u, p, prob.viscosity,
        {f_int.data() + static_cast<std::size_t>(pt) * d, static_cast<std::size_t>(d)},
        unsteady);
    for (int k = 0; k < d; ++k)
      f.res.values[mb->offset + static_cast<long>(pt) * d + k] = mb->scale * mom[k];
    if (db != nullptr)
      f.res.values[db->offset + pt] = db->scale * divergence_residual(u);

    if (!need_tape) continue;
    for (int k = 0; k < d; ++k) f.u_hat[static_cast<std::size_t>(pt) * d + k] = u[k];
    f.p_hat[pt] = p;
    const long r0 = static_cast<long>(pt) * rint;
    for (int o = 0; o < out_v; ++o)
      for (int c = 0; c < Cv; ++c) {
        draw[o].c[c] = 1.0;
        const std::vector<Jet> du = wrap_interior_tangent(pt, draw);
        draw[o].c[c] = 0.0;
        const std::vector<double> dm =
            momentum_residual_tangent(u, du, nullptr, prob.viscosity, unsteady);
        const long col = static_cast<long>(o) * Cv + c;
        for (int k = 0; k < d; ++k) f.s_int(r0 + k, col) = mb->scale * dm[k];
        if (db != nullptr) f.s_int(r0 + d, col) = db->scale * divergence_residual(du);
      }
    for (int k = 0; k < d; ++k)
      f.s_int(r0 + k, static_cast<long>(out_v) * Cv + sp->idx_first[k]) = mb->scale;
  }

  std::vector<double> uval(d);
  if (bb != nullptr)
    for (int pt = 0; pt < bb->point_count; ++pt) {
      surface_values(f.t_bv, pts.boundary, true, pt, uval.data());
      for (int k = 0; k < d; ++k)
        f.res.values[bb->offset + static_cast<long>(pt) * d + k] =
            bb->scale * (uval[k] - g_bnd[static_cast<std::size_t>(pt) * d + k]);
    }
  if (ib != nullptr)
    for (int pt = 0; pt < ib->point_count; ++pt) {
      surface_values(f.t_0v, pts.initial, false, pt, uval.data());
      for (int k = 0; k < d; ++k)
        f.res.values[ib->offset + static_cast<long>(pt) * d + k] =
            ib->scale * (uval[k] - u0_init[static_cast<std::size_t>(pt) * d + k]);
    }

  for (const Block& b : layout.blocks)
    for (int i = 0; i < b.rows; ++i)
      if (!std::isfinite(f.res.values[b.offset + i]))
        throw NumericalError(std::string(block_name(b.kind)) +
                             " residual is non-finite at point " +
                             std::to_string(i / b.rows_per_point));
}

// ---------------------------------------------------------------------------
// Public interface
// ---------------------------------------------------------------------------

ResidualAssembly::ResidualAssembly(FlowProblem problem, CollocationSet colloc,
                                   Topology topology)
    : impl_(std::make_unique<Impl>()) {
  impl_->prob = std::move(problem);
  impl_->pts = std::move(colloc);
  impl_->topo = std::move(topology);
  impl_->validate();
  impl_->setup();
}

ResidualAssembly::~ResidualAssembly() = default;
ResidualAssembly::ResidualAssembly(ResidualAssembly&&) noexcept = default;
ResidualAssembly& ResidualAssembly::operator=(ResidualAssembly&&) noexcept = default;

const FlowProblem& ResidualAssembly::problem() const { return impl_->prob; }
const CollocationSet& ResidualAssembly::collocation() const { return impl_->pts; }
const Topology& ResidualAssembly::topology() const { return impl_->topo; }
const BlockLayout& ResidualAssembly::layout() const { return impl_->layout; }
int ResidualAssembly::residual_size() const { return impl_->layout.total; }
int ResidualAssembly::parameter_count() const {
  return static_cast<int>(impl_->pcount);
}

void ResidualAssembly::set_jacobian_budget_bytes(std::size_t bytes) {
  impl_->budget = bytes;
}

ResidualAssembly::ForwardPtr ResidualAssembly::forward(const FlatParams& params,
                                                       bool need_tape) const {
  ForwardPtr f(new Forward);
  f->owner = impl_.get();
  impl_->run_forward(*f, params, need_tape);
  return f;
}

namespace {

void check_forward_state(const void* impl, const void* owner, bool has_tape,
                         bool want_tape) {
  if (owner != impl)
    throw ArgumentError("assembly: the forward state belongs to a different assembly");
  if (want_tape && !has_tape)
    throw ArgumentError("assembly: this operation needs a taped forward; call forward(params, true)");
}

}  // namespace

const ResidualVector& ResidualAssembly::residual(const Forward& fwd) const {
  check_forward_state(impl_.get(), fwd.owner, fwd.has_tape, false);
  return fwd.res;
}

std::span<const Jet> ResidualAssembly::interior_velocity(const Forward& fwd) const {
  check_forward_state(impl_.get(), fwd.owner, fwd.has_tape, true);
  return {fwd.u_hat.data(), fwd.u_hat.size()};
}

Eigen::VectorXd ResidualAssembly::jvp(const Forward& fwd,
                                      const Eigen::VectorXd& v) const {
  const Impl& im = *impl_;
  check_forward_state(impl_.get(), fwd.owner, fwd.has_tape, true);
  if (v.size() != im.pcount)
    throw ArgumentError("jvp: tangent length disagrees with the parameter count");

  const Eigen::MatrixXd ov = batch_tangent(im.b_iv, im.lay_v, fwd.theta, fwd.t_iv, v);
  const Eigen::MatrixXd op = batch_tangent(im.b_ip, im.lay_p, fwd.theta, fwd.t_ip, v);
  const Eigen::MatrixXd ob = batch_tangent(im.b_bv, im.lay_v, fwd.theta, fwd.t_bv, v);
  const Eigen::MatrixXd o0 = batch_tangent(im.b_0v, im.lay_v, fwd.theta, fwd.t_0v, v);

  Eigen::VectorXd out = Eigen::VectorXd::Zero(im.layout.total);
  const Block* mbk = im.layout.find(BlockKind::momentum);
  const Block* dbk = im.layout.find(BlockKind::divergence);
  const Block* bbk = im.layout.find(BlockKind::boundary);
  const Block* ibk = im.layout.find(BlockKind::initial);

  const int ni = im.pts.interior.count();
  const int out_v = im.topo.velocity_output;
  const int Cv = im.sv->ncoef, Cp = im.sp->ncoef;
  const int rint = im.rows_int();
  Eigen::VectorXd sig(im.ncols_int());
  for (int pt = 0; pt < ni; ++pt) {
    for (int o = 0; o < out_v; ++o)
      for (int c = 0; c < Cv; ++c)
        sig[static_cast<long>(o) * Cv + c] = ov(static_cast<long>(pt) * Cv + c, o);
    for (int c = 0; c < Cp; ++c)
      sig[static_cast<long>(out_v) * Cv + c] = op(static_cast<long>(pt) * Cp + c, 0);
    const Eigen::VectorXd rdot =
        fwd.s_int.middleRows(static_cast<long>(pt) * rint, rint) * sig;
    for (int k = 0; k < im.d; ++k)
      out[mbk->offset + static_cast<long>(pt) * im.d + k] = rdot[k];
    if (dbk != nullptr) out[dbk->offset + pt] = rdot[im.d];
  }

  const int Cb = im.sb->ncoef;
  if (bbk != nullptr) {
    Eigen::VectorXd sigb(static_cast<long>(out_v) * Cb);
    for (int pt = 0; pt < bbk->point_count; ++pt) {
      for (int o = 0; o < out_v; ++o)
        for (int c = 0; c < Cb; ++c)
          sigb[static_cast<long>(o) * Cb + c] = ob(static_cast<long>(pt) * Cb + c, o);
      const Eigen::VectorXd rdot =
          im.s_bnd.middleRows(static_cast<long>(pt) * im.d, im.d) * sigb;
      for (int k = 0; k < im.d; ++k)
        out[bbk->offset + static_cast<long>(pt) * im.d + k] = rdot[k];
    }
  }
  if (ibk != nullptr) {
    Eigen::VectorXd sig0(static_cast<long>(out_v) * Cb);
    for (int pt = 0; pt < ibk->point_count; ++pt) {
      for (int o = 0; o < out_v; ++o)
        for (int c = 0; c < Cb; ++c)
          sig0[static_cast<long>(o) * Cb + c] = o0(static_cast<long>(pt) * Cb + c, o);
      const Eigen::VectorXd rdot =
          im.s_init.middleRows(static_cast<long>(pt) * im.d, im.d) * sig0;
      for (int k = 0; k < im.d; ++k)
        out[ibk->offset + static_cast<long>(pt) * im.d + k] = rdot[k];
    }
  }
  return out;
}

Eigen::VectorXd ResidualAssembly::vjp(const Forward& fwd,
                                      const Eigen::VectorXd& w) const {
  const Impl& im = *impl_;
  check_forward_state(impl_.get(), fwd.owner, fwd.has_tape, true);
  if (w.size() != im.layout.total)
    throw ArgumentError("vjp: cotangent length disagrees with the residual size");

  const int ni = im.pts.interior.count();
  const int out_v = im.topo.velocity_output;
  const int Cv = im.sv->ncoef, Cp = im.sp->ncoef, Cb = im.sb->ncoef;
  const int rint = im.rows_int();
  const Block* mbk = im.layout.find(BlockKind::momentum);
  const Block* dbk = im.layout.find(BlockKind::divergence);
  const Block* bbk = im.layout.find(BlockKind::boundary);
  const Block* ibk = im.layout.find(BlockKind::initial);

  Eigen::MatrixXd ybar_iv = Eigen::MatrixXd::Zero(im.b_iv.rows(), out_v);
  Eigen::MatrixXd ybar_ip = Eigen::MatrixXd::Zero(im.b_ip.rows(), 1);
  Eigen::MatrixXd ybar_bv = Eigen::MatrixXd::Zero(im.b_bv.rows(), out_v);
  Eigen::MatrixXd ybar_0v = Eigen::MatrixXd::Zero(im.b_0v.rows(), out_v);

  Eigen::VectorXd wr(rint);
  for (int pt = 0; pt < ni; ++pt) {
    for (int k = 0; k < im.d; ++k)
      wr[k] = w[mbk->offset + static_cast<long>(pt) * im.d + k];
    if (dbk != nullptr) wr[im.d] = w[dbk->offset + pt];
    const Eigen::VectorXd sig =
        fwd.s_int.middleRows(static_cast<long>(pt) * rint, rint).transpose() * wr;
    for (int o = 0; o < out_v; ++o)
      for (int c = 0; c < Cv; ++c)
        ybar_iv(static_cast<long>(pt) * Cv + c, o) += sig[static_cast<long>(o) * Cv + c];
    for (int c = 0; c < Cp; ++c)
      ybar_ip(static_cast<long>(pt) * Cp + c, 0) += sig[static_cast<long>(out_v) * Cv + c];
  }
  if (bbk != nullptr) {
    Eigen::VectorXd wb(im.d);
    for (int pt = 0; pt < bbk->point_count; ++pt) {
      for (int k = 0; k < im.d; ++k)
        wb[k] = w[bbk->offset + static_cast<long>(pt) * im.d + k];
      const Eigen::VectorXd sig =
          im.s_bnd.middleRows(static_cast<long>(pt) * im.d, im.d).transpose() * wb;
      for (int o = 0; o < out_v; ++o)
        for (int c = 0; c < Cb; ++c)
          ybar_bv(static_cast<long>(pt) * Cb + c, o) += sig[static_cast<long>(o) * Cb + c];
    }
  }
  if (ibk != nullptr) {
    Eigen::VectorXd w0(im.d);
    for (int pt = 0; pt < ibk->point_count; ++pt) {
      for (int k = 0; k < im.d; ++k)
        w0[k] = w[ibk->offset + static_cast<long>(pt) * im.d + k];
      const Eigen::VectorXd sig =
          im.s_init.middleRows(static_cast<long>(pt) * im.d, im.d).transpose() * w0;
      for (int o = 0; o < out_v; ++o)
        for (int c = 0; c < Cb; ++c)
          ybar_0v(static_cast<long>(pt) * Cb + c, o) += sig[static_cast<long>(o) * Cb + c];
    }
  }

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(im.pcount);
  batch_backward(im.b_iv, im.lay_v, fwd.theta, fwd.t_iv, std::move(ybar_iv), grad);
  batch_backward(im.b_bv, im.lay_v, fwd.theta, fwd.t_bv, std::move(ybar_bv), grad);
  batch_backward(im.b_0v, im.lay_v, fwd.theta, fwd.t_0v, std::move(ybar_0v), grad);
  batch_backward(im.b_ip, im.lay_p, fwd.theta, fwd.t_ip, std::move(ybar_ip), grad);
  return grad;
}

RowMatrixXd ResidualAssembly::jacobian(const Forward& fwd) const {
  const Impl& im = *impl_;
  check_forward_state(impl_.get(), fwd.owner, fwd.has_tape, true);
  const std::size_t bytes = static_cast<std::size_t>(im.layout.total) *
                            static_cast<std::size_t>(im.pcount) * sizeof(double);
  if (bytes > im.budget)
    throw CapacityError(
        "dense Jacobian needs " + std::to_string(bytes) + " bytes (budget " +
        std::to_string(im.budget) +
        "); use the matrix-free path (solver=cg) or raise the budget");

  RowMatrixXd J = RowMatrixXd::Zero(im.layout.total, im.pcount);
  const int out_v = im.topo.velocity_output;
  const int Cv = im.sv->ncoef;
  const int rint = im.rows_int();
  const Block* mbk = im.layout.find(BlockKind::momentum);
  const Block* dbk = im.layout.find(BlockKind::divergence);
  const Block* bbk = im.layout.find(BlockKind::boundary);
  const Block* ibk = im.layout.find(BlockKind::initial);

  const auto row_int = [&](int pt, int s) {
    return s < im.d ? mbk->offset + pt * im.d + s : dbk->offset + pt;
  };
  jac_backward(im.b_iv, im.lay_v, fwd.theta, fwd.t_iv, rint,
               SeedView{fwd.s_int.data(), fwd.s_int.cols(), 0}, row_int, J);
  jac_backward(im.b_ip, im.lay_p, fwd.theta, fwd.t_ip, rint,
               SeedView{fwd.s_int.data(), fwd.s_int.cols(), out_v * Cv}, row_int, J);
  if (bbk != nullptr) {
    const auto row_bnd = [&](int pt, int s) { return bbk->offset + pt * im.d + s; };
    jac_backward(im.b_bv, im.lay_v, fwd.theta, fwd.t_bv, im.d,
                 SeedView{im.s_bnd.data(), im.s_bnd.cols(), 0}, row_bnd, J);
  }
  if (ibk != nullptr) {
    const auto row_init = [&](int pt, int s) { return ibk->offset + pt * im.d + s; };
    jac_backward(im.b_0v, im.lay_v, fwd.theta, fwd.t_0v, im.d,
                 SeedView{im.s_init.data(), im.s_init.cols(), 0}, row_init, J);
  }
  return J;
}

RowMatrixXd ResidualAssembly::interior_velocity_jacobian(const Forward& fwd) const {
  const Impl& im = *impl_;
  check_forward_state(impl_.get(), fwd.owner, fwd.has_tape, true);
  const int ni = im.pts.interior.count();
  const int rows_pt = im.d * (1 + im.d);
  const std::size_t bytes = static_cast<std::size_t>(ni) * rows_pt *
                            static_cast<std::size_t>(im.pcount) * sizeof(double);
  if (bytes > im.budget)
    throw CapacityError(
        "interior velocity Jacobian needs " + std::to_string(bytes) +
        " bytes (budget " + std::to_string(im.budget) + ")");

  const int out_v = im.topo.velocity_output;
  const int Cv = im.sv->ncoef;
  RowMatrixXd seeds(static_cast<long>(ni) * rows_pt, static_cast<long>(out_v) * Cv);
  seeds.setZero();
  std::vector<Jet> draw(out_v, zero_jet(*im.sv));
  for (int pt = 0; pt < ni; ++pt)
    for (int o = 0; o < out_v; ++o)
      for (int c = 0; c < Cv; ++c) {
        draw[o].c[c] = 1.0;
        const std::vector<Jet> du = im.wrap_interior_tangent(pt, draw);
        draw[o].c[c] = 0.0;
        const long col = static_cast<long>(o) * Cv + c;
        for (int k = 0; k < im.d; ++k) {
          const long r0 = (static_cast<long>(pt) * im.d + k) * (1 + im.d);
          seeds(r0, col) = du[k].value();
          for (int j = 0; j < im.d; ++j) seeds(r0 + 1 + j, col) = du[k].d1(j);
        }
      }

  RowMatrixXd J = RowMatrixXd::Zero(static_cast<long>(ni) * rows_pt, im.pcount);
  const auto row_of = [&](int pt, int s) { return pt * rows_pt + s; };
  jac_backward(im.b_iv, im.lay_v, fwd.theta, fwd.t_iv, rows_pt,
               SeedView{seeds.data(), seeds.cols(), 0}, row_of, J);
  return J;
}

ResidualVector ResidualAssembly::assemble(const FlatParams& params) const {
  ForwardPtr f = forward(params, false);
  return std::move(f->res);
}

LossBreakdown ResidualAssembly::loss(const FlatParams& params) const {
  return loss_breakdown(assemble(params));
}

Eigen::VectorXd ResidualAssembly::param_jvp(const FlatParams& params,
                                            const Eigen::VectorXd& v) const {
  ForwardPtr f = forward(params, true);
  return jvp(*f, v);
}

Eigen::VectorXd ResidualAssembly::param_vjp(const FlatParams& params,
                                            const Eigen::VectorXd& w) const {
  ForwardPtr f = forward(params, true);
  return vjp(*f, w);
}

Eigen::MatrixXd ResidualAssembly::dense_jacobian(const FlatParams& params) const {
  ForwardPtr f = forward(params, true);
  return jacobian(*f);
}

}  // namespace gnflow
