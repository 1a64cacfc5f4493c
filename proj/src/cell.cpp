#include "tpru/cell.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tpru {

std::string cell_kind_name(CellKind k) {
  switch (k) {
    case CellKind::tpru: return "tpru";
    case CellKind::gru: return "gru";
    case CellKind::lstm: return "lstm";
  }
  return "?";
}

CellKind parse_cell_kind(std::string_view s) {
  if (s == "tpru") return CellKind::tpru;
  if (s == "gru") return CellKind::gru;
  if (s == "lstm") return CellKind::lstm;
  throw std::invalid_argument("unknown cell kind: " + std::string(s));
}

int SliceConfig::slice_len(int d) const {
  if (count < 1) throw std::invalid_argument("slice count must be >= 1");
  if (d % count != 0)
    throw std::invalid_argument("slice count " + std::to_string(count) +
                                " does not divide state dimension " + std::to_string(d));
  return d / count;
}

RoleBasis RoleBasis::init(int d, int roles, std::uint64_t seed) {
  RoleBasis b;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  b.E = sample_normal(derive_seed(seed, "E"), d, roles, scale);
  b.W_u = sample_normal(derive_seed(seed, "W_u"), d, d, scale);
  b.W_r = sample_normal(derive_seed(seed, "W_r"), d, d, scale);
  return b;
}

TpruParams TpruParams::init(int d, int d_in, std::uint64_t seed) {
  TpruParams p;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sx = 1.0 / std::sqrt(static_cast<double>(d_in));
  p.V_b = sample_normal(derive_seed(seed, "V_b"), d, d, sd);
  p.V_x = sample_normal(derive_seed(seed, "V_x"), d, d_in, sx);
  p.W_b = sample_normal(derive_seed(seed, "W_b"), d, d, sd);
  p.W_x = sample_normal(derive_seed(seed, "W_x"), d, d_in, sx);
  return p;
}

DerivedRoles derive_role_matrices(const RoleBasis &basis) {
  return {matmul(basis.W_u, basis.E), matmul(basis.W_r, basis.E)};
}

UnboundFillers unbind(const Matrix &U, const TpruParams &params, const Vector &b_prev,
                      const Vector &x, const SliceConfig &slices) {
  const int d = U.rows, roles = U.cols;
  if (params.V_b.cols != b_prev.len())
    shape_error("unbind V_b*b", params.V_b.rows, params.V_b.cols, b_prev.len(), 1);
  if (params.V_x.cols != x.len())
    shape_error("unbind V_x*x", params.V_x.rows, params.V_x.cols, x.len(), 1);
  if (params.V_b.rows != d) shape_error("unbind U^T", d, roles, params.V_b.rows, 1);
  const int H = slices.count, s = slices.slice_len(d);

  const Vector p = matvec(params.V_b, b_prev);
  const Vector q = matvec(params.V_x, x);

  UnboundFillers out{Matrix(roles, H), Matrix(roles, H)};
  for (int n = 0; n < roles; ++n) {
    for (int h = 0; h < H; ++h) {
      double accb = 0.0, accx = 0.0;
      const int base = h * s;
      for (int j = 0; j < s; ++j) {
        const double u = U(base + j, n);
        accb += u * p[base + j];
        accx += u * q[base + j];
      }
      out.f_b(n, h) = accb;
      out.f_x(n, h) = accx;
    }
  }
  return out;
}

NormalizedFillers normalize_fillers(const Matrix &f_b, const Matrix &f_x, double b_b,
                                    double b_x, const SliceConfig &slices) {
  if (!f_b.same_shape(f_x)) shape_error("normalize_fillers", f_b.rows, f_b.cols, f_x.rows, f_x.cols);
  if (f_b.cols != slices.count)
    throw std::invalid_argument("normalize_fillers: filler block has " +
                                std::to_string(f_b.cols) + " slices, config says " +
                                std::to_string(slices.count));
  const int roles = f_b.rows, H = f_b.cols;
  NormalizedFillers out{Matrix(roles, H), Matrix(roles, H)};
  for (int n = 0; n < roles; ++n)
    for (int h = 0; h < H; ++h)
      out.f_tilde(n, h) = std::max(0.0, f_b(n, h) + b_b) + std::max(0.0, f_x(n, h) + b_x);
  for (int h = 0; h < H; ++h) {
    double denom = 0.0;
    for (int n = 0; n < roles; ++n) denom += out.f_tilde(n, h) * out.f_tilde(n, h);
    if (denom <= kNormalizationEps) continue; // dead slice stays exactly zero
    for (int n = 0; n < roles; ++n) out.f(n, h) = out.f_tilde(n, h) * out.f_tilde(n, h) / denom;
  }
  return out;
}

void softmax_slice(std::span<const double> in, std::span<double> out) {
  double top = in[0];
  for (double v : in) top = std::max(top, v);
  double denom = 0.0;
  for (size_t n = 0; n < in.size(); ++n) {
    out[n] = std::exp(in[n] - top);
    denom += out[n];
  }
  for (size_t n = 0; n < in.size(); ++n) out[n] /= denom;
}

namespace {

// Analysis-only replacement for the relu-squared normalization:
// f = softmax(f_b + b_b + f_x + b_x), per slice.
NormalizedFillers softmax_fillers(const Matrix &f_b, const Matrix &f_x, double b_b, double b_x) {
  const int roles = f_b.rows, H = f_b.cols;
  NormalizedFillers out{Matrix(roles, H), Matrix(roles, H)};
  for (int n = 0; n < roles; ++n)
    for (int h = 0; h < H; ++h) out.f_tilde(n, h) = f_b(n, h) + b_b + f_x(n, h) + b_x;
  std::vector<double> col(roles), probs(roles);
  for (int h = 0; h < H; ++h) {
    for (int n = 0; n < roles; ++n) col[n] = out.f_tilde(n, h);
    softmax_slice(col, probs);
    for (int n = 0; n < roles; ++n) out.f(n, h) = probs[n];
  }
  return out;
}

} // namespace

Vector bind(const Matrix &R, const Matrix &f, const SliceConfig &slices) {
  const int d = R.rows, roles = R.cols;
  if (f.rows != roles)
    shape_error("bind", d, roles, f.rows, f.cols);
  const int H = slices.count, s = slices.slice_len(d);
  if (f.cols != H)
    throw std::invalid_argument("bind: filler block has " + std::to_string(f.cols) +
                                " slices, config says " + std::to_string(H));
  Vector out(d);
  for (int h = 0; h < H; ++h) {
    const int base = h * s;
    for (int n = 0; n < roles; ++n) {
      const double fn = f(n, h);
      if (fn == 0.0) continue;
      for (int j = 0; j < s; ++j) out[base + j] += fn * R(base + j, n);
    }
  }
  return out;
}

GateResult gated_update(const TpruParams &params, const Vector &b_prev, const Vector &x,
                        const Vector &b_cand) {
  const int d = params.W_b.rows;
  Vector a = matvec(params.W_b, b_prev);
  const Vector ax = matvec(params.W_x, x);
  GateResult out{Vector(d), Vector(d)};
  for (int i = 0; i < d; ++i) {
    const double gi = 1.0 / (1.0 + std::exp(-(a[i] + ax[i])));
    out.g[i] = gi;
    out.b_t[i] = gi * b_cand[i] + (1.0 - gi) * b_prev[i];
  }
  return out;
}

StepTrace step(const TpruParams &params, const RoleBasis &basis, const SliceConfig &slices,
               const Vector &b_prev, const Vector &x) {
  return step(params, derive_role_matrices(basis), slices, b_prev, x);
}

StepTrace step(const TpruParams &params, const DerivedRoles &derived,
               const SliceConfig &slices, const Vector &b_prev, const Vector &x,
               Normalization norm, const Vector *gate_override) {
  StepTrace t;
  t.x = x;
  t.b_prev = b_prev;
  t.b_b = params.b_b;
  t.b_x = params.b_x;
  t.norm = norm;

  UnboundFillers raw = unbind(derived.U, params, b_prev, x, slices);
  t.f_b = std::move(raw.f_b);
  t.f_x = std::move(raw.f_x);

  NormalizedFillers nf = norm == Normalization::relu_squared
                             ? normalize_fillers(t.f_b, t.f_x, params.b_b, params.b_x, slices)
                             : softmax_fillers(t.f_b, t.f_x, params.b_b, params.b_x);
  t.f_tilde = std::move(nf.f_tilde);
  t.f = std::move(nf.f);

  t.b_cand = bind(derived.R, t.f, slices);

  if (gate_override) {
    const int d = b_prev.len();
    t.gate_forced = true;
    t.g = *gate_override;
    t.b_t = Vector(d);
    for (int i = 0; i < d; ++i)
      t.b_t[i] = t.g[i] * t.b_cand[i] + (1.0 - t.g[i]) * b_prev[i];
  } else {
    GateResult gr = gated_update(params, b_prev, x, t.b_cand);
    t.g = std::move(gr.g);
    t.b_t = std::move(gr.b_t);
  }
  return t;
}

long long param_count(CellKind kind, int d, int d_in) {
  const long long dd = 1LL * d * d, dx = 1LL * d * d_in;
  switch (kind) {
    case CellKind::tpru: return 4 * dd + 2 * dx;
    case CellKind::lstm: return 4 * dd + 4 * dx;
    case CellKind::gru: return 3 * dd + 3 * dx;
  }
  return 0;
}

StepCost step_cost(CellKind kind, int d, int d_in, int roles) {
  (void)d_in; // only second-order terms are kept
  StepCost c;
  switch (kind) {
    case CellKind::tpru:
      c.expression = "2Nd+6d^2";
      c.multiplies = 2LL * roles * d + 6LL * d * d;
      break;
    case CellKind::lstm:
      c.expression = "8d^2";
      c.multiplies = 8LL * d * d;
      break;
    case CellKind::gru:
      c.expression = "6d^2";
      c.multiplies = 6LL * d * d;
      break;
  }
  return c;
}

} // namespace tpru
