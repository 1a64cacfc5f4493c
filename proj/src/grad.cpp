#include "tpru/grad.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace tpru {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::mod1: return "mod1";
    case Variant::mod2: return "mod2";
    case Variant::mod3: return "mod3";
  }
  return "?";
}

Variant parse_variant(std::string_view s) {
  if (s == "full") return Variant::full;
  if (s == "mod1") return Variant::mod1;
  if (s == "mod2") return Variant::mod2;
  if (s == "mod3") return Variant::mod3;
  throw std::invalid_argument("unknown variant: " + std::string(s));
}

StepGradients StepGradients::zeros(int d, int d_in) {
  StepGradients g;
  g.dW_u = Matrix(d, d);
  g.dW_r = Matrix(d, d);
  g.dV_b = Matrix(d, d);
  g.dW_b = Matrix(d, d);
  g.dV_x = Matrix(d, d_in);
  g.dW_x = Matrix(d, d_in);
  g.db_prev = Vector(d);
  g.dx = Vector(d_in);
  return g;
}

// Accumulates the parameter gradients only; db_prev/dx are per-call outputs.
void StepGradients::add(const StepGradients &o) {
  auto addm = [](Matrix &a, const Matrix &b) {
    if (!a.same_shape(b)) shape_error("StepGradients::add", a.rows, a.cols, b.rows, b.cols);
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
  };
  addm(dW_u, o.dW_u);
  addm(dW_r, o.dW_r);
  addm(dV_b, o.dV_b);
  addm(dV_x, o.dV_x);
  addm(dW_b, o.dW_b);
  addm(dW_x, o.dW_x);
  db_b += o.db_b;
  db_x += o.db_x;
}

namespace {

bool bits_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool matrices_equal(const Matrix &a, const Matrix &b) {
  return a.same_shape(b) && bits_equal(a.span(), b.span());
}

void validate_variant(Variant variant, const TpruParams &params, const RoleBasis &basis,
                      Normalization norm) {
  const bool wants_softmax = variant != Variant::full;
  if (wants_softmax != (norm == Normalization::softmax))
    throw std::invalid_argument("variant " + variant_name(variant) +
                                ": trace was produced under the wrong normalization");
  if (variant == Variant::mod1 || variant == Variant::mod2) {
    if (!matrices_equal(basis.W_r, basis.W_u))
      throw std::invalid_argument("variant " + variant_name(variant) + " requires W_r = W_u");
  }
  if (variant == Variant::mod1) {
    if (!matrices_equal(params.V_b, Matrix::identity(params.d())))
      throw std::invalid_argument("variant mod1 requires V_b = I");
  }
}

// Backward of the normalization step for one slice: given df (w.r.t. the
// normalized fillers) produce df_tilde. relu-squared: (2 f~/D)(df - <df,f>);
// softmax: f o (df - <df,f>).
void normalization_backward_slice(const StepTrace &t, int h, std::span<const double> df,
                                  std::span<double> dft) {
  const int n_roles = t.roles();
  double inner = 0.0;
  for (int n = 0; n < n_roles; ++n) inner += df[n] * t.f(n, h);
  if (t.norm == Normalization::relu_squared) {
    double denom = 0.0;
    for (int n = 0; n < n_roles; ++n) denom += t.f_tilde(n, h) * t.f_tilde(n, h);
    if (denom <= kNormalizationEps) {
      std::fill(dft.begin(), dft.end(), 0.0);
      return;
    }
    for (int n = 0; n < n_roles; ++n)
      dft[n] = 2.0 * t.f_tilde(n, h) / denom * (df[n] - inner);
  } else {
    for (int n = 0; n < n_roles; ++n) dft[n] = t.f(n, h) * (df[n] - inner);
  }
}

struct BackwardAccum {
  Matrix dU, dR; // d x N; folded into dW_u/dW_r once per BPTT run
  Matrix dV_b, dV_x, dW_b, dW_x;
  double db_b = 0.0, db_x = 0.0;

  BackwardAccum(int d, int d_in, int roles)
      : dU(d, roles), dR(d, roles), dV_b(d, d), dV_x(d, d_in), dW_b(d, d), dW_x(d, d_in) {}
};

struct InputGrads {
  Vector db_prev;
  Vector dx;
};

InputGrads step_backward_core(const StepTrace &t, const DerivedRoles &derived,
                              const TpruParams &params, const SliceConfig &slices,
                              const Vector &upstream, BackwardAccum &acc) {
  const int d = t.b_prev.len(), d_in = t.x.len();
  const int n_roles = t.roles(), H = t.slices();
  const int s = slices.slice_len(d);
  if (upstream.len() != d) shape_error("step_backward upstream", upstream.len(), 1, d, 1);
  if (H != slices.count)
    throw std::invalid_argument("step_backward: trace has " + std::to_string(H) +
                                " slices, config says " + std::to_string(slices.count));

  InputGrads out{Vector(d), Vector(d_in)};

  // Gate and copy path.
  Vector db_cand(d);
  for (int i = 0; i < d; ++i) {
    db_cand[i] = upstream[i] * t.g[i];
    out.db_prev[i] += upstream[i] * (1.0 - t.g[i]);
  }
  if (!t.gate_forced) {
    Vector da(d);
    for (int i = 0; i < d; ++i) {
      const double dg = upstream[i] * (t.b_cand[i] - t.b_prev[i]);
      da[i] = dg * t.g[i] * (1.0 - t.g[i]);
    }
    add_outer(acc.dW_b, da, t.b_prev);
    add_outer(acc.dW_x, da, t.x);
    for (int i = 0; i < d; ++i) {
      const double dai = da[i];
      for (int j = 0; j < d; ++j) out.db_prev[j] += params.W_b(i, j) * dai;
      for (int j = 0; j < d_in; ++j) out.dx[j] += params.W_x(i, j) * dai;
    }
  }

  // Binding: df[n,h] = sum_{j in slice h} db_cand[j] R[j,n]; dR += db_cand f^T.
  Matrix df(n_roles, H);
  for (int h = 0; h < H; ++h) {
    const int base = h * s;
    for (int n = 0; n < n_roles; ++n) {
      double acc_f = 0.0;
      for (int j = 0; j < s; ++j) {
        acc_f += db_cand[base + j] * derived.R(base + j, n);
        acc.dR(base + j, n) += db_cand[base + j] * t.f(n, h);
      }
      df(n, h) = acc_f;
    }
  }

  // Normalization, then the relu masks and shared biases.
  Matrix df_b(n_roles, H), df_x(n_roles, H);
  std::vector<double> col(n_roles), dft(n_roles);
  for (int h = 0; h < H; ++h) {
    for (int n = 0; n < n_roles; ++n) col[n] = df(n, h);
    normalization_backward_slice(t, h, col, dft);
    for (int n = 0; n < n_roles; ++n) {
      if (t.norm == Normalization::relu_squared) {
        const double gb = (t.f_b(n, h) + t.b_b > 0.0) ? dft[n] : 0.0;
        const double gx = (t.f_x(n, h) + t.b_x > 0.0) ? dft[n] : 0.0;
        df_b(n, h) = gb;
        df_x(n, h) = gx;
        acc.db_b += gb;
        acc.db_x += gx;
      } else {
        df_b(n, h) = dft[n];
        df_x(n, h) = dft[n];
        acc.db_b += dft[n];
        acc.db_x += dft[n];
      }
    }
  }

  // Unbinding: dU[j,n] += df_b[n,h_j] p[j] + df_x[n,h_j] q[j];
  // dp = U df_b (slice-wise), dq = U df_x.
  const Vector p = matvec(params.V_b, t.b_prev);
  const Vector q = matvec(params.V_x, t.x);
  Vector dp(d), dq(d);
  for (int h = 0; h < H; ++h) {
    const int base = h * s;
    for (int j = 0; j < s; ++j) {
      const int row = base + j;
      double accp = 0.0, accq = 0.0;
      for (int n = 0; n < n_roles; ++n) {
        const double u = derived.U(row, n);
        acc.dU(row, n) += df_b(n, h) * p[row] + df_x(n, h) * q[row];
        accp += u * df_b(n, h);
        accq += u * df_x(n, h);
      }
      dp[row] = accp;
      dq[row] = accq;
    }
  }

  add_outer(acc.dV_b, dp, t.b_prev);
  add_outer(acc.dV_x, dq, t.x);
  for (int i = 0; i < d; ++i) {
    const double dpi = dp[i], dqi = dq[i];
    for (int j = 0; j < d; ++j) out.db_prev[j] += params.V_b(i, j) * dpi;
    for (int j = 0; j < d_in; ++j) out.dx[j] += params.V_x(i, j) * dqi;
  }
  return out;
}

StepGradients finalize(BackwardAccum &&acc, const Matrix &E) {
  StepGradients g;
  // dU/dR live in role space; fold them back through the fixed basis:
  // dW_u = dU E^T, dW_r = dR E^T.
  Matrix Et(E.cols, E.rows);
  for (int i = 0; i < E.rows; ++i)
    for (int j = 0; j < E.cols; ++j) Et(j, i) = E(i, j);
  g.dW_u = matmul(acc.dU, Et);
  g.dW_r = matmul(acc.dR, Et);
  g.dV_b = std::move(acc.dV_b);
  g.dV_x = std::move(acc.dV_x);
  g.dW_b = std::move(acc.dW_b);
  g.dW_x = std::move(acc.dW_x);
  g.db_b = acc.db_b;
  g.db_x = acc.db_x;
  return g;
}

} // namespace

JacobianParts normalization_jacobian(const StepTrace &t) {
  const int n_roles = t.roles(), H = t.slices(), d = t.b_prev.len();
  const int nh = n_roles * H;
  JacobianParts parts;
  parts.J = Matrix(nh, nh);
  parts.n_diag = Vector(nh);
  parts.s_b = Vector(nh);
  parts.s_x = Vector(nh);
  parts.l1 = Vector(d);
  parts.l2 = Vector(d);
  parts.l3 = Vector(d);

  for (int h = 0; h < H; ++h) {
    const int base = h * n_roles;
    for (int m = 0; m < n_roles; ++m) {
      for (int n = 0; n < n_roles; ++n) {
        const double delta = (m == n) ? 1.0 : 0.0;
        parts.J(base + m, base + n) = t.f(m, h) * (delta - t.f(n, h));
      }
      if (t.norm == Normalization::relu_squared) {
        parts.n_diag[base + m] = t.f_tilde(m, h) > 0.0 ? 2.0 / t.f_tilde(m, h) : 0.0;
        parts.s_b[base + m] = (t.f_b(m, h) + t.b_b > 0.0) ? 1.0 : 0.0;
        parts.s_x[base + m] = (t.f_x(m, h) + t.b_x > 0.0) ? 1.0 : 0.0;
      } else {
        parts.n_diag[base + m] = 1.0;
        parts.s_b[base + m] = 1.0;
        parts.s_x[base + m] = 1.0;
      }
    }
  }
  for (int i = 0; i < d; ++i) {
    parts.l1[i] = t.gate_forced
                      ? 0.0
                      : (t.b_cand[i] - t.b_prev[i]) * t.g[i] * (1.0 - t.g[i]);
    parts.l2[i] = t.g[i];
    parts.l3[i] = 1.0 - t.g[i];
  }
  return parts;
}

StepGradients step_backward(const StepTrace &trace, const RoleBasis &basis,
                            const TpruParams &params, const SliceConfig &slices,
                            const Vector &upstream) {
  const DerivedRoles derived = derive_role_matrices(basis);
  BackwardAccum acc(basis.d(), params.d_in(), basis.roles());
  InputGrads in = step_backward_core(trace, derived, params, slices, upstream, acc);
  StepGradients g = finalize(std::move(acc), basis.E);
  g.db_prev = std::move(in.db_prev);
  g.dx = std::move(in.dx);
  return g;
}

BpttResult bptt(std::span<const StepTrace> traces, std::span<const Vector> per_step_upstream,
                const RoleBasis &basis, const TpruParams &params, const SliceConfig &slices) {
  if (traces.empty()) throw std::invalid_argument("bptt: empty trace chain");
  if (traces.size() != per_step_upstream.size())
    throw std::invalid_argument("bptt: need one upstream per step");
  for (size_t tt = 0; tt + 1 < traces.size(); ++tt)
    if (!bits_equal(traces[tt].b_t.span(), traces[tt + 1].b_prev.span()))
      throw std::invalid_argument("bptt: broken chain at step " + std::to_string(tt + 1));

  const int d = basis.d(), d_in = params.d_in();
  const DerivedRoles derived = derive_role_matrices(basis);
  BackwardAccum acc(d, d_in, basis.roles());
  BpttResult result;
  result.dx.resize(traces.size());

  Vector carry(d);
  for (size_t idx = traces.size(); idx-- > 0;) {
    Vector u = per_step_upstream[idx];
    if (u.len() != d) shape_error("bptt upstream", u.len(), 1, d, 1);
    for (int i = 0; i < d; ++i) u[i] += carry[i];
    InputGrads in = step_backward_core(traces[idx], derived, params, slices, u, acc);
    result.dx[idx] = std::move(in.dx);
    carry = std::move(in.db_prev);
  }
  result.grads = finalize(std::move(acc), basis.E);
  result.grads.db_prev = std::move(carry);
  result.grads.dx = Vector(d_in);
  return result;
}

TpruGradAccum TpruGradAccum::zeros(int d, int d_in, int roles) {
  TpruGradAccum a;
  a.dU = Matrix(d, roles);
  a.dR = Matrix(d, roles);
  a.dV_b = Matrix(d, d);
  a.dV_x = Matrix(d, d_in);
  a.dW_b = Matrix(d, d);
  a.dW_x = Matrix(d, d_in);
  return a;
}

void TpruGradAccum::add(const TpruGradAccum &o) {
  auto addm = [](Matrix &a, const Matrix &b) {
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
  };
  addm(dU, o.dU);
  addm(dR, o.dR);
  addm(dV_b, o.dV_b);
  addm(dV_x, o.dV_x);
  addm(dW_b, o.dW_b);
  addm(dW_x, o.dW_x);
  db_b += o.db_b;
  db_x += o.db_x;
}

StepGradients TpruGradAccum::finalize(const Matrix &E) const {
  BackwardAccum acc(dU.rows, dV_x.cols, dU.cols);
  acc.dU = dU;
  acc.dR = dR;
  acc.dV_b = dV_b;
  acc.dV_x = dV_x;
  acc.dW_b = dW_b;
  acc.dW_x = dW_x;
  acc.db_b = db_b;
  acc.db_x = db_x;
  return tpru::finalize(std::move(acc), E);
}

std::vector<Vector> bptt_accumulate(std::span<const StepTrace> traces,
                                    std::span<const Vector> per_step_upstream,
                                    const DerivedRoles &derived, const TpruParams &params,
                                    const SliceConfig &slices, TpruGradAccum &acc,
                                    Vector *db0) {
  const int d = params.d();
  BackwardAccum raw(d, params.d_in(), derived.U.cols);
  raw.dU = std::move(acc.dU);
  raw.dR = std::move(acc.dR);
  raw.dV_b = std::move(acc.dV_b);
  raw.dV_x = std::move(acc.dV_x);
  raw.dW_b = std::move(acc.dW_b);
  raw.dW_x = std::move(acc.dW_x);
  raw.db_b = acc.db_b;
  raw.db_x = acc.db_x;

  std::vector<Vector> dxs(traces.size());
  Vector carry(d);
  for (size_t idx = traces.size(); idx-- > 0;) {
    Vector u = per_step_upstream[idx];
    for (int i = 0; i < d; ++i) u[i] += carry[i];
    InputGrads in = step_backward_core(traces[idx], derived, params, slices, u, raw);
    dxs[idx] = std::move(in.dx);
    carry = std::move(in.db_prev);
  }
  if (db0) *db0 = std::move(carry);

  acc.dU = std::move(raw.dU);
  acc.dR = std::move(raw.dR);
  acc.dV_b = std::move(raw.dV_b);
  acc.dV_x = std::move(raw.dV_x);
  acc.dW_b = std::move(raw.dW_b);
  acc.dW_x = std::move(raw.dW_x);
  acc.db_b = raw.db_b;
  acc.db_x = raw.db_x;
  return dxs;
}

StateJacobian state_jacobian(const StepTrace &trace, const RoleBasis &basis,
                             const TpruParams &params, const SliceConfig &slices,
                             Variant variant) {
  validate_variant(variant, params, basis, trace.norm);
  const int d = basis.d(), n_roles = basis.roles();
  const int H = slices.count, s = slices.slice_len(d);
  const DerivedRoles derived = derive_role_matrices(basis);
  const JacobianParts parts = normalization_jacobian(trace);

  StateJacobian out{Matrix(d, d), Matrix(d, d)};
  // Per slice h: rows [h*s,(h+1)*s) of the candidate Jacobian are
  // R_h (J_h N_h S_b_h) (U_h^T V_b), with N and S folded in as diagonal scales.
  for (int h = 0; h < H; ++h) {
    const int jbase = h * s, nbase = h * n_roles;
    // B[m,k] = sum_{j in slice h} U[j,m] V_b[j,k]
    Matrix B(n_roles, d);
    for (int j = 0; j < s; ++j) {
      const int row = jbase + j;
      for (int m = 0; m < n_roles; ++m) {
        const double u = derived.U(row, m);
        if (u == 0.0) continue;
        for (int k = 0; k < d; ++k) B(m, k) += u * params.V_b(row, k);
      }
    }
    // G = (J N S_b) B
    Matrix G(n_roles, d);
    for (int n = 0; n < n_roles; ++n) {
      for (int m = 0; m < n_roles; ++m) {
        const double w = parts.J(nbase + n, nbase + m) * parts.n_diag[nbase + m] *
                         parts.s_b[nbase + m];
        if (w == 0.0) continue;
        for (int k = 0; k < d; ++k) G(n, k) += w * B(m, k);
      }
    }
    for (int j = 0; j < s; ++j) {
      const int row = jbase + j;
      for (int n = 0; n < n_roles; ++n) {
        const double r = derived.R(row, n);
        if (r == 0.0) continue;
        for (int k = 0; k < d; ++k) out.candidate(row, k) += r * G(n, k);
      }
    }
  }
  for (int i = 0; i < d; ++i) {
    for (int k = 0; k < d; ++k)
      out.full(i, k) = parts.l1[i] * params.W_b(i, k) + parts.l2[i] * out.candidate(i, k);
    out.full(i, i) += parts.l3[i];
  }
  return out;
}

std::pair<TpruParams, RoleBasis> make_variant_params(Variant variant, TpruParams params,
                                                     RoleBasis basis) {
  if (variant == Variant::mod1 || variant == Variant::mod2) basis.W_r = basis.W_u;
  if (variant == Variant::mod1) params.V_b = Matrix::identity(params.d());
  return {std::move(params), std::move(basis)};
}

bool softmax_shift_invariant(const Matrix &f_tilde, double c) {
  // Snap values and shift onto a dyadic grid (multiples of 2^-26) so each
  // addition below is exact; rounding in the shift would otherwise destroy
  // the comparison before the softmax ever runs.
  const double grid = 67108864.0; // 2^26
  auto snap = [grid](double x) { return std::round(x * grid) / grid; };
  const double cq = snap(c);
  const int n_roles = f_tilde.rows, H = f_tilde.cols;
  std::vector<double> v(n_roles), shifted(n_roles), out_a(n_roles), out_b(n_roles);
  for (int h = 0; h < H; ++h) {
    for (int n = 0; n < n_roles; ++n) {
      v[n] = snap(f_tilde(n, h));
      shifted[n] = v[n] + cq;
    }
    softmax_slice(v, out_a);
    softmax_slice(shifted, out_b);
    if (std::memcmp(out_a.data(), out_b.data(), out_a.size() * sizeof(double)) != 0)
      return false;
  }
  return true;
}

std::string VariantReport::summary() const {
  std::string s = variant_name(variant) + (passed ? " ok" : " FAILED");
  switch (variant) {
    case Variant::mod1:
      s += " (symmetry defect " + std::to_string(candidate_symmetry_defect) + ", min eig " +
           std::to_string(candidate_min_eig) + ")";
      break;
    case Variant::mod2:
      s += " (outer-product err " + std::to_string(outer_product_max_err) + ", min eig of M " +
           std::to_string(m_min_eig) + ")";
      break;
    case Variant::mod3: {
      s += " (shift constants";
      for (size_t i = 0; i < shift_constants.size(); ++i)
        s += " " + std::to_string(shift_constants[i]) + (shift_invariant[i] ? ":ok" : ":bad");
      s += ")";
      break;
    }
    case Variant::full:
      s += " (state-Jacobian FD err " + std::to_string(outer_product_max_err) + ")";
      break;
  }
  return s;
}

VariantReport analyze_variant(const StepTrace &trace, const RoleBasis &basis,
                              const TpruParams &params, const SliceConfig &slices,
                              Variant variant) {
  validate_variant(variant, params, basis, trace.norm);
  VariantReport report;
  report.variant = variant;

  const int d = basis.d();
  const DerivedRoles derived = derive_role_matrices(basis);
  const Normalization norm = VariantConfig{variant}.normalization();

  auto fd_columns_vs = [&](const Matrix &analytic, const TpruParams &pp, bool full_step) {
    // Directional differences of the step output w.r.t. b_prev, column by column.
    const double h = 1e-6;
    double worst = 0.0;
    for (int k = 0; k < d; ++k) {
      Vector plus = trace.b_prev, minus = trace.b_prev;
      plus[k] += h;
      minus[k] -= h;
      const StepTrace tp = step(pp, derived, slices, plus, trace.x, norm);
      const StepTrace tm = step(pp, derived, slices, minus, trace.x, norm);
      for (int j = 0; j < d; ++j) {
        const double fd = full_step ? (tp.b_t[j] - tm.b_t[j]) / (2.0 * h)
                                    : (tp.b_cand[j] - tm.b_cand[j]) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - analytic(j, k)));
      }
    }
    return worst;
  };

  switch (variant) {
    case Variant::mod1: {
      const StateJacobian sj = state_jacobian(trace, basis, params, slices, variant);
      report.candidate_symmetry_defect = symmetry_defect(sj.candidate);
      Matrix sym(d, d);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) sym(i, j) = 0.5 * (sj.candidate(i, j) + sj.candidate(j, i));
      report.candidate_min_eig = symmetric_eigenvalues(sym).front();
      report.passed =
          report.candidate_symmetry_defect <= 1e-10 && report.candidate_min_eig >= -1e-8;
      break;
    }
    case Variant::mod2: {
      // M = W_r E J E^T W_r^T: the candidate Jacobian with V_b replaced by I.
      TpruParams p_id = params;
      p_id.V_b = Matrix::identity(d);
      const StateJacobian mj = state_jacobian(trace, basis, p_id, slices, variant);
      const Matrix &M = mj.candidate;
      Matrix sym(d, d);
      for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) sym(i, j) = 0.5 * (M(i, j) + M(j, i));
      report.m_min_eig = symmetric_eigenvalues(sym).front();

      // FD of b_cand w.r.t. every entry of V_b against the rank-one form
      // M_{.i} b_prev^T.
      const double h = 1e-5;
      double worst = 0.0;
      TpruParams pp = params;
      for (int i = 0; i < d; ++i) {
        for (int k = 0; k < d; ++k) {
          const double saved = pp.V_b(i, k);
          pp.V_b(i, k) = saved + h;
          const StepTrace tp = step(pp, derived, slices, trace.b_prev, trace.x, norm);
          pp.V_b(i, k) = saved - h;
          const StepTrace tm = step(pp, derived, slices, trace.b_prev, trace.x, norm);
          pp.V_b(i, k) = saved;
          for (int j = 0; j < d; ++j) {
            const double fd = (tp.b_cand[j] - tm.b_cand[j]) / (2.0 * h);
            worst = std::max(worst, std::abs(fd - M(j, i) * trace.b_prev[k]));
          }
        }
      }
      report.outer_product_max_err = worst;
      report.passed = worst <= 1e-6 && report.m_min_eig >= -1e-8;
      break;
    }
    case Variant::mod3: {
      report.shift_constants = {-5.0, 0.1, 3.7};
      report.passed = true;
      for (double c : report.shift_constants) {
        const bool ok = softmax_shift_invariant(trace.f_tilde, c);
        report.shift_invariant.push_back(ok);
        report.passed = report.passed && ok;
      }
      break;
    }
    case Variant::full: {
      const StateJacobian sj = state_jacobian(trace, basis, params, slices, variant);
      report.outer_product_max_err = fd_columns_vs(sj.full, params, true);
      report.passed = report.outer_product_max_err <= 1e-5;
      break;
    }
  }
  return report;
}

FdReport finite_diff_check(const std::function<double()> &loss, std::span<const FdSlot> slots,
                           std::span<const double> analytic, double h, double tol) {
  if (slots.size() != analytic.size())
    throw std::invalid_argument("finite_diff_check: slot/analytic size mismatch");
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_check: h must be > 0");
  FdReport report;
  for (size_t i = 0; i < slots.size(); ++i) {
    double &x = *slots[i].value;
    const double saved = x;
    x = saved + h;
    const double lp = loss();
    x = saved - h;
    const double lm = loss();
    x = saved;
    const double fd = (lp - lm) / (2.0 * h);
    const double a = analytic[i];
    const double rel = std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
    report.max_rel_error = std::max(report.max_rel_error, rel);
    if (rel > tol) {
      report.flagged.push_back({slots[i].name, a, fd, rel});
      report.passed = false;
    }
  }
  return report;
}

namespace {

// The gradcheck loss: sum_t <w_t, b_t> over a rollout, which makes the
// supplied w_t exactly the per-step upstream vectors bptt expects.
struct RolloutProblem {
  TpruParams params;
  RoleBasis basis;
  SliceConfig slices;
  Vector b0;
  std::vector<Vector> xs;
  std::vector<Vector> ws;

  double loss() const {
    const DerivedRoles derived = derive_role_matrices(basis);
    Vector b = b0;
    double total = 0.0;
    for (size_t t = 0; t < xs.size(); ++t) {
      StepTrace tr = step(params, derived, slices, b, xs[t]);
      total += dot(ws[t], tr.b_t);
      b = tr.b_t;
    }
    return total;
  }

  std::vector<StepTrace> rollout() const {
    const DerivedRoles derived = derive_role_matrices(basis);
    std::vector<StepTrace> traces;
    Vector b = b0;
    for (size_t t = 0; t < xs.size(); ++t) {
      traces.push_back(step(params, derived, slices, b, xs[t]));
      b = traces.back().b_t;
    }
    return traces;
  }

  // Any relu argument within `margin` of its kink makes finite differences
  // meaningless; such draws are rejected by the suite.
  bool kink_adjacent(double margin) const {
    for (const StepTrace &tr : rollout()) {
      for (int n = 0; n < tr.roles(); ++n)
        for (int h = 0; h < tr.slices(); ++h) {
          if (std::abs(tr.f_b(n, h) + tr.b_b) < margin) return true;
          if (std::abs(tr.f_x(n, h) + tr.b_x) < margin) return true;
        }
    }
    return false;
  }
};

} // namespace

GradcheckReport run_gradcheck_suite(int num_cases, std::uint64_t seed, double h, double tol) {
  const int d_choices[] = {4, 8, 16};
  const int din_choices[] = {3, 8};
  const int n_choices[] = {6, 32};
  const int h_choices[] = {1, 2};
  const int t_choices[] = {1, 5};

  GradcheckReport report;
  report.passed = true;

  for (int c = 0; c < num_cases; ++c) {
    GradcheckCase gc;
    gc.d = d_choices[mix64(seed, 10ull * c + 1) % 3];
    gc.d_in = din_choices[mix64(seed, 10ull * c + 2) % 2];
    gc.roles = n_choices[mix64(seed, 10ull * c + 3) % 2];
    gc.slices = h_choices[mix64(seed, 10ull * c + 4) % 2];
    gc.steps = t_choices[mix64(seed, 10ull * c + 5) % 2];

    RolloutProblem prob;
    prob.slices.count = gc.slices;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 200) throw std::runtime_error("gradcheck: could not sample a kink-free config");
      gc.seed = mix64(seed, 1000ull * c + attempt);
      prob.params = TpruParams::init(gc.d, gc.d_in, derive_seed(gc.seed, "params"));
      prob.params.b_b = 0.1 * normal01(derive_seed(gc.seed, "b_b"), 0);
      prob.params.b_x = 0.1 * normal01(derive_seed(gc.seed, "b_x"), 0);
      prob.basis = RoleBasis::init(gc.d, gc.roles, derive_seed(gc.seed, "basis"));
      prob.b0 = sample_normal_vector(derive_seed(gc.seed, "b0"), gc.d, 1.0);
      prob.xs.clear();
      prob.ws.clear();
      for (int t = 0; t < gc.steps; ++t) {
        prob.xs.push_back(sample_normal_vector(mix64(derive_seed(gc.seed, "x"), t), gc.d_in, 1.0));
        prob.ws.push_back(sample_normal_vector(mix64(derive_seed(gc.seed, "w"), t), gc.d, 1.0));
      }
      if (!prob.kink_adjacent(1e-3)) break;
    }

    const std::vector<StepTrace> traces = prob.rollout();
    const BpttResult analytic = bptt(traces, prob.ws, prob.basis, prob.params, prob.slices);

    std::vector<FdSlot> slots;
    std::vector<double> expected;
    auto add_matrix = [&](Matrix &m, const Matrix &g, const std::string &name) {
      for (int i = 0; i < m.rows; ++i)
        for (int j = 0; j < m.cols; ++j) {
          slots.push_back({&m(i, j), name + "[" + std::to_string(i) + "," + std::to_string(j) + "]"});
          expected.push_back(g(i, j));
        }
    };
    add_matrix(prob.basis.W_u, analytic.grads.dW_u, "W_u");
    add_matrix(prob.basis.W_r, analytic.grads.dW_r, "W_r");
    add_matrix(prob.params.V_b, analytic.grads.dV_b, "V_b");
    add_matrix(prob.params.V_x, analytic.grads.dV_x, "V_x");
    add_matrix(prob.params.W_b, analytic.grads.dW_b, "W_b");
    add_matrix(prob.params.W_x, analytic.grads.dW_x, "W_x");
    slots.push_back({&prob.params.b_b, "b_b"});
    expected.push_back(analytic.grads.db_b);
    slots.push_back({&prob.params.b_x, "b_x"});
    expected.push_back(analytic.grads.db_x);
    for (int i = 0; i < gc.d; ++i) {
      slots.push_back({&prob.b0[i], "b0[" + std::to_string(i) + "]"});
      expected.push_back(analytic.grads.db_prev[i]);
    }
    for (int t = 0; t < gc.steps; ++t)
      for (int i = 0; i < gc.d_in; ++i) {
        slots.push_back({&prob.xs[t][i], "x" + std::to_string(t) + "[" + std::to_string(i) + "]"});
        expected.push_back(analytic.dx[t][i]);
      }

    const FdReport fd =
        finite_diff_check([&] { return prob.loss(); }, slots, expected, h, tol);
    gc.max_rel_error = fd.max_rel_error;
    gc.passed = fd.passed;
    report.worst = std::max(report.worst, fd.max_rel_error);
    report.passed = report.passed && fd.passed;
    report.cases.push_back(gc);
  }
  return report;
}

} // namespace tpru
