#include "tpru/baselines.hpp"

#include <cmath>

namespace tpru {

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Matrix init_gate(int rows, int cols, std::uint64_t seed, std::string_view tag) {
  return sample_normal(derive_seed(seed, tag), rows, cols,
                       1.0 / std::sqrt(static_cast<double>(cols)));
}

// out[j] += sum_i m[i][j] * v[i]
void add_matvec_t(Vector &out, const Matrix &m, const Vector &v) {
  for (int i = 0; i < m.rows; ++i) {
    const double vi = v[i];
    if (vi == 0.0) continue;
    const double *row = m.row(i);
    for (int j = 0; j < m.cols; ++j) out[j] += vi * row[j];
  }
}

} // namespace

GruParams GruParams::init(int d, int d_in, std::uint64_t seed) {
  GruParams p;
  p.W_z = init_gate(d, d_in, seed, "W_z");
  p.W_r = init_gate(d, d_in, seed, "W_r");
  p.W_h = init_gate(d, d_in, seed, "W_h");
  p.U_z = init_gate(d, d, seed, "U_z");
  p.U_r = init_gate(d, d, seed, "U_r");
  p.U_h = init_gate(d, d, seed, "U_h");
  return p;
}

GruTrace gru_step(const GruParams &params, const Vector &h_prev, const Vector &x) {
  const int d = params.d();
  if (h_prev.len() != d) shape_error("gru_step h_prev", h_prev.len(), 1, d, 1);
  if (x.len() != params.d_in()) shape_error("gru_step x", x.len(), 1, params.d_in(), 1);

  GruTrace t;
  t.x = x;
  t.h_prev = h_prev;
  const Vector az = matvec(params.W_z, x);
  t.z = Vector(d);
  t.r = Vector(d);
  t.h_cand = Vector(d);
  t.h_t = Vector(d);

  const Vector uz = matvec(params.U_z, h_prev);
  const Vector ar = matvec(params.W_r, x);
  const Vector ur = matvec(params.U_r, h_prev);
  for (int i = 0; i < d; ++i) {
    t.z[i] = sigmoid(az[i] + uz[i]);
    t.r[i] = sigmoid(ar[i] + ur[i]);
  }
  Vector rh(d);
  for (int i = 0; i < d; ++i) rh[i] = t.r[i] * h_prev[i];
  const Vector ac = matvec(params.W_h, x);
  const Vector uc = matvec(params.U_h, rh);
  for (int i = 0; i < d; ++i) {
    t.h_cand[i] = std::tanh(ac[i] + uc[i]);
    t.h_t[i] = (1.0 - t.z[i]) * h_prev[i] + t.z[i] * t.h_cand[i];
  }
  return t;
}

GruGradients GruGradients::zeros(int d, int d_in) {
  GruGradients g;
  g.dW_z = Matrix(d, d_in);
  g.dW_r = Matrix(d, d_in);
  g.dW_h = Matrix(d, d_in);
  g.dU_z = Matrix(d, d);
  g.dU_r = Matrix(d, d);
  g.dU_h = Matrix(d, d);
  g.dh_prev = Vector(d);
  g.dx = Vector(d_in);
  return g;
}

void GruGradients::add_params(const GruGradients &o) {
  auto addm = [](Matrix &a, const Matrix &b) {
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
  };
  addm(dW_z, o.dW_z);
  addm(dW_r, o.dW_r);
  addm(dW_h, o.dW_h);
  addm(dU_z, o.dU_z);
  addm(dU_r, o.dU_r);
  addm(dU_h, o.dU_h);
}

GruGradients gru_backward(const GruParams &params, const GruTrace &t, const Vector &upstream) {
  const int d = params.d(), d_in = params.d_in();
  GruGradients g = GruGradients::zeros(d, d_in);

  Vector dz(d), dcand(d), da_c(d);
  for (int i = 0; i < d; ++i) {
    dz[i] = upstream[i] * (t.h_cand[i] - t.h_prev[i]);
    dcand[i] = upstream[i] * t.z[i];
    g.dh_prev[i] += upstream[i] * (1.0 - t.z[i]);
    da_c[i] = dcand[i] * (1.0 - t.h_cand[i] * t.h_cand[i]);
  }

  Vector rh(d);
  for (int i = 0; i < d; ++i) rh[i] = t.r[i] * t.h_prev[i];
  add_outer(g.dW_h, da_c, t.x);
  add_outer(g.dU_h, da_c, rh);
  add_matvec_t(g.dx, params.W_h, da_c);

  Vector drh(d);
  add_matvec_t(drh, params.U_h, da_c);
  Vector dr(d), da_r(d), da_z(d);
  for (int i = 0; i < d; ++i) {
    dr[i] = drh[i] * t.h_prev[i];
    g.dh_prev[i] += drh[i] * t.r[i];
    da_r[i] = dr[i] * t.r[i] * (1.0 - t.r[i]);
    da_z[i] = dz[i] * t.z[i] * (1.0 - t.z[i]);
  }
  add_outer(g.dW_r, da_r, t.x);
  add_outer(g.dU_r, da_r, t.h_prev);
  add_matvec_t(g.dx, params.W_r, da_r);
  add_matvec_t(g.dh_prev, params.U_r, da_r);
  add_outer(g.dW_z, da_z, t.x);
  add_outer(g.dU_z, da_z, t.h_prev);
  add_matvec_t(g.dx, params.W_z, da_z);
  add_matvec_t(g.dh_prev, params.U_z, da_z);
  return g;
}

LstmParams LstmParams::init(int d, int d_in, std::uint64_t seed) {
  LstmParams p;
  p.W_i = init_gate(d, d_in, seed, "W_i");
  p.W_f = init_gate(d, d_in, seed, "W_f");
  p.W_o = init_gate(d, d_in, seed, "W_o");
  p.W_c = init_gate(d, d_in, seed, "W_c");
  p.U_i = init_gate(d, d, seed, "U_i");
  p.U_f = init_gate(d, d, seed, "U_f");
  p.U_o = init_gate(d, d, seed, "U_o");
  p.U_c = init_gate(d, d, seed, "U_c");
  return p;
}

LstmTrace lstm_step(const LstmParams &params, const Vector &h_prev, const Vector &c_prev,
                    const Vector &x) {
  const int d = params.d();
  if (h_prev.len() != d) shape_error("lstm_step h_prev", h_prev.len(), 1, d, 1);
  if (c_prev.len() != d) shape_error("lstm_step c_prev", c_prev.len(), 1, d, 1);
  if (x.len() != params.d_in()) shape_error("lstm_step x", x.len(), 1, params.d_in(), 1);

  LstmTrace t;
  t.x = x;
  t.h_prev = h_prev;
  t.c_prev = c_prev;
  t.i = Vector(d);
  t.f = Vector(d);
  t.o = Vector(d);
  t.c_cand = Vector(d);
  t.c_t = Vector(d);
  t.h_t = Vector(d);

  const Vector ai = matvec(params.W_i, x), ui = matvec(params.U_i, h_prev);
  const Vector af = matvec(params.W_f, x), uf = matvec(params.U_f, h_prev);
  const Vector ao = matvec(params.W_o, x), uo = matvec(params.U_o, h_prev);
  const Vector ac = matvec(params.W_c, x), uc = matvec(params.U_c, h_prev);
  for (int k = 0; k < d; ++k) {
    t.i[k] = sigmoid(ai[k] + ui[k]);
    t.f[k] = sigmoid(af[k] + uf[k]);
    t.o[k] = sigmoid(ao[k] + uo[k]);
    t.c_cand[k] = std::tanh(ac[k] + uc[k]);
    t.c_t[k] = t.f[k] * c_prev[k] + t.i[k] * t.c_cand[k];
    t.h_t[k] = t.o[k] * std::tanh(t.c_t[k]);
  }
  return t;
}

LstmGradients LstmGradients::zeros(int d, int d_in) {
  LstmGradients g;
  g.dW_i = Matrix(d, d_in);
  g.dW_f = Matrix(d, d_in);
  g.dW_o = Matrix(d, d_in);
  g.dW_c = Matrix(d, d_in);
  g.dU_i = Matrix(d, d);
  g.dU_f = Matrix(d, d);
  g.dU_o = Matrix(d, d);
  g.dU_c = Matrix(d, d);
  g.dh_prev = Vector(d);
  g.dc_prev = Vector(d);
  g.dx = Vector(d_in);
  return g;
}

void LstmGradients::add_params(const LstmGradients &o) {
  auto addm = [](Matrix &a, const Matrix &b) {
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
  };
  addm(dW_i, o.dW_i);
  addm(dW_f, o.dW_f);
  addm(dW_o, o.dW_o);
  addm(dW_c, o.dW_c);
  addm(dU_i, o.dU_i);
  addm(dU_f, o.dU_f);
  addm(dU_o, o.dU_o);
  addm(dU_c, o.dU_c);
}

LstmGradients lstm_backward(const LstmParams &params, const LstmTrace &t,
                            const Vector &upstream_h, const Vector &upstream_c) {
  const int d = params.d(), d_in = params.d_in();
  LstmGradients g = LstmGradients::zeros(d, d_in);

  Vector dc(d), do_(d);
  for (int k = 0; k < d; ++k) {
    const double th = std::tanh(t.c_t[k]);
    do_[k] = upstream_h[k] * th;
    dc[k] = upstream_h[k] * t.o[k] * (1.0 - th * th);
    if (upstream_c.len() == d) dc[k] += upstream_c[k];
  }
  Vector di(d), df(d), dcand(d);
  Vector da_i(d), da_f(d), da_o(d), da_c(d);
  for (int k = 0; k < d; ++k) {
    df[k] = dc[k] * t.c_prev[k];
    g.dc_prev[k] = dc[k] * t.f[k];
    di[k] = dc[k] * t.c_cand[k];
    dcand[k] = dc[k] * t.i[k];
    da_i[k] = di[k] * t.i[k] * (1.0 - t.i[k]);
    da_f[k] = df[k] * t.f[k] * (1.0 - t.f[k]);
    da_o[k] = do_[k] * t.o[k] * (1.0 - t.o[k]);
    da_c[k] = dcand[k] * (1.0 - t.c_cand[k] * t.c_cand[k]);
  }
  add_outer(g.dW_i, da_i, t.x);
  add_outer(g.dW_f, da_f, t.x);
  add_outer(g.dW_o, da_o, t.x);
  add_outer(g.dW_c, da_c, t.x);
  add_outer(g.dU_i, da_i, t.h_prev);
  add_outer(g.dU_f, da_f, t.h_prev);
  add_outer(g.dU_o, da_o, t.h_prev);
  add_outer(g.dU_c, da_c, t.h_prev);
  add_matvec_t(g.dx, params.W_i, da_i);
  add_matvec_t(g.dx, params.W_f, da_f);
  add_matvec_t(g.dx, params.W_o, da_o);
  add_matvec_t(g.dx, params.W_c, da_c);
  add_matvec_t(g.dh_prev, params.U_i, da_i);
  add_matvec_t(g.dh_prev, params.U_f, da_f);
  add_matvec_t(g.dh_prev, params.U_o, da_o);
  add_matvec_t(g.dh_prev, params.U_c, da_c);
  return g;
}

} // namespace tpru
