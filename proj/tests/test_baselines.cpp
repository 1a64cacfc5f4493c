#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "tpru/baselines.hpp"
#include "tpru/cell.hpp"
#include "tpru/grad.hpp"

using namespace tpru;

TEST_SUITE("baselines") {

TEST_CASE("gru zero parameters") {
  const int d = 4, d_in = 3;
  GruParams p;
  p.W_z = Matrix(d, d_in);
  p.W_r = Matrix(d, d_in);
  p.W_h = Matrix(d, d_in);
  p.U_z = Matrix(d, d);
  p.U_r = Matrix(d, d);
  p.U_h = Matrix(d, d);
  const Vector h = sample_normal_vector(1, d, 1.0);
  const GruTrace t = gru_step(p, h, sample_normal_vector(2, d_in, 1.0));
  for (int i = 0; i < d; ++i) {
    CHECK(t.z[i] == 0.5);
    CHECK(t.h_cand[i] == 0.0);
    CHECK(t.h_t[i] == doctest::Approx(0.5 * h[i]).epsilon(1e-15));
  }
  const GruTrace t0 = gru_step(p, Vector(d), Vector(d_in));
  for (int i = 0; i < d; ++i) CHECK(t0.h_t[i] == 0.0);
}

TEST_CASE("lstm zero parameters") {
  const int d = 4, d_in = 3;
  LstmParams p;
  p.W_i = Matrix(d, d_in);
  p.W_f = Matrix(d, d_in);
  p.W_o = Matrix(d, d_in);
  p.W_c = Matrix(d, d_in);
  p.U_i = Matrix(d, d);
  p.U_f = Matrix(d, d);
  p.U_o = Matrix(d, d);
  p.U_c = Matrix(d, d);
  const Vector c = sample_normal_vector(3, d, 1.0);
  const LstmTrace t =
      lstm_step(p, sample_normal_vector(4, d, 1.0), c, sample_normal_vector(5, d_in, 1.0));
  for (int i = 0; i < d; ++i) {
    CHECK(t.i[i] == 0.5);
    CHECK(t.c_t[i] == doctest::Approx(0.5 * c[i]).epsilon(1e-15));
    CHECK(t.h_t[i] == doctest::Approx(0.5 * std::tanh(t.c_t[i])).epsilon(1e-15));
  }
  const LstmTrace t0 = lstm_step(p, Vector(d), Vector(d), Vector(d_in));
  for (int i = 0; i < d; ++i) CHECK(t0.h_t[i] == 0.0);
}

TEST_CASE("gru backward matches finite differences") {
  const int d = 5, d_in = 4, steps = 3;
  GruParams params = GruParams::init(d, d_in, 77);
  Vector h0 = sample_normal_vector(78, d, 1.0);
  std::vector<Vector> xs, ws;
  for (int t = 0; t < steps; ++t) {
    xs.push_back(sample_normal_vector(mix64(79, t), d_in, 1.0));
    ws.push_back(sample_normal_vector(mix64(80, t), d, 1.0));
  }

  auto loss = [&] {
    Vector h = h0;
    double total = 0.0;
    for (int t = 0; t < steps; ++t) {
      const GruTrace tr = gru_step(params, h, xs[t]);
      total += dot(ws[t], tr.h_t);
      h = tr.h_t;
    }
    return total;
  };

  // analytic: chain per-step backward
  std::vector<GruTrace> traces;
  {
    Vector h = h0;
    for (int t = 0; t < steps; ++t) {
      traces.push_back(gru_step(params, h, xs[t]));
      h = traces.back().h_t;
    }
  }
  GruGradients acc = GruGradients::zeros(d, d_in);
  Vector carry(d);
  std::vector<Vector> dxs(steps);
  for (int t = steps - 1; t >= 0; --t) {
    Vector u = ws[t];
    for (int i = 0; i < d; ++i) u[i] += carry[i];
    GruGradients g = gru_backward(params, traces[t], u);
    acc.add_params(g);
    dxs[t] = g.dx;
    carry = g.dh_prev;
  }

  std::vector<FdSlot> slots;
  std::vector<double> analytic;
  auto push = [&](Matrix &m, const Matrix &g, const char *name) {
    for (int i = 0; i < m.rows; ++i)
      for (int j = 0; j < m.cols; ++j) {
        slots.push_back({&m(i, j), name});
        analytic.push_back(g(i, j));
      }
  };
  push(params.W_z, acc.dW_z, "W_z");
  push(params.W_r, acc.dW_r, "W_r");
  push(params.W_h, acc.dW_h, "W_h");
  push(params.U_z, acc.dU_z, "U_z");
  push(params.U_r, acc.dU_r, "U_r");
  push(params.U_h, acc.dU_h, "U_h");
  for (int i = 0; i < d; ++i) {
    slots.push_back({&h0[i], "h0"});
    analytic.push_back(carry[i]);
  }
  for (int t = 0; t < steps; ++t)
    for (int i = 0; i < d_in; ++i) {
      slots.push_back({&xs[t][i], "x"});
      analytic.push_back(dxs[t][i]);
    }
  const FdReport rep = finite_diff_check(loss, slots, analytic, 1e-5, 1e-5);
  CHECK(rep.passed);
}

TEST_CASE("lstm backward matches finite differences") {
  const int d = 5, d_in = 4, steps = 3;
  LstmParams params = LstmParams::init(d, d_in, 91);
  Vector h0 = sample_normal_vector(92, d, 1.0);
  Vector c0 = sample_normal_vector(93, d, 1.0);
  std::vector<Vector> xs, ws;
  for (int t = 0; t < steps; ++t) {
    xs.push_back(sample_normal_vector(mix64(94, t), d_in, 1.0));
    ws.push_back(sample_normal_vector(mix64(95, t), d, 1.0));
  }

  auto loss = [&] {
    Vector h = h0, c = c0;
    double total = 0.0;
    for (int t = 0; t < steps; ++t) {
      const LstmTrace tr = lstm_step(params, h, c, xs[t]);
      total += dot(ws[t], tr.h_t);
      h = tr.h_t;
      c = tr.c_t;
    }
    return total;
  };

  std::vector<LstmTrace> traces;
  {
    Vector h = h0, c = c0;
    for (int t = 0; t < steps; ++t) {
      traces.push_back(lstm_step(params, h, c, xs[t]));
      h = traces.back().h_t;
      c = traces.back().c_t;
    }
  }
  LstmGradients acc = LstmGradients::zeros(d, d_in);
  Vector carry_h(d), carry_c(d);
  std::vector<Vector> dxs(steps);
  for (int t = steps - 1; t >= 0; --t) {
    Vector u = ws[t];
    for (int i = 0; i < d; ++i) u[i] += carry_h[i];
    LstmGradients g = lstm_backward(params, traces[t], u, carry_c);
    acc.add_params(g);
    dxs[t] = g.dx;
    carry_h = g.dh_prev;
    carry_c = g.dc_prev;
  }

  std::vector<FdSlot> slots;
  std::vector<double> analytic;
  auto push = [&](Matrix &m, const Matrix &g) {
    for (int i = 0; i < m.rows; ++i)
      for (int j = 0; j < m.cols; ++j) {
        slots.push_back({&m(i, j), "p"});
        analytic.push_back(g(i, j));
      }
  };
  push(params.W_i, acc.dW_i);
  push(params.W_f, acc.dW_f);
  push(params.W_o, acc.dW_o);
  push(params.W_c, acc.dW_c);
  push(params.U_i, acc.dU_i);
  push(params.U_f, acc.dU_f);
  push(params.U_o, acc.dU_o);
  push(params.U_c, acc.dU_c);
  for (int i = 0; i < d; ++i) {
    slots.push_back({&h0[i], "h0"});
    analytic.push_back(carry_h[i]);
  }
  for (int i = 0; i < d; ++i) {
    slots.push_back({&c0[i], "c0"});
    analytic.push_back(carry_c[i]);
  }
  for (int t = 0; t < steps; ++t)
    for (int i = 0; i < d_in; ++i) {
      slots.push_back({&xs[t][i], "x"});
      analytic.push_back(dxs[t][i]);
    }
  const FdReport rep = finite_diff_check(loss, slots, analytic, 1e-5, 1e-5);
  CHECK(rep.passed);
}

TEST_CASE("instantiated element counts match the accounting") {
  for (int trial = 0; trial < 5; ++trial) {
    const int d = 2 + static_cast<int>(mix64(96, trial) % 10);
    const int d_in = 1 + static_cast<int>(mix64(97, trial) % 8);
    const GruParams g = GruParams::init(d, d_in, trial);
    const long long gru_elems =
        static_cast<long long>(g.W_z.size() + g.W_r.size() + g.W_h.size() + g.U_z.size() +
                               g.U_r.size() + g.U_h.size());
    CHECK(gru_elems == param_count(CellKind::gru, d, d_in));

    const LstmParams l = LstmParams::init(d, d_in, trial);
    const long long lstm_elems =
        static_cast<long long>(l.W_i.size() + l.W_f.size() + l.W_o.size() + l.W_c.size() +
                               l.U_i.size() + l.U_f.size() + l.U_o.size() + l.U_c.size());
    CHECK(lstm_elems == param_count(CellKind::lstm, d, d_in));
  }
}

} // TEST_SUITE
