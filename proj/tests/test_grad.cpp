#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <cstring>

#include "tpru/grad.hpp"

using namespace tpru;

namespace {

bool bits_equal(const std::vector<double> &a, const std::vector<double> &b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * 8) == 0;
}

StepTrace trace_with_filler(const std::vector<double> &f) {
  // a synthetic H=1 trace carrying just enough for normalization_jacobian
  const int n = static_cast<int>(f.size());
  StepTrace t;
  t.f = Matrix(n, 1);
  t.f_tilde = Matrix(n, 1);
  t.f_b = Matrix(n, 1);
  t.f_x = Matrix(n, 1);
  t.b_prev = Vector(1);
  t.b_cand = Vector(1);
  t.g = Vector(1);
  t.g[0] = 0.5;
  for (int i = 0; i < n; ++i) {
    t.f(i, 0) = f[i];
    t.f_tilde(i, 0) = std::sqrt(f[i]); // consistent with sum f~^2 = 1
    t.f_b(i, 0) = t.f_tilde(i, 0);
    t.f_x(i, 0) = -1.0;
  }
  return t;
}

// simplex vector from random positives
std::vector<double> random_simplex(int n, std::uint64_t seed) {
  std::vector<double> f(n);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    f[i] = uniform01(seed, i) + 1e-4;
    sum += f[i];
  }
  for (double &v : f) v /= sum;
  return f;
}

struct TinyProblem {
  TpruParams params;
  RoleBasis basis;
  SliceConfig slices{1};
  Vector b0;
  std::vector<Vector> xs, ws;

  static TinyProblem make(int d, int d_in, int roles, int steps, int H, std::uint64_t seed) {
    TinyProblem p;
    p.slices.count = H;
    p.params = TpruParams::init(d, d_in, derive_seed(seed, "p"));
    p.params.b_b = 0.05;
    p.params.b_x = -0.04;
    p.basis = RoleBasis::init(d, roles, derive_seed(seed, "b"));
    p.b0 = sample_normal_vector(derive_seed(seed, "b0"), d, 1.0);
    for (int t = 0; t < steps; ++t) {
      p.xs.push_back(sample_normal_vector(mix64(derive_seed(seed, "x"), t), d_in, 1.0));
      p.ws.push_back(sample_normal_vector(mix64(derive_seed(seed, "w"), t), d, 1.0));
    }
    return p;
  }

  std::vector<StepTrace> rollout() const {
    const DerivedRoles dr = derive_role_matrices(basis);
    std::vector<StepTrace> out;
    Vector b = b0;
    for (const Vector &x : xs) {
      out.push_back(step(params, dr, slices, b, x));
      b = out.back().b_t;
    }
    return out;
  }

  double loss() const {
    const auto traces = rollout();
    double total = 0.0;
    for (size_t t = 0; t < traces.size(); ++t) total += dot(ws[t], traces[t].b_t);
    return total;
  }
};

} // namespace

TEST_SUITE("grad") {

TEST_CASE("normalization Jacobian on fixed fillers") {
  SUBCASE("one-hot filler kills J") {
    const auto parts = normalization_jacobian(trace_with_filler({0.0, 1.0, 0.0}));
    for (double v : parts.J.data) CHECK(v == 0.0);
  }
  SUBCASE("uniform two-slot filler") {
    const auto parts = normalization_jacobian(trace_with_filler({0.5, 0.5}));
    CHECK(parts.J(0, 0) == doctest::Approx(0.25));
    CHECK(parts.J(0, 1) == doctest::Approx(-0.25));
    CHECK(parts.J(1, 0) == doctest::Approx(-0.25));
    CHECK(parts.J(1, 1) == doctest::Approx(0.25));
    const auto eig = symmetric_eigenvalues(parts.J);
    CHECK(eig.front() == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(eig.back() == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(eig.back() <= 0.5 + 1e-10);
  }
  SUBCASE("gate diagonals") {
    const auto parts = normalization_jacobian(trace_with_filler({0.5, 0.5}));
    for (int i = 0; i < parts.l2.len(); ++i)
      CHECK(parts.l2[i] + parts.l3[i] == doctest::Approx(1.0));
  }
}

TEST_CASE("J is PSD with eigenvalues bounded by max filler") {
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(mix64(800, trial) % 63);
    const auto f = random_simplex(n, mix64(801, trial));
    const auto parts = normalization_jacobian(trace_with_filler(f));
    const auto eig = symmetric_eigenvalues(parts.J);
    double fmax = 0.0;
    for (double v : f) fmax = std::max(fmax, v);
    CHECK(eig.front() >= -1e-10);
    CHECK(eig.back() <= fmax + 1e-10);

    // quadratic-form route, independent of the eigensolver
    for (int probe = 0; probe < 8; ++probe) {
      const Vector v = sample_normal_vector(mix64(802, trial * 13 + probe), n, 1.0);
      double quad = 0.0, norm2 = 0.0;
      for (int i = 0; i < n; ++i) {
        norm2 += v[i] * v[i];
        for (int j = 0; j < n; ++j) quad += v[i] * parts.J(i, j) * v[j];
      }
      CHECK(quad >= -1e-12 * norm2);
    }
  }
}

TEST_CASE("step_backward zero upstream, zero gradients") {
  const TinyProblem p = TinyProblem::make(5, 3, 7, 1, 1, 42);
  const auto traces = p.rollout();
  const StepGradients g = step_backward(traces[0], p.basis, p.params, p.slices, Vector(5));
  for (double v : g.dW_u.data) CHECK(v == 0.0);
  for (double v : g.dV_b.data) CHECK(v == 0.0);
  for (double v : g.db_prev.data) CHECK(v == 0.0);
  CHECK(g.db_b == 0.0);
  CHECK(g.db_x == 0.0);
}

TEST_CASE("frozen gate splits the upstream in half") {
  // W_b = W_x = 0 so g = 0.5 everywhere and the gate path vanishes
  TinyProblem p = TinyProblem::make(5, 3, 7, 1, 1, 43);
  p.params.W_b = Matrix(5, 5);
  p.params.W_x = Matrix(5, 3);
  const auto traces = p.rollout();
  const Vector u = sample_normal_vector(44, 5, 1.0);
  const StepGradients g = step_backward(traces[0], p.basis, p.params, p.slices, u);

  const StateJacobian sj = state_jacobian(traces[0], p.basis, p.params, p.slices);
  for (int j = 0; j < 5; ++j) {
    double want = 0.5 * u[j];
    for (int i = 0; i < 5; ++i) want += 0.5 * sj.candidate(i, j) * u[i];
    CHECK(g.db_prev[j] == doctest::Approx(want).epsilon(1e-10));
  }
}

TEST_CASE("analytic gradients match finite differences (spot checks)") {
  // the full 50-configuration sweep runs in the acceptance suite
  const GradcheckReport rep = run_gradcheck_suite(6, 2024);
  CHECK(rep.passed);
  CHECK(rep.worst <= 1e-5);
}

TEST_CASE("bptt") {
  SUBCASE("T=1 equals step_backward") {
    const TinyProblem p = TinyProblem::make(5, 3, 7, 1, 1, 45);
    const auto traces = p.rollout();
    const StepGradients lone = step_backward(traces[0], p.basis, p.params, p.slices, p.ws[0]);
    const BpttResult chained = bptt(traces, p.ws, p.basis, p.params, p.slices);
    CHECK(bits_equal(lone.dW_u.data, chained.grads.dW_u.data));
    CHECK(bits_equal(lone.dV_b.data, chained.grads.dV_b.data));
    CHECK(bits_equal(lone.db_prev.data, chained.grads.db_prev.data));
    CHECK(bits_equal(lone.dx.data, chained.dx[0].data));
  }
  SUBCASE("gradients are linear in the upstream signals") {
    const TinyProblem p = TinyProblem::make(5, 3, 7, 3, 1, 46);
    const auto traces = p.rollout();
    std::vector<Vector> w2;
    for (int t = 0; t < 3; ++t) w2.push_back(sample_normal_vector(mix64(47, t), 5, 1.0));
    std::vector<Vector> sum;
    for (int t = 0; t < 3; ++t) {
      Vector s = p.ws[t];
      for (int i = 0; i < 5; ++i) s[i] += w2[t][i];
      sum.push_back(std::move(s));
    }
    const BpttResult a = bptt(traces, p.ws, p.basis, p.params, p.slices);
    const BpttResult b = bptt(traces, w2, p.basis, p.params, p.slices);
    const BpttResult c = bptt(traces, sum, p.basis, p.params, p.slices);
    for (size_t i = 0; i < c.grads.dW_u.data.size(); ++i)
      CHECK(c.grads.dW_u.data[i] ==
            doctest::Approx(a.grads.dW_u.data[i] + b.grads.dW_u.data[i]).epsilon(1e-10));
    CHECK(c.grads.db_b == doctest::Approx(a.grads.db_b + b.grads.db_b).epsilon(1e-10));
  }
  SUBCASE("broken chains are rejected") {
    const TinyProblem p = TinyProblem::make(5, 3, 7, 2, 1, 48);
    auto traces = p.rollout();
    traces[1].b_prev[0] += 1e-9;
    CHECK_THROWS_AS((void)bptt(traces, p.ws, p.basis, p.params, p.slices),
                    std::invalid_argument);
  }
}

TEST_CASE("state Jacobian") {
  SUBCASE("matches directional finite differences") {
    for (int trial = 0; trial < 4; ++trial) {
      TinyProblem p = TinyProblem::make(5, 3, 7, 1, 1, 100 + trial);
      const auto traces = p.rollout();
      const StateJacobian sj = state_jacobian(traces[0], p.basis, p.params, p.slices);
      const DerivedRoles dr = derive_role_matrices(p.basis);
      const double h = 1e-6;
      for (int k = 0; k < 5; ++k) {
        Vector plus = p.b0, minus = p.b0;
        plus[k] += h;
        minus[k] -= h;
        const StepTrace tp = step(p.params, dr, p.slices, plus, p.xs[0]);
        const StepTrace tm = step(p.params, dr, p.slices, minus, p.xs[0]);
        for (int j = 0; j < 5; ++j) {
          const double fd_full = (tp.b_t[j] - tm.b_t[j]) / (2 * h);
          const double fd_cand = (tp.b_cand[j] - tm.b_cand[j]) / (2 * h);
          CHECK(std::abs(fd_full - sj.full(j, k)) <= 1e-5);
          CHECK(std::abs(fd_cand - sj.candidate(j, k)) <= 1e-5);
        }
      }
    }
  }
  SUBCASE("forced zero gate turns the full Jacobian into the identity") {
    const TinyProblem p = TinyProblem::make(5, 3, 7, 1, 1, 300);
    const DerivedRoles dr = derive_role_matrices(p.basis);
    const Vector zeros(5);
    const StepTrace t =
        step(p.params, dr, p.slices, p.b0, p.xs[0], Normalization::relu_squared, &zeros);
    const StateJacobian sj = state_jacobian(t, p.basis, p.params, p.slices);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 5; ++j) CHECK(sj.full(i, j) == (i == j ? 1.0 : 0.0));
  }
}

TEST_CASE("forced-copy chain keeps gradients intact over 100 steps") {
  const int d = 6, steps = 100;
  const TinyProblem base = TinyProblem::make(d, 3, 8, 1, 1, 400);
  const DerivedRoles dr = derive_role_matrices(base.basis);
  const Vector zeros(d);

  std::vector<StepTrace> traces;
  Vector b = base.b0;
  for (int t = 0; t < steps; ++t) {
    traces.push_back(step(base.params, dr, SliceConfig{1}, b,
                          sample_normal_vector(mix64(401, t), 3, 1.0),
                          Normalization::relu_squared, &zeros));
    b = traces.back().b_t;
  }
  CHECK(bits_equal(b.data, base.b0.data)); // pure copy, bit-exact

  std::vector<Vector> ups(steps, Vector(d));
  const Vector u = sample_normal_vector(402, d, 1.0);
  ups.back() = u;
  const BpttResult res = bptt(traces, ups, base.basis, base.params, SliceConfig{1});
  CHECK(bits_equal(res.grads.db_prev.data, u.data));
}

TEST_CASE("dW_u rows live in the span of E's columns") {
  // meaningful only when N < d
  const int d = 8, roles = 3;
  TinyProblem p = TinyProblem::make(d, 3, roles, 2, 1, 500);
  const auto traces = p.rollout();
  const BpttResult res = bptt(traces, p.ws, p.basis, p.params, p.slices);

  // Gram-Schmidt on the columns of E
  std::vector<Vector> basis_vecs;
  for (int n = 0; n < roles; ++n) {
    Vector v(d);
    for (int i = 0; i < d; ++i) v[i] = p.basis.E(i, n);
    for (const Vector &q : basis_vecs) axpy(v, -dot(v, q), q);
    const double norm = std::sqrt(dot(v, v));
    REQUIRE(norm > 1e-9);
    for (double &x : v.data) x /= norm;
    basis_vecs.push_back(std::move(v));
  }
  for (int i = 0; i < d; ++i) {
    Vector row(d);
    for (int j = 0; j < d; ++j) row[j] = res.grads.dW_u(i, j);
    Vector residual = row;
    for (const Vector &q : basis_vecs) axpy(residual, -dot(row, q), q);
    CHECK(std::sqrt(dot(residual, residual)) <= 1e-8);
  }
}

TEST_CASE("variant analyses") {
  const int d = 6, d_in = 4, roles = 9;
  for (int trial = 0; trial < 3; ++trial) {
    const std::uint64_t s = mix64(600, trial);
    TpruParams params = TpruParams::init(d, d_in, derive_seed(s, "p"));
    RoleBasis basis = RoleBasis::init(d, roles, derive_seed(s, "b"));
    const Vector b_prev = sample_normal_vector(derive_seed(s, "bp"), d, 1.0);
    const Vector x = sample_normal_vector(derive_seed(s, "x"), d_in, 1.0);
    const SliceConfig slices{1};

    for (const Variant variant : {Variant::mod1, Variant::mod2, Variant::mod3}) {
      auto [vp, vb] = make_variant_params(variant, params, basis);
      const StepTrace t =
          step(vp, derive_role_matrices(vb), slices, b_prev, x, Normalization::softmax);
      const VariantReport rep = analyze_variant(t, vb, vp, slices, variant);
      CHECK(rep.passed);
      if (variant == Variant::mod1) {
        CHECK(rep.candidate_symmetry_defect <= 1e-10);
        CHECK(rep.candidate_min_eig >= -1e-8);
      }
      if (variant == Variant::mod2) CHECK(rep.outer_product_max_err <= 1e-6);
      if (variant == Variant::mod3)
        for (bool ok : rep.shift_invariant) CHECK(ok);
    }

    // the full design's Eq.-7-style decomposition against finite differences
    const StepTrace t = step(params, derive_role_matrices(basis), slices, b_prev, x);
    const VariantReport rep = analyze_variant(t, basis, params, slices, Variant::full);
    CHECK(rep.passed);
  }
}

TEST_CASE("variant/parameter inconsistency is rejected") {
  const int d = 4;
  TpruParams params = TpruParams::init(d, 3, 1);
  RoleBasis basis = RoleBasis::init(d, 5, 2);
  const Vector b_prev = sample_normal_vector(3, d, 1.0);
  const Vector x = sample_normal_vector(4, 3, 1.0);
  // untied W_r != W_u with a mod1 claim
  const StepTrace t =
      step(params, derive_role_matrices(basis), SliceConfig{1}, b_prev, x, Normalization::softmax);
  CHECK_THROWS_AS((void)analyze_variant(t, basis, params, SliceConfig{1}, Variant::mod1),
                  std::invalid_argument);
  // relu-squared trace with a softmax-variant claim
  const StepTrace t2 = step(params, derive_role_matrices(basis), SliceConfig{1}, b_prev, x);
  CHECK_THROWS_AS((void)analyze_variant(t2, basis, params, SliceConfig{1}, Variant::mod3),
                  std::invalid_argument);
}

TEST_CASE("softmax shift invariance is bitwise on grid inputs") {
  Matrix f(8, 1);
  for (int n = 0; n < 8; ++n) f(n, 0) = normal01(700, n);
  for (double c : {-5.0, 0.1, 3.7}) CHECK(softmax_shift_invariant(f, c));
}

TEST_CASE("finite_diff_check") {
  SUBCASE("quadratic with a known gradient") {
    std::vector<double> w{1.3, -0.7, 2.2};
    auto loss = [&] { return w[0] * w[0] + 3.0 * w[1] * w[1] + 0.5 * w[2] * w[2]; };
    const std::vector<FdSlot> slots{{&w[0], "w0"}, {&w[1], "w1"}, {&w[2], "w2"}};
    const std::vector<double> analytic{2.0 * w[0], 6.0 * w[1], 1.0 * w[2]};
    const FdReport rep = finite_diff_check(loss, slots, analytic, 1e-5, 1e-5);
    CHECK(rep.passed);
    CHECK(rep.max_rel_error <= 1e-9);
  }
  SUBCASE("a corrupted analytic entry is flagged") {
    TinyProblem p = TinyProblem::make(4, 3, 6, 1, 1, 800);
    const auto traces = p.rollout();
    BpttResult res = bptt(traces, p.ws, p.basis, p.params, p.slices);
    res.grads.dV_b(1, 2) += 0.1; // deliberate corruption

    std::vector<FdSlot> slots;
    std::vector<double> analytic;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        slots.push_back({&p.params.V_b(i, j), "V_b"});
        analytic.push_back(res.grads.dV_b(i, j));
      }
    const FdReport rep =
        finite_diff_check([&] { return p.loss(); }, slots, analytic, 1e-5, 1e-5);
    CHECK_FALSE(rep.passed);
    CHECK(rep.flagged.size() == 1);
  }
}

} // TEST_SUITE
