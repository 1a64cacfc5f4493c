// Analytic backward pass for the TPRU (single step and BPTT), the Jacobian
// decomposition of the state update, the Modification I-III analyses, and a
// generic central-finite-difference checker.
#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpru/cell.hpp"
#include "tpru/linalg.hpp"

namespace tpru {

struct StepGradients {
  Matrix dW_u, dW_r; // d x d
  Matrix dV_b, dW_b; // d x d
  Matrix dV_x, dW_x; // d x d_in
  double db_b = 0.0, db_x = 0.0;
  Vector db_prev; // d
  Vector dx;      // d_in

  static StepGradients zeros(int d, int d_in);
  void add(const StepGradients &other); // fixed elementwise accumulation
};

// Pieces of the state-update Jacobian. Diagonal matrices are stored as their
// diagonals. Filler-space parts have one block per slice, flattened
// slice-major (entry (n,h) lives at index h*N + n), so H=1 gives plain N x N.
struct JacobianParts {
  Matrix J;      // NH x NH, block-diagonal across slices; symmetric PSD
  Vector n_diag; // 2/f_tilde on active slots, 0 on dead ones (identity under softmax)
  Vector s_b;    // 0/1 indicator of relu(f_b + b_b) being active
  Vector s_x;    // 0/1 indicator of relu(f_x + b_x) being active
  Vector l1;     // (b_cand - b_prev) o g o (1-g); the gate path into W_b
  Vector l2;     // g
  Vector l3;     // 1 - g
};

enum class Variant { full, mod1, mod2, mod3 };

std::string variant_name(Variant v);
Variant parse_variant(std::string_view s);

struct VariantConfig {
  Variant variant = Variant::full;
  Normalization normalization() const {
    return variant == Variant::full ? Normalization::relu_squared : Normalization::softmax;
  }
};

JacobianParts normalization_jacobian(const StepTrace &trace);

StepGradients step_backward(const StepTrace &trace, const RoleBasis &basis,
                            const TpruParams &params, const SliceConfig &slices,
                            const Vector &upstream);

struct BpttResult {
  StepGradients grads;    // parameter gradients summed over time; db_prev = dL/db_0
  std::vector<Vector> dx; // per-step input gradients
};
// per_step_upstream[t] is dL/db_t of the step-t output alone; chaining through
// time is handled here. Traces must form a consistent chain.
BpttResult bptt(std::span<const StepTrace> traces, std::span<const Vector> per_step_upstream,
                const RoleBasis &basis, const TpruParams &params, const SliceConfig &slices);

// Role-space accumulator for hot loops: gradients w.r.t. U and R are summed
// across many sequences and folded through E (dW_u = dU E^T) once per batch.
struct TpruGradAccum {
  Matrix dU, dR;             // d x N
  Matrix dV_b, dV_x, dW_b, dW_x;
  double db_b = 0.0, db_x = 0.0;

  static TpruGradAccum zeros(int d, int d_in, int roles);
  void add(const TpruGradAccum &other);
  StepGradients finalize(const Matrix &E) const;
};
// As bptt, but sums into an accumulator; returns per-step dx, writes dL/db_0
// into *db0 when given.
std::vector<Vector> bptt_accumulate(std::span<const StepTrace> traces,
                                    std::span<const Vector> per_step_upstream,
                                    const DerivedRoles &derived, const TpruParams &params,
                                    const SliceConfig &slices, TpruGradAccum &acc,
                                    Vector *db0 = nullptr);

struct StateJacobian {
  Matrix candidate; // d x d, d(b_cand)/d(b_prev)
  Matrix full;      // d x d, d(b_t)/d(b_prev)
};
StateJacobian state_jacobian(const StepTrace &trace, const RoleBasis &basis,
                             const TpruParams &params, const SliceConfig &slices,
                             Variant variant = Variant::full);

// Copies of (params, basis) with the ties/fixings of a modification applied:
// mod1 sets W_r = W_u and V_b = I, mod2 sets W_r = W_u, mod3 changes nothing.
std::pair<TpruParams, RoleBasis> make_variant_params(Variant variant, TpruParams params,
                                                     RoleBasis basis);

struct VariantReport {
  Variant variant = Variant::full;
  double candidate_symmetry_defect = 0.0; // mod1
  double candidate_min_eig = 0.0;         // mod1
  double m_min_eig = 0.0;                 // mod2: min eig of W_r E J E^T W_r^T
  double outer_product_max_err = 0.0;     // mod2: FD vs M_col_i * b_prev^T
  std::vector<double> shift_constants;    // mod3
  std::vector<bool> shift_invariant;      // mod3, aligned with shift_constants
  bool passed = false;
  std::string summary() const;
};
VariantReport analyze_variant(const StepTrace &trace, const RoleBasis &basis,
                              const TpruParams &params, const SliceConfig &slices,
                              Variant variant);

// Bitwise check that softmax(v + c) == softmax(v) per slice. Inputs and the
// shift are first snapped to a dyadic grid (multiples of 2^-26) so every
// addition is exact; the invariance is then exact, not approximate.
bool softmax_shift_invariant(const Matrix &f_tilde, double c);

// --- generic finite differences -------------------------------------------

struct FdSlot {
  double *value = nullptr;
  std::string name;
};

struct FdEntry {
  std::string name;
  double analytic = 0.0, fd = 0.0, rel_error = 0.0;
};

struct FdReport {
  double max_rel_error = 0.0;
  std::vector<FdEntry> flagged; // entries exceeding tol
  bool passed = true;
};

// Central differences per slot against the supplied analytic gradient;
// relative error is |a - fd| / max(1, |a|, |fd|).
FdReport finite_diff_check(const std::function<double()> &loss, std::span<const FdSlot> slots,
                           std::span<const double> analytic, double h, double tol);

// --- the canonical gradcheck suite ------------------------------------------

struct GradcheckCase {
  int d = 0, d_in = 0, roles = 0, slices = 1, steps = 1;
  std::uint64_t seed = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  double worst = 0.0;
  bool passed = false;
};

// Random rollouts of the full cell; analytic BPTT gradients for every
// parameter and both inputs vs central differences (h, tol). Configurations
// whose rollout has any relu pre-activation within 1e-3 of its kink are
// resampled. Deterministic per seed.
GradcheckReport run_gradcheck_suite(int num_cases, std::uint64_t seed, double h = 1e-5,
                                    double tol = 1e-5);

} // namespace tpru
