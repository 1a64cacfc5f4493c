// The TPRU recurrent cell: one step is gate -> unbind -> relu-squared
// normalize -> bind -> gated state update. Role and unbinding matrices are
// learned projections of a fixed random basis E (U = W_u E, R = W_r E).
#pragma once

#include <cstdint>
#include <string>

#include "tpru/linalg.hpp"

namespace tpru {

enum class CellKind { tpru, gru, lstm };

std::string cell_kind_name(CellKind k);
CellKind parse_cell_kind(std::string_view s);

// Number of slices H the binding complex is split into. H must divide d;
// fillers become H-dimensional vectors (one scalar per slice).
struct SliceConfig {
  int count = 1;
  int slice_len(int d) const;
};

// Fixed random basis plus the two learned projections that produce the
// unbinding matrix U and the binding matrix R.
struct RoleBasis {
  Matrix E;   // d x N, sampled once, never trained
  Matrix W_u; // d x d
  Matrix W_r; // d x d

  int d() const { return E.rows; }
  int roles() const { return E.cols; }

  // E ~ N(0, 1/sqrt(d)); W_u, W_r ~ N(0, 1/sqrt(d)).
  static RoleBasis init(int d, int roles, std::uint64_t seed);
};

struct TpruParams {
  Matrix V_b; // d x d
  Matrix V_x; // d x d_in
  Matrix W_b; // d x d
  Matrix W_x; // d x d_in
  double b_b = 0.0; // shared scalar bias, state path
  double b_x = 0.0; // shared scalar bias, input path

  int d() const { return V_b.rows; }
  int d_in() const { return V_x.cols; }

  static TpruParams init(int d, int d_in, std::uint64_t seed);
};

struct DerivedRoles {
  Matrix U; // d x N
  Matrix R; // d x N
};

// How the rectified pre-fillers are normalized. The TPRU uses relu_squared;
// softmax exists for the Modification I-III analyses.
enum class Normalization { relu_squared, softmax };

// Cached intermediates of one forward step, sufficient for the analytic
// backward pass. Filler blocks are N x H (column h = slice h).
struct StepTrace {
  Vector x;       // d_in
  Vector b_prev;  // d
  Matrix f_b;     // N x H   raw unbinding of the state path
  Matrix f_x;     // N x H   raw unbinding of the input path
  Matrix f_tilde; // N x H   rectified sums (pre-normalization)
  Matrix f;       // N x H   normalized fillers; each slice on the simplex or zero
  Vector b_cand;  // d       bound candidate
  Vector g;       // d       gate
  Vector b_t;     // d       new state
  double b_b = 0.0, b_x = 0.0; // bias values in effect at this step
  Normalization norm = Normalization::relu_squared;
  bool gate_forced = false; // gate was overridden, not computed through sigmoid

  int roles() const { return f.rows; }
  int slices() const { return f.cols; }
};

// Below a denominator of eps_denom, a slice's fillers are exactly zero: no
// candidate contribution, and the gate still copies b_prev through.
inline constexpr double kNormalizationEps = 1e-30;

DerivedRoles derive_role_matrices(const RoleBasis &basis);

struct UnboundFillers {
  Matrix f_b; // N x H
  Matrix f_x; // N x H
};
// f_b[n,h] = <slice h of u_n, slice h of V_b b_prev>, same for f_x with V_x x.
UnboundFillers unbind(const Matrix &U, const TpruParams &params, const Vector &b_prev,
                      const Vector &x, const SliceConfig &slices);

struct NormalizedFillers {
  Matrix f_tilde; // N x H
  Matrix f;       // N x H
};
// f_tilde = relu(f_b + b_b) + relu(f_x + b_x); per slice,
// f = f_tilde^2 / sum(f_tilde^2) (zero slice when the denominator vanishes).
NormalizedFillers normalize_fillers(const Matrix &f_b, const Matrix &f_x, double b_b,
                                    double b_x, const SliceConfig &slices);

// Softmax over one slice, computed with max subtraction: shifting every
// input by the same constant cancels before exp, so exactly-representable
// shifts leave the output bit-identical.
void softmax_slice(std::span<const double> in, std::span<double> out);

// Slice h of the output is sum_n f[n,h] * (slice h of r_n); slices concatenated.
Vector bind(const Matrix &R, const Matrix &f, const SliceConfig &slices);

struct GateResult {
  Vector g;
  Vector b_t;
};
// g = sigmoid(W_b b_prev + W_x x); b_t = g o b_cand + (1-g) o b_prev.
GateResult gated_update(const TpruParams &params, const Vector &b_prev, const Vector &x,
                        const Vector &b_cand);

StepTrace step(const TpruParams &params, const RoleBasis &basis, const SliceConfig &slices,
               const Vector &b_prev, const Vector &x);
// Hot-loop variant: U, R already derived (they only change when parameters
// do). gate_override, when given, replaces the computed gate; used by the
// copy-path diagnostics. norm selects the analysis-only softmax path.
StepTrace step(const TpruParams &params, const DerivedRoles &derived,
               const SliceConfig &slices, const Vector &b_prev, const Vector &x,
               Normalization norm = Normalization::relu_squared,
               const Vector *gate_override = nullptr);

// Trainable matrix element counts (scalar biases excluded):
// TPRU 4d^2+2dd', LSTM 4d^2+4dd', GRU 3d^2+3dd'.
long long param_count(CellKind kind, int d, int d_in);

// Dominant multiply count of one forward step:
// TPRU 2Nd+6d^2, LSTM 8d^2, GRU 6d^2.
struct StepCost {
  std::string expression;
  long long multiplies = 0;
};
StepCost step_cost(CellKind kind, int d, int d_in, int roles);

} // namespace tpru
