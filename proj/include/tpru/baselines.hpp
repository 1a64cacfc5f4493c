// Standard GRU and LSTM cells, forward plus hand-derived backward, used as
// comparison baselines. No gate biases, mirroring the bias-absorption
// convention the TPRU analysis uses, so parameter counts match the
// 3d^2+3dd' / 4d^2+4dd' accounting exactly.
#pragma once

#include <cstdint>

#include "tpru/linalg.hpp"

namespace tpru {

struct GruParams {
  Matrix W_z, W_r, W_h; // d x d_in (input side)
  Matrix U_z, U_r, U_h; // d x d    (recurrent side)

  int d() const { return U_z.rows; }
  int d_in() const { return W_z.cols; }
  static GruParams init(int d, int d_in, std::uint64_t seed);
};

struct GruTrace {
  Vector x, h_prev;
  Vector z, r, h_cand, h_t;
};

// z = sig(W_z x + U_z h), r = sig(W_r x + U_r h),
// h~ = tanh(W_h x + U_h (r o h)), h' = (1-z) o h + z o h~.
GruTrace gru_step(const GruParams &params, const Vector &h_prev, const Vector &x);

struct GruGradients {
  Matrix dW_z, dW_r, dW_h, dU_z, dU_r, dU_h;
  Vector dh_prev, dx;
  static GruGradients zeros(int d, int d_in);
  void add_params(const GruGradients &other);
};
GruGradients gru_backward(const GruParams &params, const GruTrace &trace,
                          const Vector &upstream);

struct LstmParams {
  Matrix W_i, W_f, W_o, W_c; // d x d_in
  Matrix U_i, U_f, U_o, U_c; // d x d

  int d() const { return U_i.rows; }
  int d_in() const { return W_i.cols; }
  static LstmParams init(int d, int d_in, std::uint64_t seed);
};

struct LstmTrace {
  Vector x, h_prev, c_prev;
  Vector i, f, o, c_cand;
  Vector c_t, h_t;
};

LstmTrace lstm_step(const LstmParams &params, const Vector &h_prev, const Vector &c_prev,
                    const Vector &x);

struct LstmGradients {
  Matrix dW_i, dW_f, dW_o, dW_c, dU_i, dU_f, dU_o, dU_c;
  Vector dh_prev, dc_prev, dx;
  static LstmGradients zeros(int d, int d_in);
  void add_params(const LstmGradients &other);
};
// upstream_c may be empty when the loss touches h_t only.
LstmGradients lstm_backward(const LstmParams &params, const LstmTrace &trace,
                            const Vector &upstream_h, const Vector &upstream_c);

} // namespace tpru
