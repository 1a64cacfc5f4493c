// Adam with bias correction, plus deterministic inverted-dropout masks.
// Gradient clipping lives in linalg (clip_global_norm); callers clip before
// stepping.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tpru/linalg.hpp"

namespace tpru {

// Non-owning view over a model's named parameters. Gradients expose the same
// structure, aligned by position.
struct TensorRefs {
  std::vector<std::pair<std::string, Matrix *>> mats;
  std::vector<std::pair<std::string, double *>> scalars;

  std::vector<std::span<double>> spans() const;
  size_t total_elements() const;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  AdamConfig hyper;
  long long t = 0;
  std::vector<Matrix> m, v;          // aligned with TensorRefs::mats
  std::vector<double> m_s, v_s;      // aligned with TensorRefs::scalars

  static AdamState init(const TensorRefs &params, const AdamConfig &hyper);
};

// One bias-corrected step; grads must be pre-clipped and shaped like params.
void adam_update(AdamState &state, const TensorRefs &params, const TensorRefs &grads);

// Entries are 0 with probability rate, else 1/(1-rate). Deterministic per
// (seed, shape); rate must be in [0, 1).
Matrix dropout_mask(std::uint64_t seed, int rows, int cols, double rate);
Vector dropout_mask_vector(std::uint64_t seed, int len, double rate);

} // namespace tpru
