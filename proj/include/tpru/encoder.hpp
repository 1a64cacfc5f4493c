// Two-layer recurrent encoder over token ids (TPRU, GRU, or LSTM cells),
// max-pooled pair classifier, and a tied-embedding language-model head.
// Forward passes are pure; backward fills an EncoderGradients mirror.
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tpru/baselines.hpp"
#include "tpru/cell.hpp"
#include "tpru/grad.hpp"
#include "tpru/optimizer.hpp"

namespace tpru {

struct EncoderConfig {
  CellKind cell = CellKind::tpru;
  int layers = 2; // architecture is fixed at two stacked cells
  int d = 32;
  int d_in = 32;     // embedding dimension; layer 2 always sees d
  int roles = 64;    // N, TPRU only
  int slices = 1;    // H, TPRU only
  int mlp_hidden = 0; // 0 means d
  int vocab = 32;
  int classes = 2;
  double dropout = 0.0;
  std::uint64_t seed = 1;

  int hidden_width() const { return mlp_hidden > 0 ? mlp_hidden : d; }
};

struct TpruLayer {
  RoleBasis basis;
  TpruParams params;
};

struct EncoderModel {
  EncoderConfig cfg;
  Matrix embedding; // vocab x d_in
  std::vector<TpruLayer> tpru;
  std::vector<GruParams> gru;
  std::vector<LstmParams> lstm;
  Matrix mlp_w1; // h x 4d
  Matrix mlp_w2; // classes x h

  static EncoderModel init(const EncoderConfig &cfg);
  int layer_input_dim(int layer) const { return layer == 0 ? cfg.d_in : cfg.d; }
  // Trainable tensors in a fixed order (E excluded; scalar biases included).
  TensorRefs trainable();
  long long trainable_count() const;
};

// Per-layer U/R, recomputed once per parameter update.
struct DerivedCache {
  std::vector<DerivedRoles> layers;
  static DerivedCache make(const EncoderModel &model);
};

struct EncoderGradients {
  Matrix d_embedding;
  std::vector<TpruGradAccum> tpru; // role-space; folded through E at step time
  std::vector<GruGradients> gru;
  std::vector<LstmGradients> lstm;
  Matrix d_mlp_w1, d_mlp_w2;
  // Finalized dW_u/dW_r per layer, filled by finalize_roles(); aligned with refs().
  std::vector<StepGradients> tpru_final;

  static EncoderGradients zeros(const EncoderModel &model);
  void add(const EncoderGradients &other);
  void finalize_roles(const EncoderModel &model);
  // Must mirror EncoderModel::trainable(); requires finalize_roles() first
  // for TPRU models.
  TensorRefs refs();
};

struct SequenceTrace {
  std::vector<std::vector<Vector>> inputs;    // [layer][t], post-dropout
  std::vector<std::vector<StepTrace>> tpru;   // [layer][t]
  std::vector<std::vector<GruTrace>> gru;
  std::vector<std::vector<LstmTrace>> lstm;
  std::vector<Vector> embed_mask;             // per-step dropout masks (training only)
};

struct StackState {
  std::vector<Vector> b; // per layer
  std::vector<Vector> c; // per layer, LSTM cell state
  static StackState zeros(const EncoderModel &model);
};

// Rolls the stack left to right from `state` (updated in place); returns the
// layer-2 states, one per input position. dropout_seed only matters when
// training is true.
std::vector<Vector> run_stack(const EncoderModel &model, const DerivedCache &derived,
                              std::span<const int> tokens, StackState &state,
                              SequenceTrace *trace, bool training, std::uint64_t dropout_seed);

// Chains upstream gradients on the layer-2 states back through both layers,
// the dropout masks, and the embedding rows.
void stack_backward(const EncoderModel &model, const DerivedCache &derived,
                    std::span<const int> tokens, const SequenceTrace &trace,
                    std::span<const Vector> upstream_top, EncoderGradients &grads);

struct EncodeResult {
  std::vector<Vector> states; // layer-2 states
  Vector pooled;              // elementwise max over time
  std::vector<int> argmax;    // winning step per component (first on ties)
  SequenceTrace trace;
  Vector pool_mask;           // dropout on pooled features (training only)
};

// Zero initial state; throws on an empty sequence.
EncodeResult encode_sequence(const EncoderModel &model, const DerivedCache &derived,
                             std::span<const int> tokens, bool training,
                             std::uint64_t dropout_seed);

// [u; v; |u - v|; u o v]
Vector pair_features(const Vector &u, const Vector &v);

struct PairForward {
  EncodeResult premise, hypothesis;
  Vector features;   // 4d
  Vector hidden_pre; // h, before relu
  Vector hidden;     // h
  Vector scores;     // classes
};

PairForward classify_pair(const EncoderModel &model, const DerivedCache &derived,
                          std::span<const int> premise, std::span<const int> hypothesis,
                          bool training, std::uint64_t dropout_seed);

// Softmax cross-entropy of the scores against `label`; returns the loss and
// accumulates gradients for the whole model.
double classify_pair_backward(const EncoderModel &model, const DerivedCache &derived,
                              std::span<const int> premise, std::span<const int> hypothesis,
                              const PairForward &fwd, int label, EncoderGradients &grads);

double cross_entropy(const Vector &scores, int label);
int argmax_score(const Vector &scores);

// --- language model -----------------------------------------------------

// Tied output head: logits = embedding * h. Requires d_in == d.
struct LmEval {
  double nll_sum = 0.0;
  long long tokens = 0;
  double mean_nll() const { return tokens ? nll_sum / static_cast<double>(tokens) : 0.0; }
  double perplexity() const;
};

// Next-token NLL over the sequence (predicts tokens[1..]); length >= 2.
LmEval lm_loss(const EncoderModel &model, const DerivedCache &derived,
               std::span<const int> tokens);

// One truncated-BPTT training segment: inputs tokens[0..n-2], targets
// tokens[1..n-1], starting from `state` (updated, detached). Returns summed
// NLL and token count; accumulates gradients.
LmEval lm_segment_backward(const EncoderModel &model, const DerivedCache &derived,
                           std::span<const int> tokens, StackState &state,
                           EncoderGradients &grads, bool training, std::uint64_t dropout_seed);

} // namespace tpru
