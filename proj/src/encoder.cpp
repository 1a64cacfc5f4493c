#include "tpru/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tpru {

EncoderModel EncoderModel::init(const EncoderConfig &cfg) {
  if (cfg.layers != 2) throw std::invalid_argument("encoder is fixed at 2 layers");
  if (cfg.vocab < 1) throw std::invalid_argument("vocab must be >= 1");
  EncoderModel m;
  m.cfg = cfg;
  m.embedding = sample_normal(derive_seed(cfg.seed, "embedding"), cfg.vocab, cfg.d_in,
                              1.0 / std::sqrt(static_cast<double>(cfg.d_in)));
  for (int layer = 0; layer < cfg.layers; ++layer) {
    const std::uint64_t ls = mix64(derive_seed(cfg.seed, "layer"), layer);
    const int din = layer == 0 ? cfg.d_in : cfg.d;
    switch (cfg.cell) {
      case CellKind::tpru:
        m.tpru.push_back({RoleBasis::init(cfg.d, cfg.roles, ls), TpruParams::init(cfg.d, din, ls)});
        break;
      case CellKind::gru: m.gru.push_back(GruParams::init(cfg.d, din, ls)); break;
      case CellKind::lstm: m.lstm.push_back(LstmParams::init(cfg.d, din, ls)); break;
    }
  }
  const int h = cfg.hidden_width();
  m.mlp_w1 = sample_normal(derive_seed(cfg.seed, "mlp_w1"), h, 4 * cfg.d,
                           1.0 / std::sqrt(4.0 * cfg.d));
  m.mlp_w2 = sample_normal(derive_seed(cfg.seed, "mlp_w2"), cfg.classes, h,
                           1.0 / std::sqrt(static_cast<double>(h)));
  return m;
}

TensorRefs EncoderModel::trainable() {
  TensorRefs r;
  r.mats.emplace_back("embedding", &embedding);
  for (size_t l = 0; l < tpru.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    r.mats.emplace_back(p + "W_u", &tpru[l].basis.W_u);
    r.mats.emplace_back(p + "W_r", &tpru[l].basis.W_r);
    r.mats.emplace_back(p + "V_b", &tpru[l].params.V_b);
    r.mats.emplace_back(p + "V_x", &tpru[l].params.V_x);
    r.mats.emplace_back(p + "W_b", &tpru[l].params.W_b);
    r.mats.emplace_back(p + "W_x", &tpru[l].params.W_x);
    r.scalars.emplace_back(p + "b_b", &tpru[l].params.b_b);
    r.scalars.emplace_back(p + "b_x", &tpru[l].params.b_x);
  }
  for (size_t l = 0; l < gru.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    r.mats.emplace_back(p + "W_z", &gru[l].W_z);
    r.mats.emplace_back(p + "W_r", &gru[l].W_r);
    r.mats.emplace_back(p + "W_h", &gru[l].W_h);
    r.mats.emplace_back(p + "U_z", &gru[l].U_z);
    r.mats.emplace_back(p + "U_r", &gru[l].U_r);
    r.mats.emplace_back(p + "U_h", &gru[l].U_h);
  }
  for (size_t l = 0; l < lstm.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    r.mats.emplace_back(p + "W_i", &lstm[l].W_i);
    r.mats.emplace_back(p + "W_f", &lstm[l].W_f);
    r.mats.emplace_back(p + "W_o", &lstm[l].W_o);
    r.mats.emplace_back(p + "W_c", &lstm[l].W_c);
    r.mats.emplace_back(p + "U_i", &lstm[l].U_i);
    r.mats.emplace_back(p + "U_f", &lstm[l].U_f);
    r.mats.emplace_back(p + "U_o", &lstm[l].U_o);
    r.mats.emplace_back(p + "U_c", &lstm[l].U_c);
  }
  r.mats.emplace_back("mlp_w1", &mlp_w1);
  r.mats.emplace_back("mlp_w2", &mlp_w2);
  return r;
}

long long EncoderModel::trainable_count() const {
  long long n = 0;
  TensorRefs r = const_cast<EncoderModel *>(this)->trainable();
  n = static_cast<long long>(r.total_elements());
  return n;
}

DerivedCache DerivedCache::make(const EncoderModel &model) {
  DerivedCache c;
  for (const TpruLayer &layer : model.tpru) c.layers.push_back(derive_role_matrices(layer.basis));
  return c;
}

EncoderGradients EncoderGradients::zeros(const EncoderModel &model) {
  EncoderGradients g;
  g.d_embedding = Matrix(model.embedding.rows, model.embedding.cols);
  for (size_t l = 0; l < model.tpru.size(); ++l)
    g.tpru.push_back(TpruGradAccum::zeros(model.cfg.d, model.layer_input_dim(static_cast<int>(l)),
                                          model.cfg.roles));
  for (size_t l = 0; l < model.gru.size(); ++l)
    g.gru.push_back(GruGradients::zeros(model.cfg.d, model.layer_input_dim(static_cast<int>(l))));
  for (size_t l = 0; l < model.lstm.size(); ++l)
    g.lstm.push_back(LstmGradients::zeros(model.cfg.d, model.layer_input_dim(static_cast<int>(l))));
  g.d_mlp_w1 = Matrix(model.mlp_w1.rows, model.mlp_w1.cols);
  g.d_mlp_w2 = Matrix(model.mlp_w2.rows, model.mlp_w2.cols);
  return g;
}

void EncoderGradients::add(const EncoderGradients &o) {
  auto addm = [](Matrix &a, const Matrix &b) {
    for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
  };
  addm(d_embedding, o.d_embedding);
  for (size_t l = 0; l < tpru.size(); ++l) tpru[l].add(o.tpru[l]);
  for (size_t l = 0; l < gru.size(); ++l) gru[l].add_params(o.gru[l]);
  for (size_t l = 0; l < lstm.size(); ++l) lstm[l].add_params(o.lstm[l]);
  addm(d_mlp_w1, o.d_mlp_w1);
  addm(d_mlp_w2, o.d_mlp_w2);
}

void EncoderGradients::finalize_roles(const EncoderModel &model) {
  tpru_final.clear();
  for (size_t l = 0; l < tpru.size(); ++l)
    tpru_final.push_back(tpru[l].finalize(model.tpru[l].basis.E));
}

TensorRefs EncoderGradients::refs() {
  TensorRefs r;
  r.mats.emplace_back("embedding", &d_embedding);
  if (!tpru.empty() && tpru_final.size() != tpru.size())
    throw std::logic_error("EncoderGradients: finalize_roles() before refs()");
  for (size_t l = 0; l < tpru.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    StepGradients &sg = tpru_final[l];
    r.mats.emplace_back(p + "W_u", &sg.dW_u);
    r.mats.emplace_back(p + "W_r", &sg.dW_r);
    r.mats.emplace_back(p + "V_b", &sg.dV_b);
    r.mats.emplace_back(p + "V_x", &sg.dV_x);
    r.mats.emplace_back(p + "W_b", &sg.dW_b);
    r.mats.emplace_back(p + "W_x", &sg.dW_x);
    r.scalars.emplace_back(p + "b_b", &sg.db_b);
    r.scalars.emplace_back(p + "b_x", &sg.db_x);
  }
  for (size_t l = 0; l < gru.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    r.mats.emplace_back(p + "W_z", &gru[l].dW_z);
    r.mats.emplace_back(p + "W_r", &gru[l].dW_r);
    r.mats.emplace_back(p + "W_h", &gru[l].dW_h);
    r.mats.emplace_back(p + "U_z", &gru[l].dU_z);
    r.mats.emplace_back(p + "U_r", &gru[l].dU_r);
    r.mats.emplace_back(p + "U_h", &gru[l].dU_h);
  }
  for (size_t l = 0; l < lstm.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    r.mats.emplace_back(p + "W_i", &lstm[l].dW_i);
    r.mats.emplace_back(p + "W_f", &lstm[l].dW_f);
    r.mats.emplace_back(p + "W_o", &lstm[l].dW_o);
    r.mats.emplace_back(p + "W_c", &lstm[l].dW_c);
    r.mats.emplace_back(p + "U_i", &lstm[l].dU_i);
    r.mats.emplace_back(p + "U_f", &lstm[l].dU_f);
    r.mats.emplace_back(p + "U_o", &lstm[l].dU_o);
    r.mats.emplace_back(p + "U_c", &lstm[l].dU_c);
  }
  r.mats.emplace_back("mlp_w1", &d_mlp_w1);
  r.mats.emplace_back("mlp_w2", &d_mlp_w2);
  return r;
}

StackState StackState::zeros(const EncoderModel &model) {
  StackState s;
  for (int l = 0; l < model.cfg.layers; ++l) {
    s.b.emplace_back(model.cfg.d);
    s.c.emplace_back(model.cfg.d);
  }
  return s;
}

std::vector<Vector> run_stack(const EncoderModel &model, const DerivedCache &derived,
                              std::span<const int> tokens, StackState &state,
                              SequenceTrace *trace, bool training, std::uint64_t dropout_seed) {
  const EncoderConfig &cfg = model.cfg;
  const int layers = cfg.layers;
  const bool drop = training && cfg.dropout > 0.0;
  const SliceConfig slices{cfg.slices};

  if (trace) {
    trace->inputs.assign(layers, {});
    trace->tpru.assign(model.tpru.empty() ? 0 : layers, {});
    trace->gru.assign(model.gru.empty() ? 0 : layers, {});
    trace->lstm.assign(model.lstm.empty() ? 0 : layers, {});
    trace->embed_mask.clear();
  }

  std::vector<Vector> top_states;
  top_states.reserve(tokens.size());

  for (size_t t = 0; t < tokens.size(); ++t) {
    const int tok = tokens[t];
    if (tok < 0 || tok >= cfg.vocab)
      throw std::out_of_range("token id " + std::to_string(tok) + " outside vocab of " +
                              std::to_string(cfg.vocab));
    Vector x(cfg.d_in);
    for (int j = 0; j < cfg.d_in; ++j) x[j] = model.embedding(tok, j);
    if (drop) {
      Vector mask = dropout_mask_vector(mix64(dropout_seed, t), cfg.d_in, cfg.dropout);
      for (int j = 0; j < cfg.d_in; ++j) x[j] *= mask[j];
      if (trace) trace->embed_mask.push_back(std::move(mask));
    }

    for (int l = 0; l < layers; ++l) {
      if (trace) trace->inputs[l].push_back(x);
      switch (cfg.cell) {
        case CellKind::tpru: {
          StepTrace st = step(model.tpru[l].params, derived.layers[l], slices, state.b[l], x);
          state.b[l] = st.b_t;
          x = st.b_t;
          if (trace) trace->tpru[l].push_back(std::move(st));
          break;
        }
        case CellKind::gru: {
          GruTrace gt = gru_step(model.gru[l], state.b[l], x);
          state.b[l] = gt.h_t;
          x = gt.h_t;
          if (trace) trace->gru[l].push_back(std::move(gt));
          break;
        }
        case CellKind::lstm: {
          LstmTrace lt = lstm_step(model.lstm[l], state.b[l], state.c[l], x);
          state.b[l] = lt.h_t;
          state.c[l] = lt.c_t;
          x = lt.h_t;
          if (trace) trace->lstm[l].push_back(std::move(lt));
          break;
        }
      }
    }
    top_states.push_back(state.b[layers - 1]);
  }
  return top_states;
}

void stack_backward(const EncoderModel &model, const DerivedCache &derived,
                    std::span<const int> tokens, const SequenceTrace &trace,
                    std::span<const Vector> upstream_top, EncoderGradients &grads) {
  const EncoderConfig &cfg = model.cfg;
  const int layers = cfg.layers;
  const SliceConfig slices{cfg.slices};
  const size_t steps = tokens.size();
  if (upstream_top.size() != steps)
    throw std::invalid_argument("stack_backward: one upstream per step required");

  std::vector<Vector> upstream(upstream_top.begin(), upstream_top.end());
  for (int l = layers - 1; l >= 0; --l) {
    std::vector<Vector> dx;
    switch (cfg.cell) {
      case CellKind::tpru:
        dx = bptt_accumulate(trace.tpru[l], upstream, derived.layers[l], model.tpru[l].params,
                             slices, grads.tpru[l]);
        break;
      case CellKind::gru: {
        dx.resize(steps);
        Vector carry(cfg.d);
        for (size_t t = steps; t-- > 0;) {
          Vector u = upstream[t];
          for (int i = 0; i < cfg.d; ++i) u[i] += carry[i];
          GruGradients g = gru_backward(model.gru[l], trace.gru[l][t], u);
          grads.gru[l].add_params(g);
          dx[t] = std::move(g.dx);
          carry = std::move(g.dh_prev);
        }
        break;
      }
      case CellKind::lstm: {
        dx.resize(steps);
        Vector carry_h(cfg.d), carry_c(cfg.d);
        for (size_t t = steps; t-- > 0;) {
          Vector u = upstream[t];
          for (int i = 0; i < cfg.d; ++i) u[i] += carry_h[i];
          LstmGradients g = lstm_backward(model.lstm[l], trace.lstm[l][t], u, carry_c);
          grads.lstm[l].add_params(g);
          dx[t] = std::move(g.dx);
          carry_h = std::move(g.dh_prev);
          carry_c = std::move(g.dc_prev);
        }
        break;
      }
    }
    upstream = std::move(dx);
  }

  // upstream now holds dL/d(embedded input) per step.
  const bool drop = !trace.embed_mask.empty();
  for (size_t t = 0; t < steps; ++t) {
    const int tok = tokens[t];
    double *row = grads.d_embedding.row(tok);
    for (int j = 0; j < cfg.d_in; ++j) {
      const double m = drop ? trace.embed_mask[t][j] : 1.0;
      row[j] += upstream[t][j] * m;
    }
  }
}

EncodeResult encode_sequence(const EncoderModel &model, const DerivedCache &derived,
                             std::span<const int> tokens, bool training,
                             std::uint64_t dropout_seed) {
  if (tokens.empty()) throw std::invalid_argument("encode_sequence: empty sequence");
  EncodeResult r;
  StackState state = StackState::zeros(model);
  r.states = run_stack(model, derived, tokens, state, &r.trace, training,
                       mix64(dropout_seed, 0x1a));
  const int d = model.cfg.d;
  r.pooled = Vector(d);
  r.argmax.assign(d, 0);
  for (int i = 0; i < d; ++i) {
    double best = r.states[0][i];
    int at = 0;
    for (size_t t = 1; t < r.states.size(); ++t)
      if (r.states[t][i] > best) {
        best = r.states[t][i];
        at = static_cast<int>(t);
      }
    r.pooled[i] = best;
    r.argmax[i] = at;
  }
  if (training && model.cfg.dropout > 0.0) {
    r.pool_mask = dropout_mask_vector(mix64(dropout_seed, 0x2b), d, model.cfg.dropout);
    for (int i = 0; i < d; ++i) r.pooled[i] *= r.pool_mask[i];
  }
  return r;
}

Vector pair_features(const Vector &u, const Vector &v) {
  if (u.len() != v.len()) shape_error("pair_features", u.len(), 1, v.len(), 1);
  const int d = u.len();
  Vector z(4 * d);
  for (int i = 0; i < d; ++i) {
    z[i] = u[i];
    z[d + i] = v[i];
    z[2 * d + i] = std::abs(u[i] - v[i]);
    z[3 * d + i] = u[i] * v[i];
  }
  return z;
}

PairForward classify_pair(const EncoderModel &model, const DerivedCache &derived,
                          std::span<const int> premise, std::span<const int> hypothesis,
                          bool training, std::uint64_t dropout_seed) {
  PairForward f;
  f.premise = encode_sequence(model, derived, premise, training, mix64(dropout_seed, 1));
  f.hypothesis = encode_sequence(model, derived, hypothesis, training, mix64(dropout_seed, 2));
  f.features = pair_features(f.premise.pooled, f.hypothesis.pooled);
  f.hidden_pre = matvec(model.mlp_w1, f.features);
  f.hidden = f.hidden_pre;
  for (double &x : f.hidden.data) x = std::max(0.0, x);
  f.scores = matvec(model.mlp_w2, f.hidden);
  return f;
}

double cross_entropy(const Vector &scores, int label) {
  double top = scores[0];
  for (double s : scores.data) top = std::max(top, s);
  double lse = 0.0;
  for (double s : scores.data) lse += std::exp(s - top);
  return std::log(lse) + top - scores[label];
}

int argmax_score(const Vector &scores) {
  int best = 0;
  for (int i = 1; i < scores.len(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

namespace {

// Route dL/d(pooled) back to the winning steps and run the stack backward.
void pooled_backward(const EncoderModel &model, const DerivedCache &derived,
                     std::span<const int> tokens, const EncodeResult &enc, const Vector &dpooled,
                     EncoderGradients &grads) {
  const int d = model.cfg.d;
  std::vector<Vector> upstream(enc.states.size(), Vector(d));
  for (int i = 0; i < d; ++i) {
    const double m = enc.pool_mask.len() == d ? enc.pool_mask[i] : 1.0;
    upstream[enc.argmax[i]][i] += dpooled[i] * m;
  }
  stack_backward(model, derived, tokens, enc.trace, upstream, grads);
}

} // namespace

double classify_pair_backward(const EncoderModel &model, const DerivedCache &derived,
                              std::span<const int> premise, std::span<const int> hypothesis,
                              const PairForward &fwd, int label, EncoderGradients &grads) {
  const int d = model.cfg.d;
  const double loss = cross_entropy(fwd.scores, label);

  // d(scores) = softmax - onehot
  Vector dscores(fwd.scores.len());
  {
    double top = fwd.scores[0];
    for (double s : fwd.scores.data) top = std::max(top, s);
    double lse = 0.0;
    for (double s : fwd.scores.data) lse += std::exp(s - top);
    for (int i = 0; i < fwd.scores.len(); ++i)
      dscores[i] = std::exp(fwd.scores[i] - top) / lse - (i == label ? 1.0 : 0.0);
  }

  add_outer(grads.d_mlp_w2, dscores, fwd.hidden);
  Vector dhidden = matvec_transposed(model.mlp_w2, dscores);
  for (int i = 0; i < dhidden.len(); ++i)
    if (fwd.hidden_pre[i] <= 0.0) dhidden[i] = 0.0;
  add_outer(grads.d_mlp_w1, dhidden, fwd.features);
  const Vector dz = matvec_transposed(model.mlp_w1, dhidden);

  const Vector &u = fwd.premise.pooled, &v = fwd.hypothesis.pooled;
  Vector du(d), dv(d);
  for (int i = 0; i < d; ++i) {
    const double diff = u[i] - v[i];
    const double sgn = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    du[i] = dz[i] + dz[2 * d + i] * sgn + dz[3 * d + i] * v[i];
    dv[i] = dz[d + i] - dz[2 * d + i] * sgn + dz[3 * d + i] * u[i];
  }
  pooled_backward(model, derived, premise, fwd.premise, du, grads);
  pooled_backward(model, derived, hypothesis, fwd.hypothesis, dv, grads);
  return loss;
}

// --- language model -----------------------------------------------------

double LmEval::perplexity() const { return std::exp(mean_nll()); }

namespace {

void require_tied_dims(const EncoderModel &model) {
  if (model.cfg.d_in != model.cfg.d)
    throw std::invalid_argument("tied LM head requires d_in == d (have d_in=" +
                                std::to_string(model.cfg.d_in) + ", d=" +
                                std::to_string(model.cfg.d) + ")");
}

// NLL of target under softmax(embedding * h); fills dh and demb rows when
// grads are requested.
double tied_nll(const EncoderModel &model, const Vector &h, int target, Vector *dh,
                EncoderGradients *grads) {
  const int vocab = model.cfg.vocab;
  Vector logits(vocab);
  for (int w = 0; w < vocab; ++w) {
    const double *row = model.embedding.row(w);
    double acc = 0.0;
    for (int j = 0; j < h.len(); ++j) acc += row[j] * h[j];
    logits[w] = acc;
  }
  double top = logits[0];
  for (double s : logits.data) top = std::max(top, s);
  double lse = 0.0;
  for (double s : logits.data) lse += std::exp(s - top);
  const double nll = std::log(lse) + top - logits[target];
  if (dh && grads) {
    for (int w = 0; w < vocab; ++w) {
      const double p = std::exp(logits[w] - top) / lse;
      const double dlogit = p - (w == target ? 1.0 : 0.0);
      const double *row = model.embedding.row(w);
      double *grow = grads->d_embedding.row(w);
      for (int j = 0; j < h.len(); ++j) {
        (*dh)[j] += dlogit * row[j];
        grow[j] += dlogit * h[j];
      }
    }
  }
  return nll;
}

} // namespace

LmEval lm_loss(const EncoderModel &model, const DerivedCache &derived,
               std::span<const int> tokens) {
  require_tied_dims(model);
  if (tokens.size() < 2) throw std::invalid_argument("lm_loss: need at least 2 tokens");
  StackState state = StackState::zeros(model);
  const std::vector<Vector> states =
      run_stack(model, derived, tokens.subspan(0, tokens.size() - 1), state, nullptr, false, 0);
  LmEval ev;
  for (size_t t = 0; t < states.size(); ++t) {
    ev.nll_sum += tied_nll(model, states[t], tokens[t + 1], nullptr, nullptr);
    ev.tokens += 1;
  }
  return ev;
}

LmEval lm_segment_backward(const EncoderModel &model, const DerivedCache &derived,
                           std::span<const int> tokens, StackState &state,
                           EncoderGradients &grads, bool training, std::uint64_t dropout_seed) {
  require_tied_dims(model);
  if (tokens.size() < 2) throw std::invalid_argument("lm segment: need at least 2 tokens");
  const auto inputs = tokens.subspan(0, tokens.size() - 1);

  SequenceTrace trace;
  const std::vector<Vector> states =
      run_stack(model, derived, inputs, state, &trace, training, dropout_seed);

  LmEval ev;
  std::vector<Vector> upstream(states.size(), Vector(model.cfg.d));
  for (size_t t = 0; t < states.size(); ++t) {
    ev.nll_sum += tied_nll(model, states[t], tokens[t + 1], &upstream[t], &grads);
    ev.tokens += 1;
  }
  stack_backward(model, derived, inputs, trace, upstream, grads);
  return ev;
}

} // namespace tpru
