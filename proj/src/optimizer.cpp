#include "tpru/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace tpru {

std::vector<std::span<double>> TensorRefs::spans() const {
  std::vector<std::span<double>> out;
  out.reserve(mats.size() + scalars.size());
  for (const auto &[name, m] : mats) out.push_back(m->span());
  for (const auto &[name, s] : scalars) out.push_back({s, 1});
  return out;
}

size_t TensorRefs::total_elements() const {
  size_t n = scalars.size();
  for (const auto &[name, m] : mats) n += m->size();
  return n;
}

AdamState AdamState::init(const TensorRefs &params, const AdamConfig &hyper_in) {
  AdamState s;
  s.hyper = hyper_in;
  for (const auto &[name, m] : params.mats) {
    s.m.emplace_back(m->rows, m->cols);
    s.v.emplace_back(m->rows, m->cols);
  }
  s.m_s.assign(params.scalars.size(), 0.0);
  s.v_s.assign(params.scalars.size(), 0.0);
  return s;
}

void adam_update(AdamState &state, const TensorRefs &params, const TensorRefs &grads) {
  if (params.mats.size() != grads.mats.size() || params.scalars.size() != grads.scalars.size() ||
      params.mats.size() != state.m.size() || params.scalars.size() != state.m_s.size())
    throw std::invalid_argument("adam_update: parameter/gradient/state structure mismatch");

  state.t += 1;
  const AdamConfig &h = state.hyper;
  const double bc1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.t));

  auto step_one = [&](double &p, double g, double &m, double &v) {
    m = h.beta1 * m + (1.0 - h.beta1) * g;
    v = h.beta2 * v + (1.0 - h.beta2) * g * g;
    const double mhat = m / bc1;
    const double vhat = v / bc2;
    p -= h.lr * mhat / (std::sqrt(vhat) + h.eps);
  };

  for (size_t k = 0; k < params.mats.size(); ++k) {
    Matrix &p = *params.mats[k].second;
    const Matrix &g = *grads.mats[k].second;
    if (!p.same_shape(g)) shape_error("adam_update", p.rows, p.cols, g.rows, g.cols);
    for (size_t i = 0; i < p.data.size(); ++i)
      step_one(p.data[i], g.data[i], state.m[k].data[i], state.v[k].data[i]);
  }
  for (size_t k = 0; k < params.scalars.size(); ++k)
    step_one(*params.scalars[k].second, *grads.scalars[k].second, state.m_s[k], state.v_s[k]);
}

Matrix dropout_mask(std::uint64_t seed, int rows, int cols, double rate) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("dropout rate must be in [0, 1)");
  Matrix mask(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (size_t i = 0; i < mask.data.size(); ++i)
    mask.data[i] = uniform01(seed, i) < rate ? 0.0 : keep;
  return mask;
}

Vector dropout_mask_vector(std::uint64_t seed, int len, double rate) {
  Matrix m = dropout_mask(seed, len, 1, rate);
  Vector v(len);
  v.data = std::move(m.data);
  return v;
}

} // namespace tpru
