#include "tpru/interpret.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

namespace tpru {

std::optional<int> max_role(const StepTrace &trace) {
  if (trace.slices() != 1)
    throw std::invalid_argument("max_role expects H = 1; use max_roles_per_slice");
  return max_roles_per_slice(trace)[0];
}

std::vector<std::optional<int>> max_roles_per_slice(const StepTrace &trace) {
  std::vector<std::optional<int>> out(trace.slices());
  for (int h = 0; h < trace.slices(); ++h) {
    int best = 0;
    bool any_nonzero = false;
    for (int n = 0; n < trace.roles(); ++n) {
      if (trace.f(n, h) != 0.0) any_nonzero = true;
      if (trace.f(n, h) > trace.f(best, h)) best = n;
    }
    if (any_nonzero) out[h] = best;
  }
  return out;
}

std::vector<RoleObservation> role_trace(const EncoderModel &model, const DerivedCache &derived,
                                        std::span<const int> tokens, int layer) {
  if (model.cfg.cell != CellKind::tpru)
    throw std::invalid_argument("role traces require a TPRU model");
  if (layer < 1 || layer > model.cfg.layers)
    throw std::invalid_argument("layer must be in [1, " + std::to_string(model.cfg.layers) + "]");
  StackState state = StackState::zeros(model);
  SequenceTrace trace;
  run_stack(model, derived, tokens, state, &trace, false, 0);

  std::vector<RoleObservation> out;
  for (size_t t = 0; t < tokens.size(); ++t) {
    const StepTrace &st = trace.tpru[layer - 1][t];
    RoleObservation obs;
    obs.position = static_cast<int>(t);
    obs.token = tokens[t];
    const auto betas = max_roles_per_slice(st);
    obs.beta = betas[0]; // slice 0 for multi-slice models
    if (obs.beta) obs.f_max = st.f(*obs.beta, 0);
    out.push_back(obs);
  }
  return out;
}

PmiTable pmi_table(const Matrix &joint, std::span<const std::string> tag_names) {
  if (static_cast<size_t>(joint.rows) != tag_names.size())
    throw std::invalid_argument("pmi_table: one tag name per row required");
  double total = 0.0;
  for (double c : joint.data) {
    if (c < 0.0) throw std::invalid_argument("pmi_table: negative count");
    total += c;
  }
  if (total <= 0.0) throw std::invalid_argument("pmi_table: empty counts");

  std::vector<double> row_sum(joint.rows, 0.0), col_sum(joint.cols, 0.0);
  for (int i = 0; i < joint.rows; ++i)
    for (int j = 0; j < joint.cols; ++j) {
      row_sum[i] += joint(i, j);
      col_sum[j] += joint(i, j);
    }

  PmiTable table;
  for (int i = 0; i < joint.rows; ++i) {
    PmiTag tag;
    tag.tag = tag_names[i];
    for (int j = 0; j < joint.cols; ++j) {
      if (joint(i, j) <= 0.0) continue; // zero joint counts are omitted
      const double p_joint = joint(i, j) / total;
      const double p_tag = row_sum[i] / total;
      const double p_role = col_sum[j] / total;
      tag.entries.push_back({j, std::log2(p_joint / (p_tag * p_role))});
    }
    std::sort(tag.entries.begin(), tag.entries.end(), [](const PmiEntry &a, const PmiEntry &b) {
      return a.pmi != b.pmi ? a.pmi > b.pmi : a.role < b.role;
    });
    if (tag.entries.size() >= 2) {
      tag.top2_gap = tag.entries[0].pmi - tag.entries[1].pmi;
      tag.flagged = tag.top2_gap >= 0.5;
    }
    table.tags.push_back(std::move(tag));
  }
  return table;
}

std::string PmiTable::tsv() const {
  std::string out = "tag\trole\tpmi\ttop2_gap\tflagged\n";
  char buf[128];
  for (const PmiTag &t : tags) {
    const size_t top = std::min<size_t>(2, t.entries.size());
    for (size_t k = 0; k < top; ++k) {
      std::snprintf(buf, sizeof buf, "%s\t%d\t%.6f\t%.6f\t%d\n", t.tag.c_str(),
                    t.entries[k].role, t.entries[k].pmi, t.top2_gap, t.flagged ? 1 : 0);
      out += buf;
    }
  }
  return out;
}

TagFile read_tag_file(const std::string &path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open tag file: " + path);
  TagFile tf;
  std::string line;
  size_t lineno = 0;
  std::set<std::string> names;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t tab = line.find('\t');
    if (tab == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected token<TAB>tag");
    tf.tokens.push_back(line.substr(0, tab));
    tf.tags.push_back(line.substr(tab + 1));
    names.insert(tf.tags.back());
  }
  tf.tag_names.assign(names.begin(), names.end());
  return tf;
}

int TagFile::tag_id(const std::string &tag) const {
  const auto it = std::lower_bound(tag_names.begin(), tag_names.end(), tag);
  if (it == tag_names.end() || *it != tag)
    throw std::invalid_argument("unknown tag: " + tag);
  return static_cast<int>(it - tag_names.begin());
}

Matrix role_tag_counts(const EncoderModel &model, std::span<const std::vector<int>> sequences,
                       const TagFile &tags, int layer) {
  size_t total_tokens = 0;
  for (const auto &s : sequences) total_tokens += s.size();
  if (total_tokens != tags.tags.size())
    throw std::invalid_argument("tag file has " + std::to_string(tags.tags.size()) +
                                " lines but the corpus has " + std::to_string(total_tokens) +
                                " tokens");

  const DerivedCache derived = DerivedCache::make(model);
  Matrix counts(static_cast<int>(tags.tag_names.size()), model.cfg.roles);
  size_t offset = 0;
  for (const auto &seq : sequences) {
    const auto obs = role_trace(model, derived, seq, layer);
    for (size_t t = 0; t < seq.size(); ++t) {
      if (obs[t].beta)
        counts(tags.tag_id(tags.tags[offset + t]), *obs[t].beta) += 1.0;
    }
    offset += seq.size();
  }
  return counts;
}

SenseReport sense_report(const EncoderModel &model, std::span<const std::vector<int>> sequences,
                         const TagFile &tags, int target, int layer) {
  size_t total_tokens = 0;
  for (const auto &s : sequences) total_tokens += s.size();
  if (total_tokens != tags.tags.size())
    throw std::invalid_argument("tag file does not align with the corpus");

  const DerivedCache derived = DerivedCache::make(model);
  // collect (class, role) observations at occurrences of the target
  std::vector<std::pair<int, int>> hits;
  std::set<int> roles_seen;
  std::set<int> classes_seen;
  size_t offset = 0;
  for (const auto &seq : sequences) {
    std::vector<RoleObservation> obs;
    bool contains = false;
    for (int tok : seq)
      if (tok == target) contains = true;
    if (contains) obs = role_trace(model, derived, seq, layer);
    for (size_t t = 0; t < seq.size(); ++t) {
      if (seq[t] != target) continue;
      if (!obs[t].beta) continue;
      const int cls = tags.tag_id(tags.tags[offset + t]);
      hits.emplace_back(cls, *obs[t].beta);
      classes_seen.insert(cls);
      roles_seen.insert(*obs[t].beta);
    }
    offset += seq.size();
  }
  if (hits.empty()) throw std::invalid_argument("target token never occurs (or only degenerately)");

  SenseReport rep;
  rep.target = target;
  rep.occurrences = static_cast<long long>(hits.size());
  for (int c : classes_seen) rep.classes.push_back(tags.tag_names[c]);
  rep.roles.assign(roles_seen.begin(), roles_seen.end());

  const int nc = static_cast<int>(rep.classes.size()), nr = static_cast<int>(rep.roles.size());
  rep.counts = Matrix(nc, nr);
  auto class_pos = [&](int cls) {
    return static_cast<int>(std::distance(
        classes_seen.begin(), std::find(classes_seen.begin(), classes_seen.end(), cls)));
  };
  auto role_pos = [&](int role) {
    return static_cast<int>(
        std::distance(rep.roles.begin(), std::find(rep.roles.begin(), rep.roles.end(), role)));
  };
  for (const auto &[cls, role] : hits) rep.counts(class_pos(cls), role_pos(role)) += 1.0;

  rep.p_role_given_class = Matrix(nc, nr);
  rep.p_class_given_role = Matrix(nc, nr);
  for (int i = 0; i < nc; ++i) {
    double row = 0.0;
    for (int j = 0; j < nr; ++j) row += rep.counts(i, j);
    for (int j = 0; j < nr; ++j)
      rep.p_role_given_class(i, j) = row > 0.0 ? rep.counts(i, j) / row : 0.0;
  }
  for (int j = 0; j < nr; ++j) {
    double col = 0.0;
    for (int i = 0; i < nc; ++i) col += rep.counts(i, j);
    for (int i = 0; i < nc; ++i)
      rep.p_class_given_role(i, j) = col > 0.0 ? rep.counts(i, j) / col : 0.0;
  }
  return rep;
}

std::string SenseReport::tsv() const {
  std::string out = "class\trole\tcount\tp_role_given_class\tp_class_given_role\n";
  char buf[160];
  for (size_t i = 0; i < classes.size(); ++i)
    for (size_t j = 0; j < roles.size(); ++j) {
      if (counts(static_cast<int>(i), static_cast<int>(j)) == 0.0) continue;
      std::snprintf(buf, sizeof buf, "%s\t%d\t%.0f\t%.6f\t%.6f\n", classes[i].c_str(), roles[j],
                    counts(static_cast<int>(i), static_cast<int>(j)),
                    p_role_given_class(static_cast<int>(i), static_cast<int>(j)),
                    p_class_given_role(static_cast<int>(i), static_cast<int>(j)));
      out += buf;
    }
  return out;
}

} // namespace tpru
