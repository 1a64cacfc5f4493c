// Role-usage analysis of a trained TPRU: argmax-role extraction per token,
// PMI between roles and externally supplied token tags, and per-token sense
// reports conditioned on tag classes.
#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tpru/encoder.hpp"

namespace tpru {

// Lowest-index argmax of the normalized fillers (H = 1); nullopt for a
// degenerate all-zero slice.
std::optional<int> max_role(const StepTrace &trace);
// One argmax per slice for multi-slice models.
std::vector<std::optional<int>> max_roles_per_slice(const StepTrace &trace);

struct RoleObservation {
  int position = 0;
  int token = 0;
  std::optional<int> beta;
  double f_max = 0.0;
};

// Rolls the model over one sequence and reports beta_t from the given layer
// (1-based; the default elsewhere is layer 2, the representation that feeds
// pooling). TPRU models only.
std::vector<RoleObservation> role_trace(const EncoderModel &model, const DerivedCache &derived,
                                        std::span<const int> tokens, int layer);

struct PmiEntry {
  int role = -1;
  double pmi = 0.0;
};

struct PmiTag {
  std::string tag;
  std::vector<PmiEntry> entries; // sorted descending; zero-joint pairs omitted
  double top2_gap = 0.0;         // 0 when fewer than 2 entries
  bool flagged = false;          // gap >= 0.5
};

struct PmiTable {
  std::vector<PmiTag> tags;
  std::string tsv() const;
};

// joint(i, j) = count of (tag i, role j); PMI in bits. Throws on an empty
// table.
PmiTable pmi_table(const Matrix &joint, std::span<const std::string> tag_names);

// token<TAB>tag per line, aligned one-to-one with a token stream.
struct TagFile {
  std::vector<std::string> tokens;
  std::vector<std::string> tags;
  std::vector<std::string> tag_names; // distinct tags, sorted
  int tag_id(const std::string &tag) const;
};
TagFile read_tag_file(const std::string &path);

// Joint (tag, role) counts over a corpus of sequences; rows follow
// tag_file.tag_names, degenerate betas are skipped.
Matrix role_tag_counts(const EncoderModel &model, std::span<const std::vector<int>> sequences,
                       const TagFile &tags, int layer);

struct SenseReport {
  int target = 0;
  long long occurrences = 0;
  // conditional tables over (class c, role b) observed for the target token
  std::vector<std::string> classes;
  std::vector<int> roles;
  Matrix counts;                 // classes x roles
  Matrix p_role_given_class;     // classes x roles
  Matrix p_class_given_role;     // classes x roles
  std::string tsv() const;
};

// Records beta at every occurrence of `target`; context classes come from the
// tag file. Throws when the target never occurs.
SenseReport sense_report(const EncoderModel &model, std::span<const std::vector<int>> sequences,
                         const TagFile &tags, int target, int layer);

} // namespace tpru
