// Propositional formulas: fully parenthesized grammar, exact truth-table
// entailment, variable-renaming augmentation, and dataset generation for the
// entailment task.
//
//   Form := Var | "~" Form | "(" Form Op Form ")"
//   Op   := "&" | "|" | ">"
//   Var  := lowercase letter, or "v" followed by digits (v0 == a, v1 == b, ...)
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace tpru::logic {

enum class Connective { var, negation, conjunction, disjunction, implication };

struct Formula;
using FormulaPtr = std::shared_ptr<const Formula>;

struct Formula {
  Connective kind = Connective::var;
  int var = -1; // variable index, kind == var only
  FormulaPtr lhs, rhs;

  int depth() const;            // vars are depth 0
  int max_var() const;          // -1 for none
  void collect_vars(std::vector<bool> &seen) const;
};

FormulaPtr make_var(int index);
FormulaPtr make_not(FormulaPtr f);
FormulaPtr make_and(FormulaPtr l, FormulaPtr r);
FormulaPtr make_or(FormulaPtr l, FormulaPtr r);
FormulaPtr make_implies(FormulaPtr l, FormulaPtr r);

inline constexpr int kMaxVarIndex = 25;     // single letters a..z
inline constexpr int kEntailsVarCap = 20;   // hard cap on distinct variables

struct ParseError : std::runtime_error {
  size_t offset;
  ParseError(const std::string &msg, size_t at)
      : std::runtime_error(msg + " at offset " + std::to_string(at)), offset(at) {}
};

FormulaPtr parse_formula(std::string_view text);
std::string render(const FormulaPtr &f); // canonical text; parse(render(f)) == f

// True iff every assignment satisfying a satisfies b. Exhaustive enumeration,
// one assignment at a time; throws when the pair mentions more than
// kEntailsVarCap distinct variables.
bool entails(const FormulaPtr &a, const FormulaPtr &b);
// Independent route for cross-checking: a & ~b is unsatisfiable, evaluated
// with 64-assignments-per-word bit-parallel truth tables.
bool entails_via_unsat(const FormulaPtr &a, const FormulaPtr &b);

struct ExamplePair {
  FormulaPtr premise, hypothesis;
  bool label = false; // entails?
};

// Renames variables by a seeded random permutation of [0, var_pool), applied
// consistently to both formulas. Entailment is invariant under this.
ExamplePair alpha_permute(const ExamplePair &pair, std::uint64_t seed, int var_pool);

struct GenConfig {
  int var_pool = 6;   // <= 10 keeps the truth table <= 1024 rows
  int max_depth = 4;
  int size = 1000;
  std::uint64_t seed = 1;
  bool balance = true;
};

// Random formula pairs, every label re-verified by the entails oracle;
// balanced 50/50 when requested; no duplicate (premise, hypothesis) pairs;
// deterministic per seed. Throws when balance is unattainable within the
// retry budget.
std::vector<ExamplePair> generate_dataset(const GenConfig &config);

// One token per variable / operator / parenthesis over the fixed vocabulary
// {a..z, ~, &, |, >, (, )}.
inline constexpr int kVocabSize = 32;
std::vector<int> tokenize(std::string_view text);
std::string detokenize(std::span<const int> tokens);
std::string token_name(int id);

// TSV: premise <TAB> hypothesis <TAB> {0|1}, canonical grammar.
void write_tsv(const std::string &path, std::span<const ExamplePair> pairs);
std::vector<ExamplePair> read_tsv(const std::string &path);

} // namespace tpru::logic
