#include "tpru/logic.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <unordered_set>

#include "tpru/linalg.hpp"

namespace tpru::logic {

int Formula::depth() const {
  switch (kind) {
    case Connective::var: return 0;
    case Connective::negation: return 1 + lhs->depth();
    default: return 1 + std::max(lhs->depth(), rhs->depth());
  }
}

int Formula::max_var() const {
  switch (kind) {
    case Connective::var: return var;
    case Connective::negation: return lhs->max_var();
    default: return std::max(lhs->max_var(), rhs->max_var());
  }
}

void Formula::collect_vars(std::vector<bool> &seen) const {
  switch (kind) {
    case Connective::var:
      if (var >= 0 && var < static_cast<int>(seen.size())) seen[var] = true;
      return;
    case Connective::negation: lhs->collect_vars(seen); return;
    default:
      lhs->collect_vars(seen);
      rhs->collect_vars(seen);
  }
}

FormulaPtr make_var(int index) {
  if (index < 0 || index > kMaxVarIndex)
    throw std::invalid_argument("variable index out of range: " + std::to_string(index));
  auto f = std::make_shared<Formula>();
  f->kind = Connective::var;
  f->var = index;
  return f;
}

namespace {

FormulaPtr make_node(Connective kind, FormulaPtr l, FormulaPtr r) {
  auto f = std::make_shared<Formula>();
  f->kind = kind;
  f->lhs = std::move(l);
  f->rhs = std::move(r);
  return f;
}

} // namespace

FormulaPtr make_not(FormulaPtr f) { return make_node(Connective::negation, std::move(f), nullptr); }
FormulaPtr make_and(FormulaPtr l, FormulaPtr r) {
  return make_node(Connective::conjunction, std::move(l), std::move(r));
}
FormulaPtr make_or(FormulaPtr l, FormulaPtr r) {
  return make_node(Connective::disjunction, std::move(l), std::move(r));
}
FormulaPtr make_implies(FormulaPtr l, FormulaPtr r) {
  return make_node(Connective::implication, std::move(l), std::move(r));
}

// --- parser -------------------------------------------------------------

namespace {

struct Parser {
  std::string_view text;
  size_t pos = 0;

  char peek() const { return pos < text.size() ? text[pos] : '\0'; }

  FormulaPtr parse_form() {
    const char c = peek();
    if (c == '~') {
      ++pos;
      return make_not(parse_form());
    }
    if (c == '(') {
      ++pos;
      FormulaPtr l = parse_form();
      const char op = peek();
      Connective kind;
      if (op == '&') kind = Connective::conjunction;
      else if (op == '|') kind = Connective::disjunction;
      else if (op == '>') kind = Connective::implication;
      else throw ParseError("expected binary operator", pos);
      ++pos;
      FormulaPtr r = parse_form();
      if (peek() != ')') throw ParseError("expected ')'", pos);
      ++pos;
      return make_node(kind, std::move(l), std::move(r));
    }
    if (c == 'v' && pos + 1 < text.size() && std::isdigit(static_cast<unsigned char>(text[pos + 1]))) {
      const size_t start = pos;
      ++pos;
      int idx = 0;
      while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) {
        idx = idx * 10 + (text[pos] - '0');
        if (idx > kMaxVarIndex) throw ParseError("variable index too large", start);
        ++pos;
      }
      return make_var(idx);
    }
    if (c >= 'a' && c <= 'z') {
      ++pos;
      return make_var(c - 'a');
    }
    throw ParseError("unexpected character", pos);
  }
};

} // namespace

FormulaPtr parse_formula(std::string_view text) {
  Parser p{text};
  FormulaPtr f = p.parse_form();
  if (p.pos != text.size()) throw ParseError("trailing input", p.pos);
  return f;
}

std::string render(const FormulaPtr &f) {
  switch (f->kind) {
    case Connective::var: return std::string(1, static_cast<char>('a' + f->var));
    case Connective::negation: return "~" + render(f->lhs);
    case Connective::conjunction: return "(" + render(f->lhs) + "&" + render(f->rhs) + ")";
    case Connective::disjunction: return "(" + render(f->lhs) + "|" + render(f->rhs) + ")";
    case Connective::implication: return "(" + render(f->lhs) + ">" + render(f->rhs) + ")";
  }
  return "";
}

// --- evaluation -------------------------------------------------------------

namespace {

// Distinct variables of the pair, sorted; position in the result is the bit
// position in an assignment mask.
std::vector<int> distinct_vars(const FormulaPtr &a, const FormulaPtr &b) {
  std::vector<bool> seen(kMaxVarIndex + 1, false);
  a->collect_vars(seen);
  b->collect_vars(seen);
  std::vector<int> vars;
  for (int i = 0; i <= kMaxVarIndex; ++i)
    if (seen[i]) vars.push_back(i);
  return vars;
}

bool eval_assignment(const Formula &f, const std::vector<signed char> &truth) {
  switch (f.kind) {
    case Connective::var: return truth[f.var] != 0;
    case Connective::negation: return !eval_assignment(*f.lhs, truth);
    case Connective::conjunction:
      return eval_assignment(*f.lhs, truth) && eval_assignment(*f.rhs, truth);
    case Connective::disjunction:
      return eval_assignment(*f.lhs, truth) || eval_assignment(*f.rhs, truth);
    case Connective::implication:
      return !eval_assignment(*f.lhs, truth) || eval_assignment(*f.rhs, truth);
  }
  return false;
}

// Bit-parallel evaluation: word w, bit r of the result is the formula's value
// under assignment number 64*w + r; variable k alternates in blocks of 2^k.
std::vector<std::uint64_t> eval_bitparallel(const Formula &f, const std::vector<int> &vars,
                                            size_t words) {
  switch (f.kind) {
    case Connective::var: {
      const int bit = static_cast<int>(
          std::find(vars.begin(), vars.end(), f.var) - vars.begin());
      std::vector<std::uint64_t> out(words);
      if (bit < 6) {
        // pattern within a single word
        std::uint64_t pattern = 0;
        for (int r = 0; r < 64; ++r)
          if (r & (1 << bit)) pattern |= 1ull << r;
        std::fill(out.begin(), out.end(), pattern);
      } else {
        const size_t block = 1ull << (bit - 6);
        for (size_t w = 0; w < words; ++w)
          if ((w / block) & 1) out[w] = ~0ull;
      }
      return out;
    }
    case Connective::negation: {
      auto v = eval_bitparallel(*f.lhs, vars, words);
      for (auto &w : v) w = ~w;
      return v;
    }
    default: {
      auto l = eval_bitparallel(*f.lhs, vars, words);
      const auto r = eval_bitparallel(*f.rhs, vars, words);
      for (size_t i = 0; i < words; ++i) {
        if (f.kind == Connective::conjunction) l[i] &= r[i];
        else if (f.kind == Connective::disjunction) l[i] |= r[i];
        else l[i] = ~l[i] | r[i];
      }
      return l;
    }
  }
}

void check_var_cap(const std::vector<int> &vars) {
  if (static_cast<int>(vars.size()) > kEntailsVarCap)
    throw std::invalid_argument("entails: " + std::to_string(vars.size()) +
                                " distinct variables exceeds the cap of " +
                                std::to_string(kEntailsVarCap));
}

} // namespace

bool entails(const FormulaPtr &a, const FormulaPtr &b) {
  const std::vector<int> vars = distinct_vars(a, b);
  check_var_cap(vars);
  const std::uint64_t rows = 1ull << vars.size();
  std::vector<signed char> truth(kMaxVarIndex + 1, 0);
  for (std::uint64_t row = 0; row < rows; ++row) {
    for (size_t k = 0; k < vars.size(); ++k) truth[vars[k]] = (row >> k) & 1 ? 1 : 0;
    if (eval_assignment(*a, truth) && !eval_assignment(*b, truth)) return false;
  }
  return true;
}

bool entails_via_unsat(const FormulaPtr &a, const FormulaPtr &b) {
  const FormulaPtr conj = make_and(a, make_not(b));
  const std::vector<int> vars = distinct_vars(a, b);
  check_var_cap(vars);
  const std::uint64_t rows = 1ull << vars.size();
  const size_t words = static_cast<size_t>((rows + 63) / 64);
  std::vector<std::uint64_t> table = eval_bitparallel(*conj, vars, words);
  // mask off assignments beyond 2^k in the last word
  if (rows < 64) table[0] &= (1ull << rows) - 1;
  for (std::uint64_t w : table)
    if (w != 0) return false;
  return true;
}

// --- renaming & generation ---------------------------------------------------

namespace {

FormulaPtr apply_renaming(const Formula &f, const std::vector<int> &perm) {
  switch (f.kind) {
    case Connective::var: {
      const int target = f.var < static_cast<int>(perm.size()) ? perm[f.var] : f.var;
      return make_var(target);
    }
    case Connective::negation: return make_not(apply_renaming(*f.lhs, perm));
    default:
      return make_node(f.kind, apply_renaming(*f.lhs, perm), apply_renaming(*f.rhs, perm));
  }
}

} // namespace

ExamplePair alpha_permute(const ExamplePair &pair, std::uint64_t seed, int var_pool) {
  std::vector<int> perm(var_pool);
  for (int i = 0; i < var_pool; ++i) perm[i] = i;
  // Fisher-Yates with the counter-based stream
  for (int i = var_pool - 1; i > 0; --i) {
    const int j = static_cast<int>(mix64(seed, i) % static_cast<std::uint64_t>(i + 1));
    std::swap(perm[i], perm[j]);
  }
  ExamplePair out;
  out.premise = apply_renaming(*pair.premise, perm);
  out.hypothesis = apply_renaming(*pair.hypothesis, perm);
  out.label = pair.label;
  return out;
}

namespace {

struct Sampler {
  std::uint64_t seed;
  std::uint64_t counter = 0;

  std::uint64_t next() { return mix64(seed, counter++); }
  int below(int n) { return static_cast<int>(next() % static_cast<std::uint64_t>(n)); }
  double unit() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
};

FormulaPtr random_formula(Sampler &rng, int budget, int var_pool) {
  if (budget <= 0) return make_var(rng.below(var_pool));
  const double roll = rng.unit();
  if (roll < 0.25) return make_var(rng.below(var_pool));
  if (roll < 0.45) return make_not(random_formula(rng, budget - 1, var_pool));
  FormulaPtr l = random_formula(rng, budget - 1, var_pool);
  FormulaPtr r = random_formula(rng, budget - 1, var_pool);
  switch (rng.below(3)) {
    case 0: return make_and(std::move(l), std::move(r));
    case 1: return make_or(std::move(l), std::move(r));
    default: return make_implies(std::move(l), std::move(r));
  }
}

// premise |= core |= hypothesis by construction: the premise optionally
// strengthens the core with a conjunct, the hypothesis weakens it with a
// disjunct or an implication from anything.
ExamplePair propose_entailed(Sampler &rng, int max_depth, int var_pool) {
  const FormulaPtr core = random_formula(rng, max_depth - 1, var_pool);
  FormulaPtr premise = core;
  switch (rng.below(3)) {
    case 0: break;
    case 1: premise = make_and(core, random_formula(rng, max_depth - 1, var_pool)); break;
    case 2: premise = make_and(random_formula(rng, max_depth - 1, var_pool), core); break;
  }
  FormulaPtr hyp = core;
  switch (rng.below(4)) {
    case 0: break;
    case 1: hyp = make_or(core, random_formula(rng, max_depth - 1, var_pool)); break;
    case 2: hyp = make_or(random_formula(rng, max_depth - 1, var_pool), core); break;
    case 3: hyp = make_implies(random_formula(rng, max_depth - 1, var_pool), core); break;
  }
  return {std::move(premise), std::move(hyp), true};
}

// Small structural edits that usually break entailment while keeping the
// surface form close to a positive example.
FormulaPtr mutate(Sampler &rng, const Formula &f, int var_pool) {
  if (f.kind == Connective::var) {
    int v = rng.below(var_pool);
    if (v == f.var) v = (v + 1) % var_pool;
    return make_var(v);
  }
  const double roll = rng.unit();
  if (f.kind == Connective::negation) {
    if (roll < 0.3) return f.lhs; // drop the negation
    return make_not(mutate(rng, *f.lhs, var_pool));
  }
  if (roll < 0.25) {
    // flip the connective
    const Connective flipped =
        f.kind == Connective::conjunction ? Connective::disjunction : Connective::conjunction;
    return make_node(flipped, f.lhs, f.rhs);
  }
  if (roll < 0.6) return make_node(f.kind, mutate(rng, *f.lhs, var_pool), f.rhs);
  return make_node(f.kind, f.lhs, mutate(rng, *f.rhs, var_pool));
}

} // namespace

std::vector<ExamplePair> generate_dataset(const GenConfig &config) {
  if (config.var_pool < 1 || config.var_pool > 10)
    throw std::invalid_argument("var_pool must be in [1, 10]");
  if (config.size < 1) throw std::invalid_argument("size must be >= 1");

  Sampler rng{derive_seed(config.seed, "datagen")};
  std::vector<ExamplePair> out;
  std::unordered_set<std::string> seen;
  const int want_pos = config.balance ? config.size / 2 : 0;
  const int want_neg = config.balance ? config.size - want_pos : 0;
  int have_pos = 0, have_neg = 0;
  const long long budget = 400LL * config.size;

  for (long long attempt = 0; static_cast<int>(out.size()) < config.size; ++attempt) {
    if (attempt > budget)
      throw std::runtime_error("generate_dataset: retry budget exhausted (" +
                               std::to_string(out.size()) + "/" + std::to_string(config.size) +
                               " examples)");
    const double roll = rng.unit();
    ExamplePair cand;
    if (roll < 0.45) {
      cand = propose_entailed(rng, config.max_depth, config.var_pool);
    } else if (roll < 0.60) {
      // near-miss: start from an entailed pair, damage the hypothesis once
      // or twice
      cand = propose_entailed(rng, config.max_depth, config.var_pool);
      cand.hypothesis = mutate(rng, *cand.hypothesis, config.var_pool);
      if (rng.unit() < 0.5) cand.hypothesis = mutate(rng, *cand.hypothesis, config.var_pool);
    } else {
      cand.premise = random_formula(rng, config.max_depth, config.var_pool);
      cand.hypothesis = random_formula(rng, config.max_depth, config.var_pool);
    }
    cand.label = entails(cand.premise, cand.hypothesis);

    if (config.balance) {
      if (cand.label && have_pos >= want_pos) continue;
      if (!cand.label && have_neg >= want_neg) continue;
    }
    std::string key = render(cand.premise);
    key += '\t';
    key += render(cand.hypothesis);
    if (!seen.insert(std::move(key)).second) continue;
    (cand.label ? have_pos : have_neg) += 1;
    out.push_back(std::move(cand));
  }
  return out;
}

// --- tokens ----------------------------------------------------------------

namespace {

constexpr int kTokNot = 26, kTokAnd = 27, kTokOr = 28, kTokImplies = 29, kTokLParen = 30,
              kTokRParen = 31;

void tokenize_into(const Formula &f, std::vector<int> &out) {
  switch (f.kind) {
    case Connective::var: out.push_back(f.var); return;
    case Connective::negation:
      out.push_back(kTokNot);
      tokenize_into(*f.lhs, out);
      return;
    default:
      out.push_back(kTokLParen);
      tokenize_into(*f.lhs, out);
      out.push_back(f.kind == Connective::conjunction ? kTokAnd
                    : f.kind == Connective::disjunction ? kTokOr
                                                        : kTokImplies);
      tokenize_into(*f.rhs, out);
      out.push_back(kTokRParen);
  }
}

} // namespace

std::vector<int> tokenize(std::string_view text) {
  const FormulaPtr f = parse_formula(text); // rejects malformed input
  std::vector<int> out;
  tokenize_into(*f, out);
  return out;
}

std::string token_name(int id) {
  if (id >= 0 && id < 26) return std::string(1, static_cast<char>('a' + id));
  switch (id) {
    case kTokNot: return "~";
    case kTokAnd: return "&";
    case kTokOr: return "|";
    case kTokImplies: return ">";
    case kTokLParen: return "(";
    case kTokRParen: return ")";
  }
  throw std::invalid_argument("bad token id: " + std::to_string(id));
}

std::string detokenize(std::span<const int> tokens) {
  std::string out;
  for (int id : tokens) out += token_name(id);
  return out;
}

// --- TSV ---------------------------------------------------------------------

void write_tsv(const std::string &path, std::span<const ExamplePair> pairs) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  for (const ExamplePair &p : pairs)
    f << render(p.premise) << '\t' << render(p.hypothesis) << '\t' << (p.label ? 1 : 0) << '\n';
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::vector<ExamplePair> read_tsv(const std::string &path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::vector<ExamplePair> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t t1 = line.find('\t');
    const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 3 tab-separated fields");
    ExamplePair p;
    try {
      p.premise = parse_formula(std::string_view(line).substr(0, t1));
      p.hypothesis = parse_formula(std::string_view(line).substr(t1 + 1, t2 - t1 - 1));
    } catch (const ParseError &e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    const std::string_view lab = std::string_view(line).substr(t2 + 1);
    if (lab == "1") p.label = true;
    else if (lab == "0") p.label = false;
    else throw std::runtime_error(path + ":" + std::to_string(lineno) + ": label must be 0 or 1");
    out.push_back(std::move(p));
  }
  return out;
}

} // namespace tpru::logic
