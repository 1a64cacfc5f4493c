#include <doctest.h>

#include <filesystem>
#include <set>

#include "tpru/linalg.hpp"
#include "tpru/logic.hpp"

using namespace tpru;
using namespace tpru::logic;

TEST_SUITE("logic") {

TEST_CASE("parser") {
  SUBCASE("conjunction") {
    const FormulaPtr f = parse_formula("(p&q)");
    CHECK(f->kind == Connective::conjunction);
    CHECK(f->lhs->var == 'p' - 'a');
    CHECK(f->rhs->var == 'q' - 'a');
  }
  SUBCASE("negated disjunction") {
    const FormulaPtr f = parse_formula("~(p|q)");
    CHECK(f->kind == Connective::negation);
    CHECK(f->lhs->kind == Connective::disjunction);
  }
  SUBCASE("missing close paren reports the offset") {
    try {
      (void)parse_formula("(p&q");
      FAIL("expected a parse error");
    } catch (const ParseError &e) {
      CHECK(e.offset == 4);
    }
  }
  SUBCASE("digit-suffixed variables alias letters") {
    CHECK(parse_formula("v3")->var == 3);
    CHECK(render(parse_formula("v3")) == "d");
    CHECK_THROWS_AS((void)parse_formula("v99"), ParseError);
  }
  SUBCASE("trailing garbage rejected") { CHECK_THROWS_AS((void)parse_formula("p)"), ParseError); }
  SUBCASE("render-parse round trip on random formulas") {
    GenConfig cfg;
    cfg.size = 40;
    cfg.seed = 5;
    for (const ExamplePair &p : generate_dataset(cfg)) {
      CHECK(render(parse_formula(render(p.premise))) == render(p.premise));
      CHECK(render(parse_formula(render(p.hypothesis))) == render(p.hypothesis));
    }
  }
}

TEST_CASE("entailment oracle") {
  const FormulaPtr p = make_var(15), q = make_var(16);
  CHECK(entails(make_and(p, q), q));                    // p&q |= q
  CHECK(entails(p, p));                                 // reflexive
  CHECK_FALSE(entails(p, q));                           // p=1, q=0
  CHECK(entails(make_and(p, make_not(p)), q));          // vacuous
  CHECK(entails(p, make_or(q, make_not(q))));           // tautology
  CHECK_FALSE(entails(make_or(p, q), make_and(p, q)));
}

TEST_CASE("variable cap is enforced") {
  FormulaPtr big = make_var(0);
  for (int i = 1; i <= 21; ++i) big = make_and(big, make_var(i));
  CHECK_THROWS_AS((void)entails(big, big), std::invalid_argument);
}

TEST_CASE("the two entailment routes agree") {
  GenConfig cfg;
  cfg.size = 300;
  cfg.seed = 11;
  cfg.balance = false;
  for (const ExamplePair &p : generate_dataset(cfg))
    CHECK(entails(p.premise, p.hypothesis) == entails_via_unsat(p.premise, p.hypothesis));
}

TEST_CASE("alpha permutation") {
  const ExamplePair base{parse_formula("(p&q)"), parse_formula("q"), true};
  SUBCASE("a fixed permutation keeps the label") {
    for (int s = 0; s < 100; ++s) {
      const ExamplePair renamed = alpha_permute(base, mix64(50, s), 10);
      CHECK(renamed.label == base.label);
      CHECK(entails(renamed.premise, renamed.hypothesis));
    }
  }
  SUBCASE("random pairs stay oracle-consistent under renaming") {
    GenConfig cfg;
    cfg.size = 50;
    cfg.seed = 51;
    const auto pairs = generate_dataset(cfg);
    for (size_t i = 0; i < pairs.size(); ++i) {
      const ExamplePair renamed = alpha_permute(pairs[i], mix64(52, i), cfg.var_pool);
      CHECK(entails(renamed.premise, renamed.hypothesis) == pairs[i].label);
    }
  }
  SUBCASE("degenerate single-variable pool is the identity") {
    const ExamplePair same = alpha_permute({parse_formula("a"), parse_formula("a"), true}, 1, 1);
    CHECK(render(same.premise) == "a");
  }
}

TEST_CASE("dataset generation") {
  GenConfig cfg;
  cfg.size = 1000;
  cfg.seed = 77;
  const auto pairs = generate_dataset(cfg);
  CHECK(pairs.size() == 1000);

  SUBCASE("balanced classes") {
    long long pos = 0;
    for (const auto &p : pairs) pos += p.label;
    CHECK(pos == 500);
  }
  SUBCASE("labels are oracle-verified and depth-capped") {
    for (const auto &p : pairs) {
      CHECK(entails(p.premise, p.hypothesis) == p.label);
      CHECK(p.premise->depth() <= cfg.max_depth);
      CHECK(p.hypothesis->depth() <= cfg.max_depth);
      CHECK(p.premise->max_var() < cfg.var_pool);
    }
  }
  SUBCASE("no duplicate pairs") {
    std::set<std::string> keys;
    for (const auto &p : pairs) keys.insert(render(p.premise) + "\t" + render(p.hypothesis));
    CHECK(keys.size() == pairs.size());
  }
  SUBCASE("same seed reproduces the dataset") {
    const auto again = generate_dataset(cfg);
    REQUIRE(again.size() == pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
      CHECK(render(again[i].premise) == render(pairs[i].premise));
      CHECK(again[i].label == pairs[i].label);
    }
  }
}

TEST_CASE("tokenizer") {
  SUBCASE("fixed vocabulary ids") {
    const auto toks = tokenize("(p&q)");
    REQUIRE(toks.size() == 5);
    CHECK(toks[0] == 30);            // (
    CHECK(toks[1] == 'p' - 'a');
    CHECK(toks[2] == 27);            // &
    CHECK(toks[3] == 'q' - 'a');
    CHECK(toks[4] == 31);            // )
    const auto neg = tokenize("~p");
    CHECK(neg[0] == 26);
    CHECK(neg[1] == 'p' - 'a');
  }
  SUBCASE("round trip through token ids") {
    GenConfig cfg;
    cfg.size = 30;
    cfg.seed = 91;
    for (const auto &p : generate_dataset(cfg)) {
      const std::string text = render(p.premise);
      CHECK(detokenize(tokenize(text)) == text);
    }
  }
  SUBCASE("malformed input is rejected") {
    CHECK_THROWS_AS((void)tokenize("(p&"), ParseError);
  }
}

TEST_CASE("tsv round trip") {
  GenConfig cfg;
  cfg.size = 64;
  cfg.seed = 13;
  const auto pairs = generate_dataset(cfg);
  const std::string path = std::filesystem::temp_directory_path() / "tpru_pairs.tsv";
  write_tsv(path, pairs);
  const auto loaded = read_tsv(path);
  REQUIRE(loaded.size() == pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    CHECK(render(loaded[i].premise) == render(pairs[i].premise));
    CHECK(render(loaded[i].hypothesis) == render(pairs[i].hypothesis));
    CHECK(loaded[i].label == pairs[i].label);
  }
  CHECK_THROWS(read_tsv("/nonexistent/definitely_missing.tsv"));
}

} // TEST_SUITE
