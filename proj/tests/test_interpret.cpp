#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <filesystem>
#include <fstream>

#include "tpru/interpret.hpp"

using namespace tpru;

namespace {

StepTrace trace_with_f(std::initializer_list<double> fs) {
  StepTrace t;
  t.f = Matrix(static_cast<int>(fs.size()), 1);
  int i = 0;
  for (double v : fs) t.f(i++, 0) = v;
  return t;
}

// Model whose layer-1 fillers are one-hot at the token index: N = vocab,
// U = I on the token direction, state path disabled.
EncoderModel one_hot_role_model(int vocab) {
  EncoderConfig cfg;
  cfg.cell = CellKind::tpru;
  cfg.d = vocab;
  cfg.d_in = vocab;
  cfg.roles = vocab;
  cfg.vocab = vocab;
  cfg.seed = 4;
  EncoderModel m = EncoderModel::init(cfg);
  m.embedding = Matrix::identity(vocab);
  for (TpruLayer &layer : m.tpru) {
    layer.basis.E = Matrix::identity(vocab);
    layer.basis.W_u = Matrix::identity(vocab);
    layer.basis.W_r = Matrix::identity(vocab);
    layer.params.V_b = Matrix(vocab, vocab); // state path contributes nothing
    layer.params.V_x = Matrix::identity(vocab);
    layer.params.b_b = 0.0;
    layer.params.b_x = 0.0;
  }
  return m;
}

} // namespace

TEST_SUITE("interpret") {

TEST_CASE("max_role") {
  CHECK(*max_role(trace_with_f({0.1, 0.7, 0.2})) == 1);
  CHECK(*max_role(trace_with_f({0.5, 0.5})) == 0); // ties to the lowest index
  CHECK_FALSE(max_role(trace_with_f({0.0, 0.0, 0.0})).has_value());
}

TEST_CASE("pmi_table") {
  SUBCASE("independent counts give zero PMI everywhere") {
    // rank-one joint: counts(i,j) = r_i * c_j
    Matrix joint(3, 4);
    const double r[] = {1, 2, 3}, c[] = {4, 1, 2, 3};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j) joint(i, j) = r[i] * c[j];
    const std::vector<std::string> names{"A", "B", "C"};
    const PmiTable t = pmi_table(joint, names);
    for (const PmiTag &tag : t.tags)
      for (const PmiEntry &e : tag.entries) CHECK(std::abs(e.pmi) <= 1e-12);
  }
  SUBCASE("diagonal counts give one bit") {
    Matrix joint(2, 2);
    joint(0, 0) = 2;
    joint(1, 1) = 2;
    const std::vector<std::string> names{"x", "y"};
    const PmiTable t = pmi_table(joint, names);
    REQUIRE(t.tags[0].entries.size() == 1); // zero-joint pairs omitted
    CHECK(t.tags[0].entries[0].role == 0);
    CHECK(t.tags[0].entries[0].pmi == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(t.tags[1].entries[0].pmi == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("random table matches a direct recomputation") {
    Matrix joint(5, 7);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 7; ++j) joint(i, j) = static_cast<double>(mix64(31, i * 7 + j) % 9);
    std::vector<std::string> names;
    for (int i = 0; i < 5; ++i) names.push_back("t" + std::to_string(i));
    const PmiTable t = pmi_table(joint, names);

    double total = 0.0;
    std::vector<double> row(5, 0.0), col(7, 0.0);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 7; ++j) {
        total += joint(i, j);
        row[i] += joint(i, j);
        col[j] += joint(i, j);
      }
    // joint probabilities sum to one before any PMI is taken
    double psum = 0.0;
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 7; ++j) psum += joint(i, j) / total;
    CHECK(std::abs(psum - 1.0) <= 1e-12);

    for (int i = 0; i < 5; ++i)
      for (const PmiEntry &e : t.tags[i].entries) {
        const double want = std::log2((joint(i, e.role) / total) /
                                      ((row[i] / total) * (col[e.role] / total)));
        CHECK(e.pmi == doctest::Approx(want).epsilon(1e-12));
      }
  }
  SUBCASE("tag/role symmetry") {
    Matrix joint(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) joint(i, j) = static_cast<double>(1 + mix64(33, i * 3 + j) % 5);
    Matrix jt(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) jt(j, i) = joint(i, j);
    const std::vector<std::string> names{"0", "1", "2"};
    const PmiTable a = pmi_table(joint, names);
    const PmiTable b = pmi_table(jt, names);
    for (int i = 0; i < 3; ++i)
      for (const PmiEntry &e : a.tags[i].entries) {
        bool found = false;
        for (const PmiEntry &e2 : b.tags[e.role].entries)
          if (e2.role == i) {
            CHECK(e.pmi == doctest::Approx(e2.pmi).epsilon(1e-12));
            found = true;
          }
        CHECK(found);
      }
  }
  SUBCASE("gap flagging at half a bit") {
    Matrix joint(1, 2);
    joint(0, 0) = 3;
    joint(0, 1) = 1;
    // single tag: p(tag)=1, PMI = log2(p(role|tag)/p(role)) = 0 for both
    const std::vector<std::string> names{"only"};
    const PmiTable t = pmi_table(joint, names);
    CHECK_FALSE(t.tags[0].flagged);
  }
  SUBCASE("empty counts are rejected") {
    const std::vector<std::string> names{"a"};
    CHECK_THROWS_AS((void)pmi_table(Matrix(1, 3), names), std::invalid_argument);
  }
}

TEST_CASE("role traces from the constructed one-hot model") {
  const EncoderModel model = one_hot_role_model(4);
  const DerivedCache derived = DerivedCache::make(model);
  const std::vector<int> seq{2, 0, 3, 3, 1};
  const auto obs = role_trace(model, derived, seq, 1);
  REQUIRE(obs.size() == seq.size());
  for (size_t t = 0; t < seq.size(); ++t) {
    REQUIRE(obs[t].beta.has_value());
    CHECK(*obs[t].beta == seq[t]); // layer-1 filler is one-hot at the token
    CHECK(obs[t].f_max == doctest::Approx(1.0));
  }
}

TEST_CASE("sense report") {
  const EncoderModel model = one_hot_role_model(4);
  const std::vector<std::vector<int>> corpus{{2, 0, 1}, {0, 2, 3}, {1, 2, 2}};

  // tag file aligned with the 9 tokens; token 2 occurs with two classes
  const std::string tag_path = std::filesystem::temp_directory_path() / "tpru_tags.tsv";
  {
    std::ofstream f(tag_path);
    const char *tags[] = {"ctxA", "x", "x", "x", "ctxB", "x", "x", "ctxA", "ctxA"};
    int i = 0;
    for (const auto &seq : corpus)
      for (int tok : seq) f << "tok" << tok << "\t" << tags[i++] << "\n";
  }
  const TagFile tags = read_tag_file(tag_path);
  CHECK(tags.tokens.size() == 9);

  SUBCASE("forced one-hot roles give clean conditionals") {
    const SenseReport rep = sense_report(model, corpus, tags, 2, 1);
    CHECK(rep.occurrences == 4);
    // all occurrences of token 2 bind to role 2, whatever the class
    REQUIRE(rep.roles.size() == 1);
    CHECK(rep.roles[0] == 2);
    for (size_t c = 0; c < rep.classes.size(); ++c)
      CHECK(rep.p_role_given_class(static_cast<int>(c), 0) == 1.0);
    // class split of the four hits: ctxA three times, ctxB once
    int ctxA = -1, ctxB = -1;
    for (size_t c = 0; c < rep.classes.size(); ++c) {
      if (rep.classes[c] == "ctxA") ctxA = static_cast<int>(c);
      if (rep.classes[c] == "ctxB") ctxB = static_cast<int>(c);
    }
    REQUIRE(ctxA >= 0);
    REQUIRE(ctxB >= 0);
    CHECK(rep.p_class_given_role(ctxA, 0) == doctest::Approx(0.75));
    CHECK(rep.p_class_given_role(ctxB, 0) == doctest::Approx(0.25));
  }
  SUBCASE("single occurrence pins both conditionals to one") {
    const SenseReport rep = sense_report(model, corpus, tags, 3, 1);
    CHECK(rep.occurrences == 1);
    CHECK(rep.p_role_given_class(0, 0) == 1.0);
    CHECK(rep.p_class_given_role(0, 0) == 1.0);
  }
  SUBCASE("absent target is an error") {
    const EncoderModel m2 = one_hot_role_model(5);
    CHECK_THROWS_AS((void)sense_report(m2, corpus, tags, 4, 1), std::invalid_argument);
  }
  SUBCASE("misaligned tag file is rejected") {
    const std::vector<std::vector<int>> shorter{{2, 0}};
    CHECK_THROWS_AS((void)sense_report(model, shorter, tags, 2, 1), std::invalid_argument);
  }
}

TEST_CASE("role/tag count matrix maps through pmi") {
  const EncoderModel model = one_hot_role_model(3);
  const std::vector<std::vector<int>> corpus{{0, 1, 2, 0}, {1, 1, 0, 2}};
  const std::string tag_path = std::filesystem::temp_directory_path() / "tpru_tags2.tsv";
  {
    std::ofstream f(tag_path);
    for (const auto &seq : corpus)
      for (int tok : seq) f << "tok" << tok << "\t" << (tok == 0 ? "zero" : "rest") << "\n";
  }
  const TagFile tags = read_tag_file(tag_path);
  const Matrix counts = role_tag_counts(model, corpus, tags, 1);
  // "zero" rows count the three occurrences of token 0, all at role 0
  const int zero_row = tags.tag_id("zero");
  CHECK(counts(zero_row, 0) == 3.0);
  CHECK(counts(zero_row, 1) == 0.0);
  const PmiTable t = pmi_table(counts, tags.tag_names);
  CHECK(t.tags.size() == 2);
}

} // TEST_SUITE
