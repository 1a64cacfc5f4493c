#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tpru/checkpoint.hpp"
#include "tpru/config.hpp"

using namespace tpru;

namespace {

std::string slurp(const std::string &path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::string tmp(const char *name) {
  return std::filesystem::temp_directory_path() / name;
}

} // namespace

TEST_SUITE("config_checkpoint") {

TEST_CASE("config parsing") {
  SUBCASE("keys, comments, whitespace") {
    const RunConfig cfg = RunConfig::from_text(
        "# a comment\n"
        "d = 16\n"
        "cell = gru   # trailing comment\n"
        "\n"
        "lr = 0.01\n"
        "seed = 99\n");
    CHECK(cfg.d == 16);
    CHECK(cfg.cell == CellKind::gru);
    CHECK(cfg.lr == doctest::Approx(0.01));
    CHECK(cfg.seed == 99);
    CHECK(cfg.epochs == 10); // untouched default
  }
  SUBCASE("unknown keys are rejected with their line") {
    try {
      (void)RunConfig::from_text("d = 4\nnonsense_key = 3\n", "test.cfg");
      FAIL("expected rejection");
    } catch (const std::runtime_error &e) {
      const std::string msg = e.what();
      CHECK(msg.find("test.cfg:2") != std::string::npos);
      CHECK(msg.find("nonsense_key") != std::string::npos);
    }
  }
  SUBCASE("malformed values are rejected") {
    CHECK_THROWS((void)RunConfig::from_text("d = abc\n"));
    CHECK_THROWS((void)RunConfig::from_text("cell = rnn\n"));
    CHECK_THROWS((void)RunConfig::from_text("just a line\n"));
  }
  SUBCASE("serialize is a fixed point") {
    RunConfig cfg;
    cfg.d = 24;
    cfg.task = "lm";
    cfg.corpus_path = "corpus.txt";
    const std::string once = cfg.serialize();
    CHECK(RunConfig::from_text(once).serialize() == once);
  }
  SUBCASE("named sub-seeds differ") {
    RunConfig cfg;
    CHECK(cfg.sub_seed("init") != cfg.sub_seed("data"));
  }
}

TEST_CASE("checkpoint round trip is bit-exact") {
  EncoderConfig ecfg;
  ecfg.cell = CellKind::tpru;
  ecfg.d = 6;
  ecfg.d_in = 6;
  ecfg.roles = 5;
  ecfg.vocab = 12;
  ecfg.seed = 3;
  EncoderModel model = EncoderModel::init(ecfg);
  AdamState adam = AdamState::init(model.trainable(), {});
  adam.t = 17;
  RunConfig cfg;
  cfg.d = 6;
  cfg.d_in = 6;
  cfg.roles = 5;

  const std::string p1 = tmp("tpru_ck1.ckpt"), p2 = tmp("tpru_ck2.ckpt");
  const std::vector<std::string> vocab{"a", "b", "c"};
  save_model_checkpoint(p1, model, adam, cfg, vocab, 0.75);

  LoadedCheckpoint loaded = load_model_checkpoint(p1);
  CHECK(loaded.adam.t == 17);
  CHECK(loaded.best_metric == 0.75);
  CHECK(loaded.vocab == vocab);
  CHECK(loaded.config.d == 6);
  CHECK(loaded.model.embedding.data == model.embedding.data);
  CHECK(loaded.model.tpru[0].basis.E.data == model.tpru[0].basis.E.data);
  CHECK(loaded.model.tpru[1].params.V_b.data == model.tpru[1].params.V_b.data);

  save_model_checkpoint(p2, loaded.model, loaded.adam, loaded.config, loaded.vocab,
                        loaded.best_metric);
  CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("checkpoint corruption is diagnosed distinctly") {
  EncoderConfig ecfg;
  ecfg.d = 4;
  ecfg.d_in = 4;
  ecfg.roles = 3;
  ecfg.vocab = 8;
  EncoderModel model = EncoderModel::init(ecfg);
  AdamState adam = AdamState::init(model.trainable(), {});
  const std::string path = tmp("tpru_ck3.ckpt");
  save_model_checkpoint(path, model, adam, RunConfig{}, {}, 0.0);
  const std::string good = slurp(path);

  SUBCASE("bad magic") {
    std::string bad = good;
    bad[0] = 'X';
    std::ofstream(path, std::ios::binary) << bad;
    try {
      (void)load_model_checkpoint(path);
      FAIL("expected bad magic");
    } catch (const CheckpointError &e) {
      CHECK(e.kind == CheckpointError::Kind::bad_magic);
    }
  }
  SUBCASE("version mismatch") {
    std::string bad = good;
    bad[10] = 2;
    std::ofstream(path, std::ios::binary) << bad;
    try {
      (void)load_model_checkpoint(path);
      FAIL("expected version error");
    } catch (const CheckpointError &e) {
      CHECK(e.kind == CheckpointError::Kind::bad_version);
    }
  }
  SUBCASE("truncation") {
    std::ofstream(path, std::ios::binary) << good.substr(0, good.size() / 2);
    try {
      (void)load_model_checkpoint(path);
      FAIL("expected truncation error");
    } catch (const CheckpointError &e) {
      CHECK(e.kind == CheckpointError::Kind::truncated);
    }
  }
  SUBCASE("missing file is an io error") {
    try {
      (void)load_model_checkpoint(tmp("definitely_absent.ckpt"));
      FAIL("expected io error");
    } catch (const CheckpointError &e) {
      CHECK(e.kind == CheckpointError::Kind::io);
    }
  }
}

} // TEST_SUITE
