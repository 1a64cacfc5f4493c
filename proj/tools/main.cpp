// Command-line entry point: datagen, train, eval, gradcheck, analyze,
// interpret, bench.
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "tpru/checkpoint.hpp"
#include "tpru/config.hpp"
#include "tpru/grad.hpp"
#include "tpru/harness.hpp"
#include "tpru/interpret.hpp"
#include "tpru/logic.hpp"

namespace {

using namespace tpru;

RunConfig load_config(const std::string &path) {
  return path.empty() ? RunConfig{} : RunConfig::from_file(path);
}

void write_text(const std::string &path, const std::string &content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << content;
}

int cmd_datagen(const std::string &config_path, const std::string &task, const std::string &out,
                int var_pool, int max_depth, int size, std::uint64_t seed, bool balance,
                size_t lm_bytes) {
  RunConfig cfg = load_config(config_path);
  if (task == "lm") {
    write_text(out, generate_lm_corpus(seed ? seed : cfg.seed, lm_bytes));
    std::printf("wrote ~%zu bytes of corpus to %s\n", lm_bytes, out.c_str());
    return 0;
  }
  logic::GenConfig gen;
  gen.var_pool = var_pool > 0 ? var_pool : cfg.var_pool;
  gen.max_depth = max_depth > 0 ? max_depth : cfg.max_depth;
  gen.size = size;
  gen.seed = seed ? seed : cfg.sub_seed("data");
  gen.balance = balance;
  const auto pairs = logic::generate_dataset(gen);
  logic::write_tsv(out, pairs);
  long long pos = 0;
  for (const auto &p : pairs) pos += p.label ? 1 : 0;
  std::printf("wrote %zu pairs (%lld entailed) to %s\n", pairs.size(), pos, out.c_str());
  return 0;
}

int cmd_train(const std::string &config_path) {
  const RunConfig cfg = RunConfig::from_file(config_path);
  const TrainResult res = cfg.task == "lm" ? train_lm(cfg) : train_entailment(cfg);
  for (const EpochRow &r : res.rows)
    std::printf("epoch %d %s loss %.6f metric %.6f\n", r.epoch, r.split.c_str(), r.loss, r.metric);
  std::printf("best %s %.6f at epoch %d -> %s\n", cfg.task == "lm" ? "valid ppl" : "dev acc",
              res.best_dev_metric, res.best_epoch, res.checkpoint_path.c_str());
  return 0;
}

int cmd_eval(const std::string &ckpt, const std::string &data) {
  const double metric = eval_checkpoint(ckpt, data);
  std::printf("%.17g\n", metric);
  return 0;
}

int cmd_gradcheck(const std::string &config_path) {
  const RunConfig cfg = load_config(config_path);
  const auto t0 = std::chrono::steady_clock::now();
  const GradcheckReport rep = run_gradcheck_suite(cfg.gradcheck_cases, cfg.seed);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const GradcheckCase &c : rep.cases)
    std::printf("%s d=%-3d d_in=%d N=%-3d H=%d T=%d max_rel_err=%.3e\n",
                c.passed ? "ok  " : "FAIL", c.d, c.d_in, c.roles, c.slices, c.steps,
                c.max_rel_error);
  std::printf("%zu cases, worst relative error %.3e, %.2fs\n", rep.cases.size(), rep.worst, secs);
  std::printf("gradcheck %s\n", rep.passed ? "PASSED" : "FAILED");
  return rep.passed ? 0 : 1;
}

int cmd_analyze(const std::string &config_path) {
  const RunConfig cfg = load_config(config_path);
  bool all_ok = true;
  const SliceConfig slices{1};
  for (const Variant variant : {Variant::full, Variant::mod1, Variant::mod2, Variant::mod3}) {
    for (int inst = 0; inst < 5; ++inst) {
      const std::uint64_t s = mix64(cfg.sub_seed("analyze"), 100ull * static_cast<int>(variant) + inst);
      TpruParams params = TpruParams::init(cfg.d, cfg.d_in, derive_seed(s, "params"));
      RoleBasis basis = RoleBasis::init(cfg.d, cfg.roles, derive_seed(s, "basis"));
      auto [vp, vb] = make_variant_params(variant, params, basis);
      const Vector b_prev = sample_normal_vector(derive_seed(s, "b"), cfg.d, 1.0);
      const Vector x = sample_normal_vector(derive_seed(s, "x"), cfg.d_in, 1.0);
      const StepTrace trace = step(vp, derive_role_matrices(vb), slices, b_prev, x,
                                   VariantConfig{variant}.normalization());
      const VariantReport rep = analyze_variant(trace, vb, vp, slices, variant);
      if (inst == 0) std::printf("%s\n", rep.summary().c_str());
      all_ok = all_ok && rep.passed;
    }
  }
  std::printf("analyze %s\n", all_ok ? "PASSED" : "FAILED");
  return all_ok ? 0 : 1;
}

int cmd_interpret(const std::string &ckpt, const std::string &corpus, const std::string &tag_path,
                  const std::string &target, const std::string &out_dir) {
  LoadedCheckpoint ck = load_model_checkpoint(ckpt);
  const int layer = ck.config.interpret_layer;
  std::filesystem::create_directories(out_dir);

  // one sequence per corpus line, token ids via the checkpoint vocabulary
  std::ifstream f(corpus, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open corpus: " + corpus);
  std::vector<std::vector<int>> sequences;
  std::string line;
  if (ck.config.task == "lm") {
    WordVocab vocab;
    vocab.words = ck.vocab;
    for (size_t i = 0; i < vocab.words.size(); ++i)
      vocab.index[vocab.words[i]] = static_cast<int>(i);
    vocab.unk = vocab.lookup("<unk>");
    while (std::getline(f, line)) {
      const auto words = split_words(line);
      if (!words.empty()) sequences.push_back(encode_words(words, vocab));
    }
  } else {
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      sequences.push_back(logic::tokenize(line));
    }
  }

  const TagFile tags = read_tag_file(tag_path);
  const Matrix counts = role_tag_counts(ck.model, sequences, tags, layer);
  const PmiTable table = pmi_table(counts, tags.tag_names);
  write_text(out_dir + "/pmi.tsv", table.tsv());
  std::printf("wrote %s/pmi.tsv (%zu tags, %d roles)\n", out_dir.c_str(), table.tags.size(),
              counts.cols);

  if (!target.empty()) {
    int target_id = -1;
    if (ck.config.task == "lm") {
      for (size_t i = 0; i < ck.vocab.size(); ++i)
        if (ck.vocab[i] == target) target_id = static_cast<int>(i);
      if (target_id < 0) throw std::runtime_error("target word not in vocabulary: " + target);
    } else {
      const auto toks = logic::tokenize(target);
      if (toks.size() != 1) throw std::runtime_error("target must be a single token");
      target_id = toks[0];
    }
    const SenseReport rep = sense_report(ck.model, sequences, tags, target_id, layer);
    write_text(out_dir + "/sense.tsv", rep.tsv());
    std::printf("wrote %s/sense.tsv (%lld occurrences)\n", out_dir.c_str(), rep.occurrences);
  }
  return 0;
}

int cmd_bench(const std::string &config_path) {
  const RunConfig cfg = load_config(config_path);
  const SliceConfig slices{cfg.slices};

  auto time_it = [](auto &&fn, int iters) {
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < iters; ++i) fn();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() /
           iters;
  };

  // forward-step timing per cell kind against the dominant-term model
  std::printf("cell step timing (d=%d, d_in=%d, N=%d, H=%d)\n", cfg.d, cfg.d_in, cfg.roles,
              cfg.slices);
  TpruParams tp = TpruParams::init(cfg.d, cfg.d_in, 1);
  RoleBasis rb = RoleBasis::init(cfg.d, cfg.roles, 2);
  const DerivedRoles dr = derive_role_matrices(rb);
  GruParams gp = GruParams::init(cfg.d, cfg.d_in, 3);
  LstmParams lp = LstmParams::init(cfg.d, cfg.d_in, 4);
  const Vector b = sample_normal_vector(5, cfg.d, 1.0);
  const Vector c = sample_normal_vector(6, cfg.d, 1.0);
  const Vector x = sample_normal_vector(7, cfg.d_in, 1.0);
  const int iters = 2000;
  double base = 0.0;
  for (const CellKind kind : {CellKind::tpru, CellKind::gru, CellKind::lstm}) {
    double secs = 0.0;
    switch (kind) {
      case CellKind::tpru:
        secs = time_it([&] { (void)step(tp, dr, slices, b, x); }, iters);
        break;
      case CellKind::gru:
        secs = time_it([&] { (void)gru_step(gp, b, x); }, iters);
        break;
      case CellKind::lstm:
        secs = time_it([&] { (void)lstm_step(lp, b, c, x); }, iters);
        break;
    }
    const StepCost cost = step_cost(kind, cfg.d, cfg.d_in, cfg.roles);
    if (kind == CellKind::tpru) base = secs;
    std::printf("  %-4s %8.2f us/step   model %-10s = %-8lld  time/tpru = %.2f  cost/tpru = %.2f\n",
                cell_kind_name(kind).c_str(), secs * 1e6, cost.expression.c_str(),
                cost.multiplies, secs / base,
                static_cast<double>(cost.multiplies) /
                    static_cast<double>(step_cost(CellKind::tpru, cfg.d, cfg.d_in, cfg.roles)
                                            .multiplies));
  }

  // parallel kernel vs serial reference
  std::printf("matmul kernels (256x256 by 256x256)\n");
  const Matrix A = sample_normal(11, 256, 256, 1.0);
  const Matrix B = sample_normal(12, 256, 256, 1.0);
  const double ts = time_it([&] { (void)matmul_serial(A, B); }, 10);
  const double tpar = time_it([&] { (void)matmul(A, B); }, 10);
  std::printf("  serial %8.3f ms   parallel %8.3f ms   speedup %.2fx\n", ts * 1e3, tpar * 1e3,
              ts / tpar);
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"TPRU: a recurrent unit built on tensor-product binding/unbinding"};
  app.require_subcommand(1);

  std::string config_path, out, task = "entail", ckpt, data, corpus, tags, target, out_dir = ".";
  int var_pool = 0, max_depth = 0, size = 1000;
  std::uint64_t seed = 0;
  bool balance = true;
  size_t lm_bytes = 200000;

  auto *datagen = app.add_subcommand("datagen", "generate an entailment TSV or a synthetic LM corpus");
  datagen->add_option("--config", config_path, "config file");
  datagen->add_option("--task", task, "entail | lm")->check(CLI::IsMember({"entail", "lm"}));
  datagen->add_option("--out", out, "output path")->required();
  datagen->add_option("--var-pool", var_pool, "variable pool size");
  datagen->add_option("--max-depth", max_depth, "max formula depth");
  datagen->add_option("--size", size, "number of pairs");
  datagen->add_option("--seed", seed, "generation seed");
  datagen->add_option("--balance", balance, "balance classes 50/50");
  datagen->add_option("--bytes", lm_bytes, "approximate LM corpus size");

  auto *train = app.add_subcommand("train", "train per the config file");
  train->add_option("--config", config_path, "config file")->required();

  auto *eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  eval->add_option("--ckpt", ckpt, "checkpoint path")->required();
  eval->add_option("--data", data, "TSV (entail) or corpus (lm)")->required();

  auto *gradcheck = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
  gradcheck->add_option("--config", config_path, "config file");

  auto *analyze = app.add_subcommand("analyze", "verify the gradient-analysis claims per variant");
  analyze->add_option("--config", config_path, "config file");

  auto *interpret = app.add_subcommand("interpret", "role statistics of a trained model");
  interpret->add_option("--ckpt", ckpt, "checkpoint path")->required();
  interpret->add_option("--corpus", corpus, "one sequence per line")->required();
  interpret->add_option("--tags", tags, "token<TAB>tag, aligned with the corpus")->required();
  interpret->add_option("--target", target, "token for the sense report");
  interpret->add_option("--out-dir", out_dir, "output directory");

  auto *bench = app.add_subcommand("bench", "step timing per cell kind; serial vs parallel kernels");
  bench->add_option("--config", config_path, "config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand(datagen))
      return cmd_datagen(config_path, task, out, var_pool, max_depth, size, seed, balance,
                         lm_bytes);
    if (app.got_subcommand(train)) return cmd_train(config_path);
    if (app.got_subcommand(eval)) return cmd_eval(ckpt, data);
    if (app.got_subcommand(gradcheck)) return cmd_gradcheck(config_path);
    if (app.got_subcommand(analyze)) return cmd_analyze(config_path);
    if (app.got_subcommand(interpret))
      return cmd_interpret(ckpt, corpus, tags, target, out_dir);
    if (app.got_subcommand(bench)) return cmd_bench(config_path);
  } catch (const std::exception &e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
