// Training loops: minibatch Adam with global-norm clipping for the
// entailment classifier, truncated BPTT over parallel streams for the tiny
// language model, evaluation, and the metrics CSV. Per-example work inside a
// batch runs in parallel; gradients are reduced in example order, so results
// do not depend on the thread count.
#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "tpru/checkpoint.hpp"
#include "tpru/config.hpp"
#include "tpru/encoder.hpp"
#include "tpru/logic.hpp"

namespace tpru {

inline constexpr char kMetricsHeader[] = "epoch,split,loss,accuracy_or_ppl,seconds";

struct EpochRow {
  int epoch = 0;
  std::string split; // train | dev | valid | test
  double loss = 0.0;
  double metric = 0.0; // accuracy or perplexity
  double seconds = 0.0;
};

std::string metrics_csv(std::span<const EpochRow> rows);

struct TokenizedPair {
  std::vector<int> premise, hypothesis;
  int label = 0;
};
std::vector<TokenizedPair> tokenize_pairs(std::span<const logic::ExamplePair> pairs);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};
EvalResult evaluate_entailment(const EncoderModel &model, std::span<const TokenizedPair> data);

struct TrainResult {
  std::vector<EpochRow> rows;
  double best_dev_metric = 0.0; // accuracy (entailment) or perplexity (LM)
  int best_epoch = -1;
  std::string checkpoint_path; // best-dev checkpoint
};

// Reads TSVs, trains per the config, writes out_dir/metrics.csv,
// out_dir/config_resolved.cfg and out_dir/best.ckpt.
TrainResult train_entailment(const RunConfig &cfg);

// --- language model ----------------------------------------------------------

struct WordVocab {
  std::vector<std::string> words; // id -> word; words[unk] == "<unk>"
  std::unordered_map<std::string, int> index;
  int unk = 0;

  int size() const { return static_cast<int>(words.size()); }
  int lookup(const std::string &w) const;
};

std::vector<std::string> split_words(std::string_view text);
WordVocab build_vocab(std::span<const std::string> tokens, int min_freq);
std::vector<int> encode_words(std::span<const std::string> tokens, const WordVocab &vocab);

struct LmCorpus {
  WordVocab vocab;
  std::vector<int> train, valid, test; // contiguous 80/10/10 split
};
// Splits at the byte positions closest to 80%/90%, snapped to token
// boundaries; the vocabulary is built from the training range only.
LmCorpus load_lm_corpus(const std::string &path, int min_freq);

// Perplexity of the add-one-smoothed train unigram distribution on a split.
double unigram_perplexity(std::span<const int> train, std::span<const int> eval_split,
                          int vocab_size);

TrainResult train_lm(const RunConfig &cfg);

// Entailment accuracy / LM perplexity of a saved checkpoint on a dataset.
double eval_checkpoint(const std::string &ckpt_path, const std::string &data_path);

// Deterministic synthetic corpus: templated sentences over a few hundred word
// types with strong local structure, sized to roughly target_bytes.
std::string generate_lm_corpus(std::uint64_t seed, size_t target_bytes);

} // namespace tpru
