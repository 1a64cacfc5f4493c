#include "tpru/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace tpru {

namespace {

double now_seconds() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::string format_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void write_file(const std::string &path, const std::string &content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f << content;
  if (!f) throw std::runtime_error("write failed: " + path);
}

// Deterministic Fisher-Yates over indices.
std::vector<size_t> shuffled_indices(size_t n, std::uint64_t seed) {
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  for (size_t i = n; i > 1; --i) {
    const size_t j = mix64(seed, i) % i;
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

void clip_and_step(EncoderModel &model, EncoderGradients &grads, AdamState &adam,
                   double clip_norm) {
  grads.finalize_roles(model);
  TensorRefs gref = grads.refs();
  std::vector<std::span<double>> spans = gref.spans();
  clip_global_norm(spans, clip_norm);
  TensorRefs pref = model.trainable();
  adam_update(adam, pref, gref);
}

} // namespace

std::string metrics_csv(std::span<const EpochRow> rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  char buf[256];
  for (const EpochRow &r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%s,%s,%s,%.3f\n", r.epoch, r.split.c_str(),
                  format_metric(r.loss).c_str(), format_metric(r.metric).c_str(), r.seconds);
    out += buf;
  }
  return out;
}

std::vector<TokenizedPair> tokenize_pairs(std::span<const logic::ExamplePair> pairs) {
  std::vector<TokenizedPair> out;
  out.reserve(pairs.size());
  for (const logic::ExamplePair &p : pairs) {
    TokenizedPair t;
    t.premise = logic::tokenize(logic::render(p.premise));
    t.hypothesis = logic::tokenize(logic::render(p.hypothesis));
    t.label = p.label ? 1 : 0;
    out.push_back(std::move(t));
  }
  return out;
}

EvalResult evaluate_entailment(const EncoderModel &model, std::span<const TokenizedPair> data) {
  const DerivedCache derived = DerivedCache::make(model);
  std::vector<double> losses(data.size());
  std::vector<char> correct(data.size());
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(data.size()); ++i) {
    const TokenizedPair &ex = data[i];
    const PairForward f =
        classify_pair(model, derived, ex.premise, ex.hypothesis, false, 0);
    losses[i] = cross_entropy(f.scores, ex.label);
    correct[i] = argmax_score(f.scores) == ex.label ? 1 : 0;
  }
  EvalResult r;
  long long hits = 0;
  for (size_t i = 0; i < data.size(); ++i) {
    r.loss += losses[i];
    hits += correct[i];
  }
  if (!data.empty()) {
    r.loss /= static_cast<double>(data.size());
    r.accuracy = static_cast<double>(hits) / static_cast<double>(data.size());
  }
  return r;
}

TrainResult train_entailment(const RunConfig &cfg) {
  if (cfg.train_path.empty() || cfg.dev_path.empty())
    throw std::runtime_error("train_entailment: train_path and dev_path are required");
  if (cfg.out_dir.empty()) throw std::runtime_error("train_entailment: out_dir is required");
  std::filesystem::create_directories(cfg.out_dir);

  const std::vector<logic::ExamplePair> train_pairs = logic::read_tsv(cfg.train_path);
  const std::vector<logic::ExamplePair> dev_pairs = logic::read_tsv(cfg.dev_path);
  const std::vector<TokenizedPair> dev = tokenize_pairs(dev_pairs);

  EncoderModel model = EncoderModel::init(cfg.encoder_config(logic::kVocabSize, 2));
  AdamState adam = AdamState::init(model.trainable(), cfg.adam_config());
  write_file(cfg.out_dir + "/config_resolved.cfg", cfg.serialize());

  const std::uint64_t shuffle_seed = cfg.sub_seed("shuffle");
  const std::uint64_t dropout_seed = cfg.sub_seed("dropout");
  const std::uint64_t augment_seed = cfg.sub_seed("augment");

  TrainResult result;
  result.checkpoint_path = cfg.out_dir + "/best.ckpt";
  std::vector<std::string> vocab_names;
  for (int i = 0; i < logic::kVocabSize; ++i) vocab_names.push_back(logic::token_name(i));

  bool stop = false;
  for (int epoch = 1; epoch <= cfg.epochs && !stop; ++epoch) {
    const double t0 = now_seconds();
    const std::vector<size_t> order =
        shuffled_indices(train_pairs.size(), mix64(shuffle_seed, epoch));

    double loss_sum = 0.0;
    long long hits = 0, seen = 0;
    for (size_t start = 0; start < order.size(); start += cfg.batch) {
      const size_t stop_at = std::min(order.size(), start + cfg.batch);
      const size_t bsz = stop_at - start;
      const DerivedCache derived = DerivedCache::make(model);

      // per-example forward+backward in parallel; reduction below is in
      // example order regardless of thread count
      std::vector<EncoderGradients> grads(bsz);
      std::vector<double> losses(bsz);
      std::vector<char> correct(bsz);
#pragma omp parallel for schedule(static)
      for (long long k = 0; k < static_cast<long long>(bsz); ++k) {
        const size_t idx = order[start + k];
        logic::ExamplePair pair = train_pairs[idx];
        if (cfg.augment)
          pair = logic::alpha_permute(pair, mix64(augment_seed, epoch * 1000003ull + idx),
                                      cfg.var_pool);
        TokenizedPair ex;
        ex.premise = logic::tokenize(logic::render(pair.premise));
        ex.hypothesis = logic::tokenize(logic::render(pair.hypothesis));
        ex.label = pair.label ? 1 : 0;

        grads[k] = EncoderGradients::zeros(model);
        const std::uint64_t ds = mix64(dropout_seed, epoch * 1000003ull + idx);
        const PairForward f =
            classify_pair(model, derived, ex.premise, ex.hypothesis, true, ds);
        losses[k] = classify_pair_backward(model, derived, ex.premise, ex.hypothesis, f,
                                           ex.label, grads[k]);
        correct[k] = argmax_score(f.scores) == ex.label ? 1 : 0;
      }
      EncoderGradients total = std::move(grads[0]);
      for (size_t k = 1; k < bsz; ++k) total.add(grads[k]);
      // mean over the batch
      {
        TensorRefs tr = [&] {
          total.finalize_roles(model);
          return total.refs();
        }();
        const double inv = 1.0 / static_cast<double>(bsz);
        for (auto &[name, m] : tr.mats)
          for (double &x : m->data) x *= inv;
        for (auto &[name, s] : tr.scalars) *s *= inv;
        std::vector<std::span<double>> spans = tr.spans();
        clip_global_norm(spans, cfg.clip_norm);
        adam_update(adam, model.trainable(), tr);
      }
      for (size_t k = 0; k < bsz; ++k) {
        loss_sum += losses[k];
        hits += correct[k];
      }
      seen += static_cast<long long>(bsz);
    }

    const double train_loss = loss_sum / static_cast<double>(std::max(1LL, seen));
    const double train_acc = static_cast<double>(hits) / static_cast<double>(std::max(1LL, seen));
    const EvalResult dev_res = evaluate_entailment(model, dev);
    const double elapsed = cfg.csv_timing == "wall" ? now_seconds() - t0 : 0.0;

    result.rows.push_back({epoch, "train", train_loss, train_acc, elapsed});
    result.rows.push_back({epoch, "dev", dev_res.loss, dev_res.accuracy, 0.0});

    if (dev_res.accuracy > result.best_dev_metric || result.best_epoch < 0) {
      result.best_dev_metric = dev_res.accuracy;
      result.best_epoch = epoch;
      save_model_checkpoint(result.checkpoint_path, model, adam, cfg, vocab_names,
                            dev_res.accuracy);
    }
    if (cfg.stop_train_acc > 0.0 && train_acc >= cfg.stop_train_acc) stop = true;
  }

  write_file(cfg.out_dir + "/metrics.csv", metrics_csv(result.rows));
  return result;
}

// --- language model ----------------------------------------------------------

int WordVocab::lookup(const std::string &w) const {
  const auto it = index.find(w);
  return it == index.end() ? unk : it->second;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

WordVocab build_vocab(std::span<const std::string> tokens, int min_freq) {
  std::unordered_map<std::string, long long> counts;
  for (const std::string &t : tokens) counts[t] += 1;
  std::vector<std::string> kept;
  for (const auto &[w, c] : counts)
    if (c >= min_freq) kept.push_back(w);
  std::sort(kept.begin(), kept.end());

  WordVocab v;
  v.words.push_back("<unk>");
  v.unk = 0;
  for (std::string &w : kept) v.words.push_back(std::move(w));
  for (size_t i = 0; i < v.words.size(); ++i) v.index[v.words[i]] = static_cast<int>(i);
  return v;
}

std::vector<int> encode_words(std::span<const std::string> tokens, const WordVocab &vocab) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const std::string &t : tokens) out.push_back(vocab.lookup(t));
  return out;
}

LmCorpus load_lm_corpus(const std::string &path, int min_freq) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open corpus: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  const std::string text = buf.str();

  // tokens with their byte offsets, for boundary-aligned byte splits
  std::vector<std::string> words;
  std::vector<size_t> starts;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) {
      words.emplace_back(text.substr(start, i - start));
      starts.push_back(start);
    }
  }
  if (words.size() < 100) throw std::runtime_error("corpus too small: " + path);

  auto boundary = [&](double frac) {
    const size_t target = static_cast<size_t>(frac * static_cast<double>(text.size()));
    const auto it = std::lower_bound(starts.begin(), starts.end(), target);
    return static_cast<size_t>(it - starts.begin());
  };
  const size_t cut1 = boundary(0.8), cut2 = boundary(0.9);
  if (cut1 < 2 || cut2 <= cut1 || cut2 >= words.size())
    throw std::runtime_error("corpus too small to split 80/10/10: " + path);

  LmCorpus c;
  const std::vector<std::string> train_words(words.begin(), words.begin() + cut1);
  c.vocab = build_vocab(train_words, min_freq);
  c.train = encode_words(train_words, c.vocab);
  c.valid = encode_words(std::span(words).subspan(cut1, cut2 - cut1), c.vocab);
  c.test = encode_words(std::span(words).subspan(cut2), c.vocab);
  return c;
}

double unigram_perplexity(std::span<const int> train, std::span<const int> eval_split,
                          int vocab_size) {
  std::vector<long long> counts(vocab_size, 0);
  for (int t : train) counts[t] += 1;
  const double total = static_cast<double>(train.size()) + static_cast<double>(vocab_size);
  double nll = 0.0;
  for (int t : eval_split)
    nll -= std::log((static_cast<double>(counts[t]) + 1.0) / total);
  return std::exp(nll / static_cast<double>(eval_split.size()));
}

namespace {

LmEval eval_lm_split(const EncoderModel &model, const DerivedCache &derived,
                     std::span<const int> tokens) {
  return lm_loss(model, derived, tokens);
}

} // namespace

TrainResult train_lm(const RunConfig &cfg) {
  if (cfg.corpus_path.empty()) throw std::runtime_error("train_lm: corpus_path is required");
  if (cfg.out_dir.empty()) throw std::runtime_error("train_lm: out_dir is required");
  if (cfg.d_in != cfg.d)
    throw std::runtime_error("train_lm: tied embeddings require d_in == d");
  std::filesystem::create_directories(cfg.out_dir);

  const LmCorpus corpus = load_lm_corpus(cfg.corpus_path, cfg.min_freq);
  EncoderModel model = EncoderModel::init(cfg.encoder_config(corpus.vocab.size(), 2));
  AdamState adam = AdamState::init(model.trainable(), cfg.adam_config());
  write_file(cfg.out_dir + "/config_resolved.cfg", cfg.serialize());

  // Carve the training stream into `lm_streams` contiguous lanes processed in
  // lockstep; each lane carries its own hidden state across segments.
  const int streams = std::max(1, cfg.lm_streams);
  const size_t lane_len = corpus.train.size() / static_cast<size_t>(streams);
  if (lane_len < static_cast<size_t>(cfg.unroll) + 1)
    throw std::runtime_error("train_lm: corpus too small for the stream/unroll settings");

  const std::uint64_t dropout_seed = cfg.sub_seed("dropout");

  TrainResult result;
  result.checkpoint_path = cfg.out_dir + "/best.ckpt";
  result.best_dev_metric = std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double t0 = now_seconds();
    std::vector<StackState> states(streams, StackState::zeros(model));
    double nll_sum = 0.0;
    long long tok_sum = 0;

    for (size_t pos = 0; pos + 1 < lane_len; pos += cfg.unroll) {
      const size_t seg = std::min(static_cast<size_t>(cfg.unroll), lane_len - 1 - pos);
      const DerivedCache derived = DerivedCache::make(model);
      std::vector<EncoderGradients> grads(streams);
      std::vector<LmEval> evals(streams);
#pragma omp parallel for schedule(static)
      for (int lane = 0; lane < streams; ++lane) {
        grads[lane] = EncoderGradients::zeros(model);
        const size_t base = static_cast<size_t>(lane) * lane_len + pos;
        const std::span<const int> segment(corpus.train.data() + base, seg + 1);
        evals[lane] = lm_segment_backward(model, derived, segment, states[lane], grads[lane],
                                          true, mix64(dropout_seed, epoch * 7919ull + pos + lane));
      }
      EncoderGradients total = std::move(grads[0]);
      for (int lane = 1; lane < streams; ++lane) total.add(grads[lane]);
      long long seg_tokens = 0;
      for (const LmEval &e : evals) {
        nll_sum += e.nll_sum;
        seg_tokens += e.tokens;
      }
      tok_sum += seg_tokens;
      total.finalize_roles(model);
      TensorRefs tr = total.refs();
      const double inv = 1.0 / static_cast<double>(seg_tokens);
      for (auto &[name, m] : tr.mats)
        for (double &x : m->data) x *= inv;
      for (auto &[name, s] : tr.scalars) *s *= inv;
      std::vector<std::span<double>> spans = tr.spans();
      clip_global_norm(spans, cfg.clip_norm);
      adam_update(adam, model.trainable(), tr);
    }

    const double train_nll = nll_sum / static_cast<double>(std::max(1LL, tok_sum));
    const DerivedCache derived = DerivedCache::make(model);
    const LmEval valid = eval_lm_split(model, derived, corpus.valid);
    const double elapsed = cfg.csv_timing == "wall" ? now_seconds() - t0 : 0.0;

    result.rows.push_back({epoch, "train", train_nll, std::exp(train_nll), elapsed});
    result.rows.push_back({epoch, "valid", valid.mean_nll(), valid.perplexity(), 0.0});

    if (valid.perplexity() < result.best_dev_metric) {
      result.best_dev_metric = valid.perplexity();
      result.best_epoch = epoch;
      save_model_checkpoint(result.checkpoint_path, model, adam, cfg, corpus.vocab.words,
                            valid.perplexity());
    }
  }

  write_file(cfg.out_dir + "/metrics.csv", metrics_csv(result.rows));
  return result;
}

std::string generate_lm_corpus(std::uint64_t seed, size_t target_bytes) {
  static const char *dets[] = {"the", "a", "every", "some", "that"};
  static const char *adjs[] = {"old",  "small", "bright", "quiet",  "green", "heavy",
                               "warm", "sharp", "narrow", "hollow", "pale",  "rough"};
  static const char *nouns[] = {"river",  "stone",  "lantern", "garden", "letter", "bridge",
                                "meadow", "harbor", "engine",  "ladder", "basket", "mirror",
                                "forest", "signal", "anchor",  "barrel", "candle", "valley",
                                "spider", "hammer", "island",  "copper", "thread", "window"};
  static const char *names[] = {"mara", "oren", "tilda", "jasper", "noor", "felix", "iris", "remy"};
  static const char *verbs[] = {"carried", "watched", "painted", "followed", "crossed",
                                "lifted",  "mended",  "counted", "guarded",  "traded",
                                "opened",  "covered", "weighed", "signaled", "borrowed"};
  static const char *preps[] = {"near", "under", "beyond", "behind", "toward", "across"};
  static const char *advs[] = {"slowly", "quietly", "twice", "again", "carefully"};

  std::uint64_t counter = 0;
  auto pick = [&](auto &arr) {
    const size_t n = sizeof(arr) / sizeof(arr[0]);
    return arr[mix64(seed, counter++) % n];
  };
  auto chance = [&](double p) {
    return static_cast<double>(mix64(seed, counter++) >> 11) * 0x1.0p-53 < p;
  };

  std::string out;
  out.reserve(target_bytes + 128);
  while (out.size() < target_bytes) {
    std::string sentence;
    auto noun_phrase = [&] {
      std::string np;
      if (chance(0.25)) {
        np = pick(names);
      } else {
        np = pick(dets);
        if (chance(0.45)) {
          np += ' ';
          np += pick(adjs);
        }
        np += ' ';
        np += pick(nouns);
      }
      return np;
    };
    sentence = noun_phrase();
    sentence += ' ';
    sentence += pick(verbs);
    sentence += ' ';
    sentence += noun_phrase();
    if (chance(0.4)) {
      sentence += ' ';
      sentence += pick(preps);
      sentence += ' ';
      sentence += noun_phrase();
    }
    if (chance(0.2)) {
      sentence += ' ';
      sentence += pick(advs);
    }
    sentence += " .\n";
    out += sentence;
  }
  return out;
}

double eval_checkpoint(const std::string &ckpt_path, const std::string &data_path) {
  LoadedCheckpoint ck = load_model_checkpoint(ckpt_path);
  if (ck.config.task == "lm") {
    // Same split the trainer used, scored with the checkpointed vocabulary.
    const LmCorpus raw = load_lm_corpus(data_path, ck.config.min_freq);
    WordVocab vocab;
    vocab.words = ck.vocab;
    for (size_t i = 0; i < vocab.words.size(); ++i)
      vocab.index[vocab.words[i]] = static_cast<int>(i);
    vocab.unk = vocab.lookup("<unk>");
    std::vector<std::string> valid_words;
    for (int id : raw.valid) valid_words.push_back(raw.vocab.words[id]);
    const std::vector<int> ids = encode_words(valid_words, vocab);
    const DerivedCache derived = DerivedCache::make(ck.model);
    return lm_loss(ck.model, derived, ids).perplexity();
  }
  const std::vector<TokenizedPair> data = tokenize_pairs(logic::read_tsv(data_path));
  return evaluate_entailment(ck.model, data).accuracy;
}

} // namespace tpru
