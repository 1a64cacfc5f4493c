// Flat `key = value` run configuration ('#' starts a comment, unknown keys
// rejected), and the seed fan-out used to give each randomized component an
// independent stream.
#pragma once

#include <cstdint>
#include <string>

#include "tpru/cell.hpp"
#include "tpru/encoder.hpp"
#include "tpru/grad.hpp"
#include "tpru/optimizer.hpp"

namespace tpru {

struct RunConfig {
  // task / model
  std::string task = "entail"; // entail | lm
  CellKind cell = CellKind::tpru;
  int d = 32;
  int d_in = 32;
  int roles = 64;
  int slices = 1;
  int mlp_hidden = 0; // 0 -> d
  double dropout = 0.0;
  Variant variant = Variant::full;

  // optimization
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;
  int batch = 32;
  int epochs = 10;
  double stop_train_acc = 0.0; // > 0 stops once running train accuracy reaches it

  // language model
  int unroll = 32;
  int lm_streams = 8;
  int min_freq = 2;

  // data / augmentation
  int var_pool = 6;
  int max_depth = 4;
  bool augment = false;

  // misc
  std::uint64_t seed = 1;
  int gradcheck_cases = 50;
  int interpret_layer = 2;
  std::string csv_timing = "wall"; // wall | none
  std::string train_path, dev_path, test_path, corpus_path, out_dir;

  // Parse from file / text; every key must be known. Line numbers reported.
  static RunConfig from_file(const std::string &path);
  static RunConfig from_text(const std::string &text, const std::string &origin = "<config>");
  void set(const std::string &key, const std::string &value); // throws on unknown key

  // The fully resolved configuration, one key per line, fixed order.
  std::string serialize() const;

  EncoderConfig encoder_config(int vocab, int classes) const;
  AdamConfig adam_config() const;

  // Named sub-seeds derived from the global seed: "init", "data", "dropout",
  // "augment", "shuffle".
  std::uint64_t sub_seed(std::string_view tag) const { return derive_seed(seed, tag); }
};

} // namespace tpru
