// Binary checkpoint: magic "TPRU-CKPT\n", version byte 1, then records of
// [name_len u32 LE | name | rank u32 | dims u32 each | payload]. Tensor
// payloads are row-major IEEE-754 little-endian float64; the records named
// "config" and "vocab" carry raw UTF-8 (rank 1, dims[0] = byte count).
// Save -> load -> save is bit-exact.
#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tpru/config.hpp"
#include "tpru/encoder.hpp"
#include "tpru/optimizer.hpp"

namespace tpru {

struct CheckpointError : std::runtime_error {
  enum class Kind { io, bad_magic, bad_version, truncated, malformed };
  Kind kind;
  CheckpointError(Kind k, const std::string &msg) : std::runtime_error(msg), kind(k) {}
};

struct CkptRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<double> values; // tensor records
  std::string text;           // text records ("config", "vocab")
  bool is_text = false;
};

void write_checkpoint(const std::string &path, std::span<const CkptRecord> records);
std::vector<CkptRecord> read_checkpoint(const std::string &path);

// Everything needed to resume or evaluate: E and all trainable tensors,
// scalars, optimizer state, the resolved config, and (for LM runs) the word
// vocabulary. best_metric records the metric the checkpoint was selected on.
void save_model_checkpoint(const std::string &path, EncoderModel &model, const AdamState &adam,
                           const RunConfig &config, std::span<const std::string> vocab,
                           double best_metric);

struct LoadedCheckpoint {
  EncoderModel model;
  AdamState adam;
  RunConfig config;
  std::vector<std::string> vocab;
  double best_metric = 0.0;
};
LoadedCheckpoint load_model_checkpoint(const std::string &path);

} // namespace tpru
