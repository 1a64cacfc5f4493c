#include "tpru/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace tpru {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as host doubles and assume little-endian");

namespace {

constexpr char kMagic[] = "TPRU-CKPT\n"; // 10 bytes, no terminator written
constexpr std::uint8_t kVersion = 1;

void put_u32(std::ofstream &f, std::uint32_t v) {
  f.write(reinterpret_cast<const char *>(&v), 4);
}

bool get_u32(std::ifstream &f, std::uint32_t &v) {
  f.read(reinterpret_cast<char *>(&v), 4);
  return f.gcount() == 4;
}

bool is_text_record(const std::string &name) { return name == "config" || name == "vocab"; }

} // namespace

void write_checkpoint(const std::string &path, std::span<const CkptRecord> records) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open for writing: " + path);
  f.write(kMagic, 10);
  f.put(static_cast<char>(kVersion));
  for (const CkptRecord &r : records) {
    put_u32(f, static_cast<std::uint32_t>(r.name.size()));
    f.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    put_u32(f, static_cast<std::uint32_t>(r.dims.size()));
    for (std::uint32_t d : r.dims) put_u32(f, d);
    if (r.is_text) {
      f.write(r.text.data(), static_cast<std::streamsize>(r.text.size()));
    } else {
      f.write(reinterpret_cast<const char *>(r.values.data()),
              static_cast<std::streamsize>(r.values.size() * sizeof(double)));
    }
  }
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "write failed: " + path);
}

std::vector<CkptRecord> read_checkpoint(const std::string &path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError(CheckpointError::Kind::io, "cannot open: " + path);
  char magic[10];
  f.read(magic, 10);
  if (f.gcount() != 10 || std::memcmp(magic, kMagic, 10) != 0)
    throw CheckpointError(CheckpointError::Kind::bad_magic, path + ": bad magic");
  const int version = f.get();
  if (version == std::char_traits<char>::eof())
    throw CheckpointError(CheckpointError::Kind::truncated, path + ": truncated after magic");
  if (version != kVersion)
    throw CheckpointError(CheckpointError::Kind::bad_version,
                          path + ": unsupported version " + std::to_string(version));

  std::vector<CkptRecord> records;
  for (;;) {
    std::uint32_t name_len = 0;
    f.read(reinterpret_cast<char *>(&name_len), 4);
    if (f.gcount() == 0) break; // clean EOF between records
    if (f.gcount() != 4)
      throw CheckpointError(CheckpointError::Kind::truncated, path + ": truncated record header");
    CkptRecord r;
    r.name.resize(name_len);
    f.read(r.name.data(), name_len);
    if (f.gcount() != static_cast<std::streamsize>(name_len))
      throw CheckpointError(CheckpointError::Kind::truncated, path + ": truncated record name");
    std::uint32_t rank = 0;
    if (!get_u32(f, rank))
      throw CheckpointError(CheckpointError::Kind::truncated, path + ": truncated record rank");
    std::uint64_t count = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      std::uint32_t dim = 0;
      if (!get_u32(f, dim))
        throw CheckpointError(CheckpointError::Kind::truncated, path + ": truncated dims");
      r.dims.push_back(dim);
      count *= dim;
    }
    r.is_text = is_text_record(r.name);
    if (r.is_text) {
      if (rank != 1)
        throw CheckpointError(CheckpointError::Kind::malformed,
                              path + ": text record must have rank 1");
      r.text.resize(count);
      f.read(r.text.data(), static_cast<std::streamsize>(count));
      if (f.gcount() != static_cast<std::streamsize>(count))
        throw CheckpointError(CheckpointError::Kind::truncated, path + ": truncated text payload");
    } else {
      r.values.resize(count);
      f.read(reinterpret_cast<char *>(r.values.data()),
             static_cast<std::streamsize>(count * sizeof(double)));
      if (f.gcount() != static_cast<std::streamsize>(count * sizeof(double)))
        throw CheckpointError(CheckpointError::Kind::truncated, path + ": truncated payload");
    }
    records.push_back(std::move(r));
  }
  return records;
}

namespace {

CkptRecord matrix_record(const std::string &name, const Matrix &m) {
  CkptRecord r;
  r.name = name;
  r.dims = {static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)};
  r.values = m.data;
  return r;
}

CkptRecord scalar_record(const std::string &name, double v) {
  CkptRecord r;
  r.name = name;
  r.values = {v}; // rank 0
  return r;
}

CkptRecord text_record(const std::string &name, std::string text) {
  CkptRecord r;
  r.name = name;
  r.is_text = true;
  r.dims = {static_cast<std::uint32_t>(text.size())};
  r.text = std::move(text);
  return r;
}

} // namespace

void save_model_checkpoint(const std::string &path, EncoderModel &model, const AdamState &adam,
                           const RunConfig &config, std::span<const std::string> vocab,
                           double best_metric) {
  std::vector<CkptRecord> records;
  TensorRefs refs = model.trainable();
  for (const auto &[name, m] : refs.mats) records.push_back(matrix_record(name, *m));
  for (const auto &[name, s] : refs.scalars) records.push_back(scalar_record(name, *s));
  for (size_t l = 0; l < model.tpru.size(); ++l)
    records.push_back(matrix_record("layer" + std::to_string(l) + ".E", model.tpru[l].basis.E));
  for (size_t k = 0; k < adam.m.size(); ++k) {
    records.push_back(matrix_record("adam.m." + refs.mats[k].first, adam.m[k]));
    records.push_back(matrix_record("adam.v." + refs.mats[k].first, adam.v[k]));
  }
  for (size_t k = 0; k < adam.m_s.size(); ++k) {
    records.push_back(scalar_record("adam.m." + refs.scalars[k].first, adam.m_s[k]));
    records.push_back(scalar_record("adam.v." + refs.scalars[k].first, adam.v_s[k]));
  }
  records.push_back(scalar_record("adam.t", static_cast<double>(adam.t)));
  records.push_back(scalar_record("best_metric", best_metric));

  std::string joined;
  for (const std::string &w : vocab) {
    joined += w;
    joined += '\n';
  }
  records.push_back(text_record("vocab", std::move(joined)));
  records.push_back(text_record("config", config.serialize()));
  write_checkpoint(path, records);
}

LoadedCheckpoint load_model_checkpoint(const std::string &path) {
  const std::vector<CkptRecord> records = read_checkpoint(path);
  const CkptRecord *config_rec = nullptr;
  for (const CkptRecord &r : records)
    if (r.name == "config") config_rec = &r;
  if (!config_rec)
    throw CheckpointError(CheckpointError::Kind::malformed, path + ": missing config record");

  LoadedCheckpoint out{EncoderModel{}, AdamState{}, RunConfig::from_text(config_rec->text), {}, 0.0};
  for (const CkptRecord &r : records) {
    if (r.name != "vocab") continue;
    size_t start = 0;
    while (start < r.text.size()) {
      const size_t nl = r.text.find('\n', start);
      out.vocab.push_back(r.text.substr(start, nl - start));
      start = nl == std::string::npos ? r.text.size() : nl + 1;
    }
  }
  // the embedding record's shape is authoritative for the vocabulary size
  int vocab_size = 0;
  for (const CkptRecord &r : records)
    if (r.name == "embedding" && r.dims.size() == 2) vocab_size = static_cast<int>(r.dims[0]);
  if (vocab_size <= 0)
    throw CheckpointError(CheckpointError::Kind::malformed, path + ": missing embedding record");
  out.model = EncoderModel::init(out.config.encoder_config(vocab_size, 2));
  out.adam = AdamState::init(out.model.trainable(), out.config.adam_config());

  auto find = [&](const std::string &name) -> const CkptRecord * {
    for (const CkptRecord &r : records)
      if (r.name == name) return &r;
    throw CheckpointError(CheckpointError::Kind::malformed, path + ": missing record " + name);
  };
  auto load_matrix = [&](const std::string &name, Matrix &m) {
    const CkptRecord *r = find(name);
    if (r->dims.size() != 2 || static_cast<int>(r->dims[0]) != m.rows ||
        static_cast<int>(r->dims[1]) != m.cols)
      throw CheckpointError(CheckpointError::Kind::malformed,
                            path + ": shape mismatch for " + name);
    m.data = r->values;
  };
  auto load_scalar = [&](const std::string &name, double &s) {
    const CkptRecord *r = find(name);
    if (!r->dims.empty() || r->values.size() != 1)
      throw CheckpointError(CheckpointError::Kind::malformed,
                            path + ": expected scalar for " + name);
    s = r->values[0];
  };

  TensorRefs refs = out.model.trainable();
  for (auto &[name, m] : refs.mats) load_matrix(name, *m);
  for (auto &[name, s] : refs.scalars) load_scalar(name, *s);
  for (size_t l = 0; l < out.model.tpru.size(); ++l)
    load_matrix("layer" + std::to_string(l) + ".E", out.model.tpru[l].basis.E);
  for (size_t k = 0; k < refs.mats.size(); ++k) {
    load_matrix("adam.m." + refs.mats[k].first, out.adam.m[k]);
    load_matrix("adam.v." + refs.mats[k].first, out.adam.v[k]);
  }
  for (size_t k = 0; k < refs.scalars.size(); ++k) {
    load_scalar("adam.m." + refs.scalars[k].first, out.adam.m_s[k]);
    load_scalar("adam.v." + refs.scalars[k].first, out.adam.v_s[k]);
  }
  double t = 0;
  load_scalar("adam.t", t);
  out.adam.t = static_cast<long long>(t);
  load_scalar("best_metric", out.best_metric);
  return out;
}

} // namespace tpru
