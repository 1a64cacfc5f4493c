#include "tpru/config.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace tpru {

namespace {

std::string trim(std::string_view s) {
  size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

int to_int(const std::string &v) {
  size_t used = 0;
  const int x = std::stoi(v, &used);
  if (used != v.size()) throw std::invalid_argument("not an integer: " + v);
  return x;
}

double to_double(const std::string &v) {
  size_t used = 0;
  const double x = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument("not a number: " + v);
  return x;
}

bool to_bool(const std::string &v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw std::invalid_argument("not a boolean (use 0/1): " + v);
}

std::uint64_t to_u64(const std::string &v) {
  std::uint64_t x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size())
    throw std::invalid_argument("not an unsigned integer: " + v);
  return x;
}

} // namespace

void RunConfig::set(const std::string &key, const std::string &value) {
  if (key == "task") {
    if (value != "entail" && value != "lm") throw std::invalid_argument("task must be entail|lm");
    task = value;
  } else if (key == "cell") cell = parse_cell_kind(value);
  else if (key == "d") d = to_int(value);
  else if (key == "d_in") d_in = to_int(value);
  else if (key == "roles") roles = to_int(value);
  else if (key == "slices") slices = to_int(value);
  else if (key == "mlp_hidden") mlp_hidden = to_int(value);
  else if (key == "dropout") dropout = to_double(value);
  else if (key == "variant") variant = parse_variant(value);
  else if (key == "lr") lr = to_double(value);
  else if (key == "beta1") beta1 = to_double(value);
  else if (key == "beta2") beta2 = to_double(value);
  else if (key == "eps") eps = to_double(value);
  else if (key == "clip_norm") clip_norm = to_double(value);
  else if (key == "batch") batch = to_int(value);
  else if (key == "epochs") epochs = to_int(value);
  else if (key == "stop_train_acc") stop_train_acc = to_double(value);
  else if (key == "unroll") unroll = to_int(value);
  else if (key == "lm_streams") lm_streams = to_int(value);
  else if (key == "min_freq") min_freq = to_int(value);
  else if (key == "var_pool") var_pool = to_int(value);
  else if (key == "max_depth") max_depth = to_int(value);
  else if (key == "augment") augment = to_bool(value);
  else if (key == "seed") seed = to_u64(value);
  else if (key == "gradcheck_cases") gradcheck_cases = to_int(value);
  else if (key == "interpret_layer") interpret_layer = to_int(value);
  else if (key == "csv_timing") {
    if (value != "wall" && value != "none")
      throw std::invalid_argument("csv_timing must be wall|none");
    csv_timing = value;
  } else if (key == "train_path") train_path = value;
  else if (key == "dev_path") dev_path = value;
  else if (key == "test_path") test_path = value;
  else if (key == "corpus_path") corpus_path = value;
  else if (key == "out_dir") out_dir = value;
  else throw std::invalid_argument("unknown config key: " + key);
}

RunConfig RunConfig::from_text(const std::string &text, const std::string &origin) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
    try {
      cfg.set(trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    } catch (const std::exception &e) {
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string &path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  return from_text(buf.str(), path);
}

std::string RunConfig::serialize() const {
  std::ostringstream out;
  out.precision(17);
  out << "task = " << task << "\n";
  out << "cell = " << cell_kind_name(cell) << "\n";
  out << "d = " << d << "\n";
  out << "d_in = " << d_in << "\n";
  out << "roles = " << roles << "\n";
  out << "slices = " << slices << "\n";
  out << "mlp_hidden = " << mlp_hidden << "\n";
  out << "dropout = " << dropout << "\n";
  out << "variant = " << variant_name(variant) << "\n";
  out << "lr = " << lr << "\n";
  out << "beta1 = " << beta1 << "\n";
  out << "beta2 = " << beta2 << "\n";
  out << "eps = " << eps << "\n";
  out << "clip_norm = " << clip_norm << "\n";
  out << "batch = " << batch << "\n";
  out << "epochs = " << epochs << "\n";
  out << "stop_train_acc = " << stop_train_acc << "\n";
  out << "unroll = " << unroll << "\n";
  out << "lm_streams = " << lm_streams << "\n";
  out << "min_freq = " << min_freq << "\n";
  out << "var_pool = " << var_pool << "\n";
  out << "max_depth = " << max_depth << "\n";
  out << "augment = " << (augment ? 1 : 0) << "\n";
  out << "seed = " << seed << "\n";
  out << "gradcheck_cases = " << gradcheck_cases << "\n";
  out << "interpret_layer = " << interpret_layer << "\n";
  out << "csv_timing = " << csv_timing << "\n";
  out << "train_path = " << train_path << "\n";
  out << "dev_path = " << dev_path << "\n";
  out << "test_path = " << test_path << "\n";
  out << "corpus_path = " << corpus_path << "\n";
  out << "out_dir = " << out_dir << "\n";
  return out.str();
}

EncoderConfig RunConfig::encoder_config(int vocab, int classes) const {
  EncoderConfig e;
  e.cell = cell;
  e.d = d;
  e.d_in = d_in;
  e.roles = roles;
  e.slices = slices;
  e.mlp_hidden = mlp_hidden;
  e.vocab = vocab;
  e.classes = classes;
  e.dropout = dropout;
  e.seed = sub_seed("init");
  return e;
}

AdamConfig RunConfig::adam_config() const { return {lr, beta1, beta2, eps}; }

} // namespace tpru
