#pragma once

// Layered run configuration: built-in profile defaults, then a key=value
// config file, then command-line overrides. The resolved config is echoed
// as canonical text and hashed into every output artifact.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fsgpt/common.hpp"
#include "fsgpt/rng.hpp"

namespace fsgpt {

enum class Precision : uint8_t { f32 = 0, f64 = 1 };

inline std::string precision_name(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

inline Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f64") return Precision::f64;
  throw ContractError("precision must be f32 or f64, got " + s);
}

struct TokenizerConfig {
  size_t patch_len = 128;
  size_t stride = 128;
  size_t model_dim = 512;
  size_t prompt_len = 10;
  size_t task_len = 1;
  double eps = 1e-5;
};

struct ModelConfig {
  size_t num_layers = 4;
  size_t model_dim = 512;
  size_t ffn_hidden = 0;  // 0 means 4 * model_dim
  size_t num_heads = 1;
  double dropout = 0.0;

  size_t ffn_dim() const { return ffn_hidden ? ffn_hidden : 4 * model_dim; }
};

struct RunConfig {
  // tokenizer
  size_t patch_len = 128;
  size_t stride = 128;
  size_t prompt_len = 10;
  size_t task_len = 1;
  double norm_eps = 1e-5;
  // model
  size_t model_dim = 512;
  size_t num_layers = 4;
  size_t num_heads = 1;
  size_t ffn_hidden = 0;
  double dropout = 0.0;
  // training
  double lr = 3.00e-7;
  double finetune_lr = 0.0;  // 0 means same as lr
  size_t batch_size = 256;
  size_t pretrain_epochs = 5;
  size_t finetune_epochs = 5;
  double mask_ratio = 0.3;
  double alpha = 10.0;
  double ad_threshold = 0.5;
  // data
  size_t window_len = 2048;
  size_t window_stride = 0;  // 0 means window_len
  // run
  uint64_t seed = 1;
  Precision precision = Precision::f32;

  TokenizerConfig tokenizer_config() const {
    TokenizerConfig t;
    t.patch_len = patch_len;
    t.stride = stride;
    t.model_dim = model_dim;
    t.prompt_len = prompt_len;
    t.task_len = task_len;
    t.eps = norm_eps;
    return t;
  }

  ModelConfig model_config() const {
    ModelConfig m;
    m.num_layers = num_layers;
    m.model_dim = model_dim;
    m.ffn_hidden = ffn_hidden;
    m.num_heads = num_heads;
    m.dropout = dropout;
    return m;
  }

  double effective_finetune_lr() const { return finetune_lr > 0.0 ? finetune_lr : lr; }
  size_t effective_window_stride() const { return window_stride ? window_stride : window_len; }

  void validate() const {
    if (patch_len == 0 || stride == 0) throw ContractError("patch_len and stride must be positive");
    if (prompt_len == 0 || task_len == 0) {
      throw ContractError("prompt_len and task_len must be positive");
    }
    if (model_dim == 0 || num_layers > 64) throw ContractError("implausible model geometry");
    if (num_heads == 0 || model_dim % num_heads != 0) {
      throw ContractError(cat("model_dim ", model_dim, " not divisible by num_heads ", num_heads));
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ContractError("dropout must be in [0, 1)");
    if (mask_ratio <= 0.0 || mask_ratio >= 1.0) throw ContractError("mask_ratio must be in (0, 1)");
    if (alpha <= 0.0) throw ContractError("alpha must be positive");
    if (batch_size == 0) throw ContractError("batch_size must be positive");
    if (window_len < patch_len) {
      throw ContractError(cat("window_len ", window_len, " shorter than patch_len ", patch_len));
    }
  }
};

// Full-scale configuration; too heavy for a single-core desk run.
inline RunConfig paper_profile() {
  RunConfig c;
  c.patch_len = 128;
  c.stride = 128;
  c.prompt_len = 10;
  c.task_len = 1;
  c.model_dim = 512;
  c.num_layers = 4;
  c.lr = 3.00e-7;
  c.batch_size = 256;
  c.pretrain_epochs = 5;
  c.finetune_epochs = 5;
  c.window_len = 2048;
  return c;
}

// Default profile: small enough to train on one CPU core in minutes.
inline RunConfig desk_profile() {
  RunConfig c = paper_profile();
  c.model_dim = 64;
  c.num_layers = 2;
  c.batch_size = 32;
  c.lr = 1e-3;
  return c;
}

inline RunConfig profile_by_name(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "paper") return paper_profile();
  throw ContractError("unknown profile " + name + " (expected desk or paper)");
}

namespace detail {

inline size_t parse_size(const std::string& key, const std::string& v) {
  size_t pos = 0;
  unsigned long long out = 0;
  try {
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw ContractError(cat(key, ": expected non-negative integer, got '", v, "'"));
  }
  if (pos != v.size()) throw ContractError(cat(key, ": trailing junk in '", v, "'"));
  return static_cast<size_t>(out);
}

inline double parse_double(const std::string& key, const std::string& v) {
  size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ContractError(cat(key, ": expected number, got '", v, "'"));
  }
  if (pos != v.size()) throw ContractError(cat(key, ": trailing junk in '", v, "'"));
  return out;
}

}  // namespace detail

inline void apply_config_kv(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_double;
  using detail::parse_size;
  if (key == "tokenizer.patch_len") c.patch_len = parse_size(key, value);
  else if (key == "tokenizer.stride") c.stride = parse_size(key, value);
  else if (key == "tokenizer.prompt_len") c.prompt_len = parse_size(key, value);
  else if (key == "tokenizer.task_len") c.task_len = parse_size(key, value);
  else if (key == "tokenizer.eps") c.norm_eps = parse_double(key, value);
  else if (key == "model.dim") c.model_dim = parse_size(key, value);
  else if (key == "model.layers") c.num_layers = parse_size(key, value);
  else if (key == "model.heads") c.num_heads = parse_size(key, value);
  else if (key == "model.ffn_hidden") c.ffn_hidden = parse_size(key, value);
  else if (key == "model.dropout") c.dropout = parse_double(key, value);
  else if (key == "train.lr") c.lr = parse_double(key, value);
  else if (key == "train.finetune_lr") c.finetune_lr = parse_double(key, value);
  else if (key == "train.batch") c.batch_size = parse_size(key, value);
  else if (key == "train.pretrain_epochs") c.pretrain_epochs = parse_size(key, value);
  else if (key == "train.finetune_epochs") c.finetune_epochs = parse_size(key, value);
  else if (key == "train.mask_ratio") c.mask_ratio = parse_double(key, value);
  else if (key == "train.alpha") c.alpha = parse_double(key, value);
  else if (key == "train.ad_threshold") c.ad_threshold = parse_double(key, value);
  else if (key == "data.window_len") c.window_len = parse_size(key, value);
  else if (key == "data.window_stride") c.window_stride = parse_size(key, value);
  else if (key == "run.seed") c.seed = parse_size(key, value);
  else if (key == "run.precision") c.precision = parse_precision(value);
  else throw ContractError("unknown config key " + key);
}

// Accepts "key=value", tolerating spaces around the separator; throws on
// anything else.
inline void apply_config_line(RunConfig& c, const std::string& line) {
  auto eq = line.find('=');
  if (eq == std::string::npos) throw ContractError("expected key=value, got '" + line + "'");
  auto trim = [](std::string s) {
    const size_t a = s.find_first_not_of(" \t");
    const size_t b = s.find_last_not_of(" \t");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  apply_config_kv(c, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
}

inline void load_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ContractError("cannot open config file " + path);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    size_t start = line.find_first_not_of(' ');
    if (start == std::string::npos) continue;
    if (line[start] == '#') continue;
    try {
      apply_config_line(c, line.substr(start));
    } catch (const ContractError& e) {
      throw ContractError(cat(path, ":", lineno, ": ", e.what()));
    }
  }
}

// Canonical text form, one key=value per line, fixed order. This exact
// text is what gets hashed and embedded in artifacts.
inline std::string config_echo(const RunConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "tokenizer.patch_len=" << c.patch_len << "\n";
  out << "tokenizer.stride=" << c.stride << "\n";
  out << "tokenizer.prompt_len=" << c.prompt_len << "\n";
  out << "tokenizer.task_len=" << c.task_len << "\n";
  out << "tokenizer.eps=" << c.norm_eps << "\n";
  out << "model.dim=" << c.model_dim << "\n";
  out << "model.layers=" << c.num_layers << "\n";
  out << "model.heads=" << c.num_heads << "\n";
  out << "model.ffn_hidden=" << c.ffn_hidden << "\n";
  out << "model.dropout=" << c.dropout << "\n";
  out << "train.lr=" << c.lr << "\n";
  out << "train.finetune_lr=" << c.finetune_lr << "\n";
  out << "train.batch=" << c.batch_size << "\n";
  out << "train.pretrain_epochs=" << c.pretrain_epochs << "\n";
  out << "train.finetune_epochs=" << c.finetune_epochs << "\n";
  out << "train.mask_ratio=" << c.mask_ratio << "\n";
  out << "train.alpha=" << c.alpha << "\n";
  out << "train.ad_threshold=" << c.ad_threshold << "\n";
  out << "data.window_len=" << c.window_len << "\n";
  out << "data.window_stride=" << c.window_stride << "\n";
  out << "run.seed=" << c.seed << "\n";
  out << "run.precision=" << precision_name(c.precision) << "\n";
  return out.str();
}

inline uint64_t config_hash(const RunConfig& c) { return fnv1a64(config_echo(c)); }

inline std::string config_hash_hex(const RunConfig& c) {
  std::ostringstream out;
  out << std::hex << config_hash(c);
  return out.str();
}

}  // namespace fsgpt
