#pragma once

// Signal-to-token pipeline: per-channel normalization, patching, linear
// projection into model space, and decoration with per-(fleet, sensor)
// prompt tokens, two statistic tokens, and a per-fleet task token.
// Token order along the sequence axis is [prompt | patches | mean,var | task].

#include <cmath>
#include <string>
#include <vector>

#include "fsgpt/common.hpp"
#include "fsgpt/config.hpp"
#include "fsgpt/data.hpp"
#include "fsgpt/rng.hpp"
#include "fsgpt/tensor.hpp"
#include "fsgpt/training.hpp"

namespace fsgpt {

inline size_t patch_count(size_t L, size_t pl, size_t S) {
  if (pl == 0 || S == 0) throw ContractError("patch_count: pl and S must be positive");
  if (L < pl) {
    throw ContractError(cat("patch_count: window of ", L, " samples shorter than patch ", pl));
  }
  return (L - pl) / S + 1;
}

enum class TokenSection : uint8_t { prompt, patch, stat, task };

struct TokenSections {
  size_t prompt_len = 0;
  size_t patch_count = 0;
  size_t task_len = 0;

  size_t prompt_begin() const { return 0; }
  size_t patch_begin() const { return prompt_len; }
  size_t stat_begin() const { return prompt_len + patch_count; }
  size_t task_begin() const { return stat_begin() + 2; }
  size_t total() const { return task_begin() + task_len; }

  TokenSection section_of(size_t pos) const {
    if (pos < patch_begin()) return TokenSection::prompt;
    if (pos < stat_begin()) return TokenSection::patch;
    if (pos < task_begin()) return TokenSection::stat;
    if (pos < total()) return TokenSection::task;
    throw ContractError(cat("section_of: position ", pos, " out of range ", total()));
  }
};

struct NormResult {
  std::vector<double> values;
  double mu = 0.0;
  double sigma = 0.0;  // clamped to eps from below
};

inline NormResult normalize_channel(const std::vector<double>& x, double eps) {
  if (x.empty()) throw ContractError("normalize_channel: empty series");
  NormResult r;
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  var /= static_cast<double>(x.size());
  r.mu = mu;
  r.sigma = std::max(std::sqrt(var), eps);
  r.values.resize(x.size());
  for (size_t i = 0; i < x.size(); ++i) r.values[i] = (x[i] - mu) / r.sigma;
  return r;
}

inline std::vector<double> denormalize(const std::vector<double>& x_norm, double mu,
                                       double sigma, double eps) {
  const double s = std::max(sigma, eps);
  std::vector<double> out(x_norm.size());
  for (size_t i = 0; i < x_norm.size(); ++i) out[i] = x_norm[i] * s + mu;
  return out;
}

// Squashes unbounded physical statistics before they feed an embedding.
inline double squash_stat(double x) { return (x < 0 ? -1.0 : 1.0) * std::log1p(std::fabs(x)); }

// ---- parameter registration ---------------------------------------------

inline std::string prompt_pool_name(const std::string& fleet_id, const std::string& sensor) {
  return "pool.prompt." + fleet_id + "." + sensor;
}
inline std::string task_pool_name(const std::string& fleet_id) {
  return "pool.task." + fleet_id;
}

constexpr double kInitStd = 0.02;

// Shared (fleet-independent) tokenizer parameters: the patch projection and
// the two scalar stat embeddings.
template <typename T>
void register_tokenizer_params(ParameterStore<T>& store, const TokenizerConfig& cfg, Rng& rng) {
  store.add_gaussian("tok.proj.w", {cfg.patch_len, cfg.model_dim}, kInitStd, rng);
  store.add_zeros("tok.proj.b", {cfg.model_dim});
  store.add_gaussian("tok.stat_mu.w", {1, cfg.model_dim}, kInitStd, rng);
  store.add_zeros("tok.stat_mu.b", {cfg.model_dim});
  store.add_gaussian("tok.stat_sigma.w", {1, cfg.model_dim}, kInitStd, rng);
  store.add_zeros("tok.stat_sigma.b", {cfg.model_dim});
}

template <typename T>
void register_fleet_pools(ParameterStore<T>& store, const FleetSpec& spec,
                          const TokenizerConfig& cfg, Rng& rng) {
  for (const auto& name : spec.channel_names) {
    store.add_gaussian(prompt_pool_name(spec.fleet_id, name), {cfg.prompt_len, cfg.model_dim},
                       kInitStd, rng);
  }
  store.add_gaussian(task_pool_name(spec.fleet_id), {cfg.task_len, cfg.model_dim}, kInitStd,
                     rng);
}

template <typename T>
bool fleet_registered(const ParameterStore<T>& store, const FleetSpec& spec) {
  if (!store.contains(task_pool_name(spec.fleet_id))) return false;
  for (const auto& name : spec.channel_names) {
    if (!store.contains(prompt_pool_name(spec.fleet_id, name))) return false;
  }
  return true;
}

// ---- tokenization ---------------------------------------------------------

template <typename T>
struct TokenSequence {
  Tensor<T> tokens;  // [M, N, d] for one window, [B, M, N, d] for a batch
  TokenSections sections;
  size_t patch_count = 0;
  size_t window_len = 0;
  std::string fleet_id;
  std::vector<std::vector<double>> mu, sigma;                 // [B][M], signal units
  std::vector<std::vector<std::vector<double>>> norm_values;  // [B][M][L]

  size_t batch() const { return mu.size(); }
  size_t channels() const { return mu.empty() ? 0 : mu[0].size(); }
  // Samples covered by the patch grid; trailing samples are dropped.
  size_t covered_len(size_t stride, size_t patch_len) const {
    return (patch_count - 1) * stride + patch_len;
  }
};

template <typename T>
TokenSequence<T> tokenize_batch(Tape<T>& tape, const std::vector<const SignalWindow*>& windows,
                                ParameterStore<T>& store, const FleetSpec& fleet,
                                const TokenizerConfig& cfg) {
  if (windows.empty()) throw ContractError("tokenize_batch: empty batch");
  const size_t B = windows.size();
  const size_t M = windows[0]->channels();
  const size_t L = windows[0]->length();
  if (M != fleet.num_channels) {
    throw ContractError(cat("tokenize_batch: window has ", M, " channels, fleet ",
                            fleet.fleet_id, " declares ", fleet.num_channels));
  }
  for (const auto* w : windows) {
    if (w->fleet_id != fleet.fleet_id || w->channels() != M || w->length() != L) {
      throw ContractError("tokenize_batch: batch must be homogeneous in fleet and shape");
    }
  }
  if (!fleet_registered(store, fleet)) {
    throw ContractError("tokenize_batch: fleet " + fleet.fleet_id + " has no token pools");
  }
  const size_t P = patch_count(L, cfg.patch_len, cfg.stride);
  const size_t d = cfg.model_dim;

  TokenSequence<T> seq;
  seq.sections = TokenSections{cfg.prompt_len, P, cfg.task_len};
  seq.patch_count = P;
  seq.window_len = L;
  seq.fleet_id = fleet.fleet_id;
  seq.mu.resize(B);
  seq.sigma.resize(B);
  seq.norm_values.resize(B);

  std::vector<T> patches(B * M * P * cfg.patch_len);
  std::vector<T> stat_mu(B * M), stat_sigma(B * M);
  for (size_t b = 0; b < B; ++b) {
    seq.mu[b].resize(M);
    seq.sigma[b].resize(M);
    seq.norm_values[b].resize(M);
    for (size_t m = 0; m < M; ++m) {
      NormResult norm = normalize_channel(windows[b]->values[m], cfg.eps);
      seq.mu[b][m] = norm.mu;
      seq.sigma[b][m] = norm.sigma;
      stat_mu[b * M + m] = static_cast<T>(squash_stat(norm.mu));
      stat_sigma[b * M + m] = static_cast<T>(squash_stat(norm.sigma));
      T* dst = patches.data() + (b * M + m) * P * cfg.patch_len;
      for (size_t p = 0; p < P; ++p) {
        for (size_t o = 0; o < cfg.patch_len; ++o) {
          dst[p * cfg.patch_len + o] = static_cast<T>(norm.values[p * cfg.stride + o]);
        }
      }
      seq.norm_values[b][m] = std::move(norm.values);
    }
  }

  Tensor<T> patch_in = Tensor<T>::from({B, M, P, cfg.patch_len}, std::move(patches));
  Tensor<T> patch_tok =
      tape.linear(patch_in, store.get("tok.proj.w"), store.get("tok.proj.b"));

  Tensor<T> mu_in = Tensor<T>::from({B, M, size_t{1}, size_t{1}}, std::move(stat_mu));
  Tensor<T> mu_tok = tape.linear(mu_in, store.get("tok.stat_mu.w"), store.get("tok.stat_mu.b"));
  Tensor<T> sigma_in = Tensor<T>::from({B, M, size_t{1}, size_t{1}}, std::move(stat_sigma));
  Tensor<T> sigma_tok =
      tape.linear(sigma_in, store.get("tok.stat_sigma.w"), store.get("tok.stat_sigma.b"));

  std::vector<Tensor<T>> prompt_rows;
  prompt_rows.reserve(M);
  for (size_t m = 0; m < M; ++m) {
    Tensor<T>& p = store.get(prompt_pool_name(fleet.fleet_id, fleet.channel_names[m]));
    prompt_rows.push_back(tape.reshape(p, {size_t{1}, cfg.prompt_len, d}));
  }
  Tensor<T> prompt = tape.broadcast_leading(tape.concat(prompt_rows, 0), {B});

  Tensor<T> task = tape.broadcast_leading(store.get(task_pool_name(fleet.fleet_id)), {B, M});

  seq.tokens = tape.concat({prompt, patch_tok, mu_tok, sigma_tok, task}, 2);
  return seq;
}

template <typename T>
TokenSequence<T> tokenize(Tape<T>& tape, const SignalWindow& window, ParameterStore<T>& store,
                          const FleetSpec& fleet, const TokenizerConfig& cfg) {
  TokenSequence<T> seq = tokenize_batch(tape, {&window}, store, fleet, cfg);
  const Shape& s = seq.tokens.shape();
  seq.tokens = tape.reshape(seq.tokens, {s[1], s[2], s[3]});
  return seq;
}

}  // namespace fsgpt
