#pragma once

// Backbone: stacked blocks of channel attention (across sensors at a fixed
// token position) then time attention (across positions within a sensor)
// then an FFN, each sublayer post-normed (sublayer -> residual -> LayerNorm).
// Splitting attention into the two stages keeps the quadratic cost at
// M^2·N·d + N^2·M·d per block instead of (M·N)^2·d for joint attention.
//
// Heads decode patch-section tokens back to sample space: reconstruction
// (normalized), baseline prediction (denormalized to signal units), and
// per-timestep anomaly scores in (0,1).

#include <cstdint>
#include <string>
#include <vector>

#include "fsgpt/common.hpp"
#include "fsgpt/config.hpp"
#include "fsgpt/tensor.hpp"
#include "fsgpt/tokenizer.hpp"
#include "fsgpt/training.hpp"

namespace fsgpt {

// ---- parameter registration -----------------------------------------------

inline std::string block_prefix(size_t layer) { return "blk." + std::to_string(layer) + "."; }

template <typename T>
void register_model_params(ParameterStore<T>& store, const ModelConfig& cfg,
                           const TokenizerConfig& tok, size_t max_tokens, Rng& rng) {
  const size_t d = cfg.model_dim;
  const size_t h = cfg.ffn_dim();
  for (size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = block_prefix(l);
    for (const char* stage : {"ca", "ta"}) {
      for (const char* proj : {"q", "k", "v", "o"}) {
        store.add_gaussian(p + stage + "." + proj, {d, d}, kInitStd, rng);
      }
      store.add(p + stage + ".ln.g", Tensor<T>::full({d}, T{1}));
      store.add_zeros(p + stage + ".ln.b", {d});
    }
    store.add_gaussian(p + "ffn.w1", {d, h}, kInitStd, rng);
    store.add_zeros(p + "ffn.b1", {h});
    store.add_gaussian(p + "ffn.w2", {h, d}, kInitStd, rng);
    store.add_zeros(p + "ffn.b2", {d});
    store.add(p + "ffn.ln.g", Tensor<T>::full({d}, T{1}));
    store.add_zeros(p + "ffn.ln.b", {d});
  }
  // Randomly initialized: masked positions all receive the same task token,
  // so the position table is the only thing that distinguishes them, and an
  // all-zero start would leave reconstruction position-blind until the table
  // drifted away from zero.
  store.add_gaussian("pos.embed", {max_tokens, d}, kInitStd, rng);
  store.add_gaussian("head.recon.w", {d, tok.patch_len}, kInitStd, rng);
  store.add_zeros("head.recon.b", {tok.patch_len});
  store.add_gaussian("head.bp.w", {d, tok.patch_len}, kInitStd, rng);
  store.add_zeros("head.bp.b", {tok.patch_len});
  store.add_gaussian("head.ad.w", {d, tok.patch_len}, kInitStd, rng);
  store.add_zeros("head.ad.b", {tok.patch_len});
}

// ---- closed-form multiply counts -------------------------------------------

// Q,K,V,O projections for both stages plus the FFN, per block.
inline uint64_t block_projection_multiplies(uint64_t M, uint64_t N, uint64_t d, uint64_t ffn) {
  return 8 * M * N * d * d + 2 * M * N * d * ffn;
}

// Quadratic attention terms per block: scores and weighted values for the
// channel stage (M x M per position) and the time stage (N x N per channel).
inline uint64_t block_attention_multiplies(uint64_t M, uint64_t N, uint64_t d) {
  return 2 * N * M * M * d + 2 * M * N * N * d;
}

inline uint64_t block_total_multiplies(uint64_t M, uint64_t N, uint64_t d, uint64_t ffn) {
  return block_projection_multiplies(M, N, d, ffn) + block_attention_multiplies(M, N, d);
}

// What one joint-attention block over the flattened M·N token grid would
// spend on its quadratic terms.
inline uint64_t joint_attention_multiplies(uint64_t M, uint64_t N, uint64_t d) {
  return 2 * (M * N) * (M * N) * d;
}

// ---- attention stages --------------------------------------------------

namespace detail {

// x: [B, G, S, d] -> attention over S within each (B, G) group.
template <typename T>
Tensor<T> grouped_attention(Tape<T>& tape, ParameterStore<T>& store, const std::string& prefix,
                            Tensor<T> x, size_t num_heads) {
  const size_t B = x.extent(0), G = x.extent(1), S = x.extent(2), d = x.extent(3);
  if (d % num_heads != 0) throw ContractError("attention: d not divisible by num_heads");
  const size_t dh = d / num_heads;
  Tensor<T> q = tape.matmul(x, store.get(prefix + "q"));
  Tensor<T> k = tape.matmul(x, store.get(prefix + "k"));
  Tensor<T> v = tape.matmul(x, store.get(prefix + "v"));
  // [B,G,S,d] -> [B,G,nh,S,dh]
  auto to_heads = [&](Tensor<T> t) {
    t = tape.reshape(t, {B, G, S, num_heads, dh});
    return tape.transpose(t, {0, 1, 3, 2, 4});
  };
  q = to_heads(q);
  k = to_heads(k);
  v = to_heads(v);
  Tensor<T> kt = tape.transpose(k, {0, 1, 2, 4, 3});
  Tensor<T> scores = tape.scalar_mul(tape.matmul(q, kt), 1.0 / std::sqrt(double(dh)));
  Tensor<T> attn = tape.softmax_lastdim(scores);
  Tensor<T> mixed = tape.matmul(attn, v);  // [B,G,nh,S,dh]
  mixed = tape.transpose(mixed, {0, 1, 3, 2, 4});
  mixed = tape.reshape(mixed, {B, G, S, d});
  return tape.matmul(mixed, store.get(prefix + "o"));
}

template <typename T>
Tensor<T> post_norm(Tape<T>& tape, ParameterStore<T>& store, const std::string& ln_prefix,
                    Tensor<T> residual, Tensor<T> sublayer, const ModelConfig& cfg, Rng* rng) {
  if (cfg.dropout > 0.0) {
    if (!rng) throw ContractError("dropout configured but no rng supplied");
    sublayer = tape.dropout(sublayer, cfg.dropout, *rng);
  }
  Tensor<T> summed = tape.add(residual, sublayer);
  return tape.layer_norm(summed, store.get(ln_prefix + "ln.g"), store.get(ln_prefix + "ln.b"),
                         1e-5);
}

}  // namespace detail

// Attention across the M channels at each token position independently.
// x: [B, M, N, d] (or [M, N, d]); shape preserved.
template <typename T>
Tensor<T> channel_attention(Tape<T>& tape, ParameterStore<T>& store, const std::string& prefix,
                            Tensor<T> x, size_t num_heads = 1) {
  const bool squeeze = x.rank() == 3;
  if (squeeze) x = tape.reshape(x, {size_t{1}, x.extent(0), x.extent(1), x.extent(2)});
  if (x.rank() != 4) throw ShapeError("channel_attention: expected [B, M, N, d]");
  Tensor<T> xt = tape.transpose(x, {0, 2, 1, 3});  // [B, N, M, d]
  Tensor<T> out = detail::grouped_attention(tape, store, prefix, xt, num_heads);
  out = tape.transpose(out, {0, 2, 1, 3});
  if (squeeze) out = tape.reshape(out, {out.extent(1), out.extent(2), out.extent(3)});
  return out;
}

// Attention across the N token positions within each channel independently.
template <typename T>
Tensor<T> time_attention(Tape<T>& tape, ParameterStore<T>& store, const std::string& prefix,
                         Tensor<T> x, size_t num_heads = 1) {
  const bool squeeze = x.rank() == 3;
  if (squeeze) x = tape.reshape(x, {size_t{1}, x.extent(0), x.extent(1), x.extent(2)});
  if (x.rank() != 4) throw ShapeError("time_attention: expected [B, M, N, d]");
  Tensor<T> out = detail::grouped_attention(tape, store, prefix, x, num_heads);
  if (squeeze) out = tape.reshape(out, {out.extent(1), out.extent(2), out.extent(3)});
  return out;
}

// Full backbone: positional embedding, then num_layers blocks. Accepts
// [M, N, d] or [B, M, N, d]; returns the same rank it was given.
template <typename T>
Tensor<T> backbone_forward(Tape<T>& tape, ParameterStore<T>& store, const ModelConfig& cfg,
                           Tensor<T> tokens, Rng* dropout_rng = nullptr) {
  const bool squeeze = tokens.rank() == 3;
  if (squeeze) {
    tokens = tape.reshape(tokens,
                          {size_t{1}, tokens.extent(0), tokens.extent(1), tokens.extent(2)});
  }
  if (tokens.rank() != 4 || tokens.extent(3) != cfg.model_dim) {
    throw ShapeError("backbone_forward: expected [B, M, N, model_dim]");
  }
  const size_t B = tokens.extent(0), M = tokens.extent(1), N = tokens.extent(2);

  Tensor<T>& pos = store.get("pos.embed");
  if (N > pos.extent(0)) {
    throw ContractError(cat("backbone_forward: sequence of ", N,
                            " tokens exceeds positional table of ", pos.extent(0)));
  }
  Tensor<T> pos_rows = tape.slice(pos, {0, 0}, {N, cfg.model_dim});
  Tensor<T> x = tape.add(tokens, tape.broadcast_leading(pos_rows, {B, M}));

  for (size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = block_prefix(l);
    Tensor<T> ca = channel_attention(tape, store, p + "ca.", x, cfg.num_heads);
    x = detail::post_norm(tape, store, p + "ca.", x, ca, cfg, dropout_rng);
    Tensor<T> ta = time_attention(tape, store, p + "ta.", x, cfg.num_heads);
    x = detail::post_norm(tape, store, p + "ta.", x, ta, cfg, dropout_rng);
    Tensor<T> mid = tape.gelu(tape.linear(x, store.get(p + "ffn.w1"), store.get(p + "ffn.b1")));
    Tensor<T> ffn = tape.linear(mid, store.get(p + "ffn.w2"), store.get(p + "ffn.b2"));
    x = detail::post_norm(tape, store, p + "ffn.", x, ffn, cfg, dropout_rng);
  }
  if (squeeze) x = tape.reshape(x, {x.extent(1), x.extent(2), x.extent(3)});
  return x;
}

// ---- decoding ------------------------------------------------------------

namespace detail {

template <typename T>
Tensor<T> as_batched(Tape<T>& tape, Tensor<T> h) {
  if (h.rank() == 3) {
    return tape.reshape(h, {size_t{1}, h.extent(0), h.extent(1), h.extent(2)});
  }
  if (h.rank() != 4) throw ShapeError("decode: representation must be [B, M, N, d]");
  return h;
}

// Patch-section tokens of the selected channels: [B, C, P, d].
template <typename T>
Tensor<T> patch_tokens(Tape<T>& tape, Tensor<T> h, const TokenSequence<T>& seq,
                       const std::vector<size_t>& channels) {
  Tensor<T> hb = as_batched(tape, h);
  const size_t B = hb.extent(0), M = hb.extent(1), N = hb.extent(2), d = hb.extent(3);
  if (M != seq.channels() || N != seq.sections.total()) {
    throw ShapeError("decode: representation does not match token sequence");
  }
  for (size_t c : channels) {
    if (c >= M) throw ContractError(cat("decode: channel ", c, " out of range for ", M));
  }
  Tensor<T> picked = channels.size() == M ? hb : tape.index_select(hb, 1, channels);
  return tape.slice(picked, {0, 0, seq.sections.patch_begin(), 0},
                    {B, channels.size(), seq.patch_count, d});
}

template <typename T>
std::vector<size_t> all_channels(const TokenSequence<T>& seq) {
  std::vector<size_t> out(seq.channels());
  for (size_t i = 0; i < out.size(); ++i) out[i] = i;
  return out;
}

}  // namespace detail

// Normalized reconstruction of every channel: [B, M, L_cov] (or [M, L_cov]).
template <typename T>
Tensor<T> decode_recon(Tape<T>& tape, ParameterStore<T>& store, Tensor<T> h,
                       const TokenSequence<T>& seq, const TokenizerConfig& cfg) {
  Tensor<T> toks = detail::patch_tokens(tape, h, seq, detail::all_channels(seq));
  Tensor<T> patches = tape.linear(toks, store.get("head.recon.w"), store.get("head.recon.b"));
  Tensor<T> out = tape.overlap_add(patches, cfg.stride);
  if (h.rank() == 3) out = tape.reshape(out, {out.extent(1), out.extent(2)});
  return out;
}

// Baseline prediction for the given channels, denormalized to signal units:
// [B, C, L_cov] (or [C, L_cov]).
template <typename T>
Tensor<T> decode_bp(Tape<T>& tape, ParameterStore<T>& store, Tensor<T> h,
                    const TokenSequence<T>& seq, const TokenizerConfig& cfg,
                    const std::vector<size_t>& channels) {
  if (channels.empty()) throw ContractError("decode_bp: no baseline channels given");
  Tensor<T> toks = detail::patch_tokens(tape, h, seq, channels);
  Tensor<T> patches = tape.linear(toks, store.get("head.bp.w"), store.get("head.bp.b"));
  Tensor<T> norm = tape.overlap_add(patches, cfg.stride);  // [B, C, L_cov]
  const size_t B = norm.extent(0), C = norm.extent(1), L = norm.extent(2);
  std::vector<T> sig(B * C * L), mu(B * C * L);
  for (size_t b = 0; b < B; ++b) {
    for (size_t ci = 0; ci < C; ++ci) {
      const T s = static_cast<T>(seq.sigma[b][channels[ci]]);
      const T m = static_cast<T>(seq.mu[b][channels[ci]]);
      T* sp = sig.data() + (b * C + ci) * L;
      T* mp = mu.data() + (b * C + ci) * L;
      for (size_t t = 0; t < L; ++t) {
        sp[t] = s;
        mp[t] = m;
      }
    }
  }
  Tensor<T> out = tape.add(tape.mul(norm, Tensor<T>::from({B, C, L}, std::move(sig))),
                           Tensor<T>::from({B, C, L}, std::move(mu)));
  if (h.rank() == 3) out = tape.reshape(out, {C, L});
  return out;
}

// Per-timestep anomaly scores in (0,1) from the designated channel's tokens:
// [B, 1, L_cov] (or [1, L_cov]).
template <typename T>
Tensor<T> decode_ad(Tape<T>& tape, ParameterStore<T>& store, Tensor<T> h,
                    const TokenSequence<T>& seq, const TokenizerConfig& cfg,
                    size_t source_channel) {
  Tensor<T> toks = detail::patch_tokens(tape, h, seq, {source_channel});
  Tensor<T> patches = tape.linear(toks, store.get("head.ad.w"), store.get("head.ad.b"));
  Tensor<T> scores = tape.sigmoid(patches);
  Tensor<T> out = tape.overlap_add(scores, cfg.stride);
  if (h.rank() == 3) out = tape.reshape(out, {out.extent(1), out.extent(2)});
  return out;
}

}  // namespace fsgpt
