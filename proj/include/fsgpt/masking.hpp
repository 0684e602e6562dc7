#pragma once

// Self-supervised masking: per-channel random patch masks, token replacement
// by the fleet's task token, and the reconstruction loss restricted to
// exactly the samples inside masked patches.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "fsgpt/common.hpp"
#include "fsgpt/rng.hpp"
#include "fsgpt/tensor.hpp"
#include "fsgpt/tokenizer.hpp"

namespace fsgpt {

struct MaskPlan {
  size_t channels = 0;
  size_t patches = 0;
  double ratio = 0.3;
  uint64_t seed = 0;
  std::vector<uint8_t> mask;  // [M x P], 0 = masked, 1 = unmasked

  // Per channel, round(ratio * P) patches are masked, clamped so that at
  // least one patch is masked and at least one stays unmasked.
  static MaskPlan make(size_t M, size_t P, double ratio, uint64_t seed) {
    if (M == 0) throw ContractError("MaskPlan: no channels");
    if (P < 2) throw ContractError("MaskPlan: need at least 2 patches to mask");
    if (ratio <= 0.0 || ratio >= 1.0) throw ContractError("MaskPlan: ratio must be in (0,1)");
    MaskPlan plan;
    plan.channels = M;
    plan.patches = P;
    plan.ratio = ratio;
    plan.seed = seed;
    plan.mask.assign(M * P, 1);
    size_t z = static_cast<size_t>(std::llround(ratio * static_cast<double>(P)));
    z = std::max<size_t>(1, std::min(z, P - 1));
    Rng rng(seed);
    for (size_t m = 0; m < M; ++m) {
      for (size_t p : rng.sample_indices(P, z)) plan.mask[m * P + p] = 0;
    }
    return plan;
  }

  bool masked(size_t m, size_t p) const { return mask.at(m * patches + p) == 0; }

  size_t masked_count(size_t m) const {
    size_t n = 0;
    for (size_t p = 0; p < patches; ++p) n += masked(m, p) ? 1 : 0;
    return n;
  }
};

// Plans that hide every patch of the listed channels and nothing else. The
// fine-tuning baseline-prediction forward uses this so the predicted channel
// is reconstructed from the covariate channels instead of being copied from
// its own visible tokens; channel-level mean/std stay visible through the
// stat tokens.
inline std::vector<MaskPlan> channel_mask_plans(size_t batch, size_t channels, size_t patches,
                                                const std::vector<size_t>& hidden) {
  if (batch == 0) throw ContractError("channel_mask_plans: empty batch");
  if (hidden.empty()) throw ContractError("channel_mask_plans: no channels to hide");
  if (hidden.size() >= channels) {
    throw ContractError("channel_mask_plans: at least one channel must stay visible");
  }
  MaskPlan plan;
  plan.channels = channels;
  plan.patches = patches;
  plan.ratio = 1.0;
  plan.mask.assign(channels * patches, 1);
  for (size_t c : hidden) {
    if (c >= channels) {
      throw ContractError(cat("channel_mask_plans: channel ", c, " out of range ", channels));
    }
    for (size_t p = 0; p < patches; ++p) plan.mask[c * patches + p] = 0;
  }
  return std::vector<MaskPlan>(batch, plan);
}

// Replaces each masked patch token with the fleet's task token (row 0 of the
// task pool): out = tokens * keep + task * (1 - keep). Prompt, stat, and
// task sections are untouched. Gradients flow into the task token from every
// masked position. Plans are per window; pass one plan per batch element.
template <typename T>
Tensor<T> apply_mask(Tape<T>& tape, const TokenSequence<T>& seq, Tensor<T> tokens,
                     ParameterStore<T>& store, const std::vector<MaskPlan>& plans) {
  const bool batched = tokens.rank() == 4;
  if (!batched && tokens.rank() != 3) throw ShapeError("apply_mask: tokens must be rank 3 or 4");
  const size_t B = batched ? tokens.extent(0) : 1;
  const size_t M = tokens.extent(batched ? 1 : 0);
  const size_t N = tokens.extent(batched ? 2 : 1);
  const size_t d = tokens.extent(batched ? 3 : 2);
  if (plans.size() != B) throw ContractError("apply_mask: one MaskPlan per batch element");
  for (const auto& plan : plans) {
    if (plan.channels != M || plan.patches != seq.patch_count) {
      throw ContractError(cat("apply_mask: plan is ", plan.channels, "x", plan.patches,
                              ", sequence wants ", M, "x", seq.patch_count));
    }
  }
  if (N != seq.sections.total()) throw ShapeError("apply_mask: token count mismatch");

  std::vector<T> keep(B * M * N * d, T{1});
  std::vector<T> fill(B * M * N * d, T{0});
  const size_t pb = seq.sections.patch_begin();
  for (size_t b = 0; b < B; ++b) {
    for (size_t m = 0; m < M; ++m) {
      for (size_t p = 0; p < seq.patch_count; ++p) {
        if (!plans[b].masked(m, p)) continue;
        T* krow = keep.data() + ((b * M + m) * N + pb + p) * d;
        T* frow = fill.data() + ((b * M + m) * N + pb + p) * d;
        for (size_t j = 0; j < d; ++j) {
          krow[j] = T{0};
          frow[j] = T{1};
        }
      }
    }
  }
  Shape shape = tokens.shape();
  Tensor<T> keep_t = Tensor<T>::from(shape, std::move(keep));
  Tensor<T> fill_t = Tensor<T>::from(shape, std::move(fill));

  Tensor<T> task = store.get(task_pool_name(seq.fleet_id));
  Tensor<T> task_row = tape.slice(task, {0, 0}, {1, d});
  task_row = tape.reshape(task_row, {d});
  Shape lead = batched ? Shape{B, M, N} : Shape{M, N};
  Tensor<T> task_full = tape.broadcast_leading(task_row, lead);

  return tape.add(tape.mul(tokens, keep_t), tape.mul(task_full, fill_t));
}

// Mean squared error over exactly the samples belonging to masked patches.
// x_norm and x_hat are [M, L_cov] or [B, M, L_cov] in normalized space.
// A sample at offset o of masked patch p covers index p*stride + o.
template <typename T>
Tensor<T> mstm_loss(Tape<T>& tape, Tensor<T> x_norm, Tensor<T> x_hat,
                    const std::vector<MaskPlan>& plans, size_t stride, size_t patch_len) {
  if (x_norm.shape() != x_hat.shape()) {
    throw ShapeError("mstm_loss: target and reconstruction shapes differ");
  }
  const bool batched = x_hat.rank() == 3;
  if (!batched && x_hat.rank() != 2) throw ShapeError("mstm_loss: expected rank 2 or 3");
  const size_t B = batched ? x_hat.extent(0) : 1;
  const size_t M = x_hat.extent(batched ? 1 : 0);
  const size_t L = x_hat.extent(batched ? 2 : 1);
  if (plans.size() != B) throw ContractError("mstm_loss: one MaskPlan per batch element");

  std::vector<uint8_t> sample_mask(B * M * L, 0);
  for (size_t b = 0; b < B; ++b) {
    const MaskPlan& plan = plans[b];
    if (plan.channels != M) throw ContractError("mstm_loss: plan channel count mismatch");
    if ((plan.patches - 1) * stride + patch_len > L) {
      throw ContractError("mstm_loss: plan patch grid exceeds series length");
    }
    for (size_t m = 0; m < M; ++m) {
      uint8_t* row = sample_mask.data() + (b * M + m) * L;
      for (size_t p = 0; p < plan.patches; ++p) {
        if (!plan.masked(m, p)) continue;
        for (size_t o = 0; o < patch_len; ++o) row[p * stride + o] = 1;
      }
    }
  }
  Tensor<T> sel_hat = tape.masked_select(x_hat, sample_mask);
  Tensor<T> sel_tgt = tape.masked_select(x_norm, sample_mask);
  return tape.mse(sel_hat, sel_tgt);
}

template <typename T>
Tensor<T> mstm_loss(Tape<T>& tape, Tensor<T> x_norm, Tensor<T> x_hat, const MaskPlan& plan,
                    size_t stride, size_t patch_len) {
  return mstm_loss(tape, x_norm, x_hat, std::vector<MaskPlan>{plan}, stride, patch_len);
}

}  // namespace fsgpt
