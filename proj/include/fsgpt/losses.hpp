#pragma once

// Joint fine-tuning objective: baseline-prediction loss gated to normal
// timesteps plus an anomaly-score MSE, combined as l_bp + alpha * l_ad.

#include <cstdint>
#include <vector>

#include "fsgpt/common.hpp"
#include "fsgpt/tensor.hpp"

namespace fsgpt {

struct JointLossConfig {
  double alpha = 10.0;  // AD weight; kept above 5 in practice
  std::vector<size_t> bp_channels;
  size_t ad_channel = 0;
  double ad_threshold = 0.5;
};

template <typename T>
struct BpLossResult {
  Tensor<T> loss;
  size_t normal_count = 0;        // gated samples that did contribute
  bool no_normal_support = false; // every timestep was anomalous
};

// Mean of (y - y_hat)^2 over samples at normal timesteps only, normalized
// by that count. Anomalous timesteps contribute exactly zero loss and zero
// gradient. y/y_hat: [C, L] or [B, C, L]; labels: [L] per batch element
// (flattened [B*L]), 0 = normal.
template <typename T>
BpLossResult<T> bp_loss(Tape<T>& tape, Tensor<T> y, Tensor<T> y_hat,
                        const std::vector<uint8_t>& timestep_labels) {
  if (y.shape() != y_hat.shape()) throw ShapeError("bp_loss: shape mismatch");
  const bool batched = y.rank() == 3;
  if (!batched && y.rank() != 2) throw ShapeError("bp_loss: expected rank 2 or 3");
  const size_t B = batched ? y.extent(0) : 1;
  const size_t C = y.extent(batched ? 1 : 0);
  const size_t L = y.extent(batched ? 2 : 1);
  if (timestep_labels.size() != B * L) {
    throw ShapeError(cat("bp_loss: got ", timestep_labels.size(), " labels, expected ", B * L));
  }
  for (uint8_t v : timestep_labels) {
    if (v > 1) throw ContractError("bp_loss: labels must be 0 or 1");
  }

  std::vector<uint8_t> sample_mask(B * C * L, 0);
  size_t normal = 0;
  for (size_t b = 0; b < B; ++b) {
    for (size_t t = 0; t < L; ++t) {
      if (timestep_labels[b * L + t]) continue;
      ++normal;
      for (size_t c = 0; c < C; ++c) sample_mask[(b * C + c) * L + t] = 1;
    }
  }
  BpLossResult<T> out;
  if (normal == 0) {
    out.loss = Tensor<T>::zeros({1});
    out.no_normal_support = true;
    return out;
  }
  out.normal_count = normal * C;
  Tensor<T> sel_hat = tape.masked_select(y_hat, sample_mask);
  Tensor<T> sel_y = tape.masked_select(y, sample_mask);
  out.loss = tape.mse(sel_hat, sel_y);
  return out;
}

// Plain MSE between anomaly scores and binary labels over every entry.
// y_hat: [C, L] or [B, C, L]; labels as in bp_loss, replicated per channel.
template <typename T>
Tensor<T> ad_loss(Tape<T>& tape, Tensor<T> y_hat, const std::vector<uint8_t>& timestep_labels) {
  const bool batched = y_hat.rank() == 3;
  if (!batched && y_hat.rank() != 2) throw ShapeError("ad_loss: expected rank 2 or 3");
  const size_t B = batched ? y_hat.extent(0) : 1;
  const size_t C = y_hat.extent(batched ? 1 : 0);
  const size_t L = y_hat.extent(batched ? 2 : 1);
  if (timestep_labels.size() != B * L) {
    throw ShapeError(cat("ad_loss: got ", timestep_labels.size(), " labels, expected ", B * L));
  }
  std::vector<T> target(B * C * L);
  for (size_t b = 0; b < B; ++b) {
    for (size_t c = 0; c < C; ++c) {
      for (size_t t = 0; t < L; ++t) {
        const uint8_t v = timestep_labels[b * L + t];
        if (v > 1) throw ContractError("ad_loss: labels must be 0 or 1");
        target[(b * C + c) * L + t] = static_cast<T>(v);
      }
    }
  }
  return tape.mse(y_hat, Tensor<T>::from(y_hat.shape(), std::move(target)));
}

template <typename T>
Tensor<T> total_loss(Tape<T>& tape, Tensor<T> l_bp, Tensor<T> l_ad, double alpha) {
  if (alpha <= 0.0) throw ContractError("total_loss: alpha must be positive");
  return tape.add(l_bp, tape.scalar_mul(l_ad, alpha));
}

}  // namespace fsgpt
