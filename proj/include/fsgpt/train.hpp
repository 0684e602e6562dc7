#pragma once

// Orchestration: system assembly (parameters for tokenizer, backbone, heads,
// and per-fleet token pools), the self-supervised pretraining loop, the
// frozen-backbone fine-tuning loop, evaluation, and feature export.

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "fsgpt/checkpoint.hpp"
#include "fsgpt/config.hpp"
#include "fsgpt/data.hpp"
#include "fsgpt/losses.hpp"
#include "fsgpt/masking.hpp"
#include "fsgpt/metrics.hpp"
#include "fsgpt/model.hpp"
#include "fsgpt/tokenizer.hpp"
#include "fsgpt/training.hpp"

namespace fsgpt {

template <typename T>
struct System {
  RunConfig cfg;
  std::vector<FleetSpec> fleets;
  ParameterStore<T> store;
  size_t max_tokens = 0;

  TokenizerConfig tok() const { return cfg.tokenizer_config(); }
  ModelConfig model() const { return cfg.model_config(); }

  const FleetSpec& fleet(const std::string& id) const {
    for (const auto& f : fleets) {
      if (f.fleet_id == id) return f;
    }
    throw ContractError("System: unknown fleet " + id);
  }
};

template <typename T>
System<T> build_system(const RunConfig& cfg, std::vector<FleetSpec> fleets) {
  cfg.validate();
  System<T> sys;
  sys.cfg = cfg;
  sys.fleets = std::move(fleets);
  const size_t P = patch_count(cfg.window_len, cfg.patch_len, cfg.stride);
  sys.max_tokens = TokenSections{cfg.prompt_len, P, cfg.task_len}.total();
  Rng rng(derive_seed(cfg.seed, "init"));
  const TokenizerConfig tok = cfg.tokenizer_config();
  register_tokenizer_params(sys.store, tok, rng);
  register_model_params(sys.store, cfg.model_config(), tok, sys.max_tokens, rng);
  for (const auto& f : sys.fleets) register_fleet_pools(sys.store, f, tok, rng);
  return sys;
}

// Copies checkpoint tensors into the system by name; names the system does
// not know yet (e.g. pools of a fleet first seen now) are added verbatim.
template <typename T>
void adopt_tensors(ParameterStore<T>& store, const ParameterStore<T>& loaded) {
  for (size_t i = 0; i < loaded.size(); ++i) {
    const std::string& name = loaded.names()[i];
    const Tensor<T>& src = loaded.at(i);
    if (store.contains(name)) {
      Tensor<T>& dst = store.get(name);
      if (dst.shape() != src.shape()) {
        throw ContractError(cat("checkpoint tensor ", name, " is ", shape_str(src.shape()),
                                ", system expects ", shape_str(dst.shape())));
      }
      dst.value() = src.value();
    } else {
      store.add(name, Tensor<T>::from(src.shape(), src.value()));
    }
  }
}

// Geometry keys that a checkpoint and the run loading it must agree on.
inline void require_config_compatible(const RunConfig& run, const RunConfig& ckpt) {
  auto mismatch = [](const std::string& key) {
    throw ContractError("checkpoint/config mismatch on " + key);
  };
  if (run.patch_len != ckpt.patch_len) mismatch("tokenizer.patch_len");
  if (run.stride != ckpt.stride) mismatch("tokenizer.stride");
  if (run.prompt_len != ckpt.prompt_len) mismatch("tokenizer.prompt_len");
  if (run.task_len != ckpt.task_len) mismatch("tokenizer.task_len");
  if (run.norm_eps != ckpt.norm_eps) mismatch("tokenizer.eps");
  if (run.model_dim != ckpt.model_dim) mismatch("model.dim");
  if (run.num_layers != ckpt.num_layers) mismatch("model.layers");
  if (run.num_heads != ckpt.num_heads) mismatch("model.heads");
  if (run.ffn_hidden != ckpt.ffn_hidden) mismatch("model.ffn_hidden");
  if (run.window_len != ckpt.window_len) mismatch("data.window_len");
  if (run.precision != ckpt.precision) mismatch("run.precision");
}

inline RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    apply_config_line(cfg, line);
  }
  return cfg;
}

struct FleetData {
  FleetSpec spec;
  WindowSet windows;
};

// Pretraining optimizes everything except the two fine-tuning heads, which
// the self-supervised loss never touches.
template <typename T>
void set_pretrain_trainable(ParameterStore<T>& store) {
  for (size_t i = 0; i < store.size(); ++i) {
    const std::string& name = store.names()[i];
    const bool head = name.rfind("head.bp.", 0) == 0 || name.rfind("head.ad.", 0) == 0;
    store.at(i).set_requires_grad(!head);
  }
}

inline FreezePlan finetune_freeze_plan() { return freeze_all_except({"head.bp.", "head.ad."}); }

inline JointLossConfig default_joint_config(const FleetSpec& spec, const RunConfig& cfg) {
  JointLossConfig jl;
  jl.alpha = cfg.alpha;
  jl.ad_threshold = cfg.ad_threshold;
  jl.bp_channels = {spec.baseline_channel};
  jl.ad_channel = spec.baseline_channel;
  return jl;
}

namespace train_detail {

// Batched normalized target [B, M, L_cov] as a constant tensor.
template <typename T>
Tensor<T> norm_target(const TokenSequence<T>& seq, size_t covered) {
  const size_t B = seq.batch(), M = seq.channels();
  std::vector<T> data(B * M * covered);
  for (size_t b = 0; b < B; ++b) {
    for (size_t m = 0; m < M; ++m) {
      const auto& src = seq.norm_values[b][m];
      T* dst = data.data() + (b * M + m) * covered;
      for (size_t t = 0; t < covered; ++t) dst[t] = static_cast<T>(src[t]);
    }
  }
  return Tensor<T>::from({B, M, covered}, std::move(data));
}

// Physical-unit targets for the selected channels, cropped to the patch-
// covered prefix: [B, C, L_cov].
template <typename T>
Tensor<T> bp_target(const std::vector<const SignalWindow*>& windows,
                    const std::vector<size_t>& channels, size_t covered) {
  const size_t B = windows.size(), C = channels.size();
  std::vector<T> data(B * C * covered);
  for (size_t b = 0; b < B; ++b) {
    for (size_t ci = 0; ci < C; ++ci) {
      const auto& src = windows[b]->values[channels[ci]];
      T* dst = data.data() + (b * C + ci) * covered;
      for (size_t t = 0; t < covered; ++t) dst[t] = static_cast<T>(src[t]);
    }
  }
  return Tensor<T>::from({B, C, covered}, std::move(data));
}

inline std::vector<uint8_t> cropped_labels(const std::vector<const SignalWindow*>& windows,
                                           size_t covered) {
  std::vector<uint8_t> out;
  out.reserve(windows.size() * covered);
  for (const auto* w : windows) {
    if (w->labels.empty()) {
      out.insert(out.end(), covered, 0);
    } else {
      out.insert(out.end(), w->labels.begin(), w->labels.begin() + covered);
    }
  }
  return out;
}

template <typename T>
std::vector<std::vector<const SignalWindow*>> make_batches(
    const std::vector<const SignalWindow*>& windows, size_t batch_size, uint64_t seed) {
  std::vector<const SignalWindow*> order = windows;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<const SignalWindow*>> batches;
  for (size_t i = 0; i < order.size(); i += batch_size) {
    batches.emplace_back(order.begin() + i,
                         order.begin() + std::min(order.size(), i + batch_size));
  }
  return batches;
}

inline std::vector<const SignalWindow*> window_ptrs(const std::vector<SignalWindow>& v) {
  std::vector<const SignalWindow*> out;
  out.reserve(v.size());
  for (const auto& w : v) out.push_back(&w);
  return out;
}

}  // namespace train_detail

struct EpochStats {
  size_t steps = 0;
  double mean_loss = 0.0;
  double first_step_loss = 0.0;
  std::map<std::string, double> fleet_mean_loss;
};

// One pass over every fleet's training windows in fleet-homogeneous batches,
// interleaved in seeded random order. Per batch: tokenize, mask, forward,
// reconstruct, masked MSE, backward, Adam step.
template <typename T>
EpochStats pretrain_epoch(System<T>& sys, const std::vector<FleetData>& data, Adam<T>& opt,
                          size_t epoch, std::ostream* progress = nullptr) {
  if (data.empty()) throw ContractError("pretrain_epoch: no datasets");
  const TokenizerConfig tok = sys.tok();
  const ModelConfig mdl = sys.model();

  struct Pending {
    size_t fleet_idx;
    std::vector<const SignalWindow*> windows;
  };
  std::vector<Pending> batches;
  for (size_t fi = 0; fi < data.size(); ++fi) {
    auto ptrs = train_detail::window_ptrs(data[fi].windows.train);
    if (ptrs.empty()) {
      throw ContractError("pretrain_epoch: fleet " + data[fi].spec.fleet_id +
                          " has no training windows");
    }
    auto fleet_batches = train_detail::make_batches<T>(
        ptrs, sys.cfg.batch_size,
        derive_seed(sys.cfg.seed, cat("epoch.", epoch, ".order.", data[fi].spec.fleet_id)));
    for (auto& b : fleet_batches) batches.push_back({fi, std::move(b)});
  }
  {
    Rng rng(derive_seed(sys.cfg.seed, cat("epoch.", epoch, ".interleave")));
    rng.shuffle(batches);
  }

  EpochStats stats;
  std::map<std::string, std::pair<double, size_t>> per_fleet;
  for (const auto& batch : batches) {
    const FleetData& fd = data[batch.fleet_idx];
    Tape<T> tape;
    TokenSequence<T> seq = tokenize_batch(tape, batch.windows, sys.store, fd.spec, tok);
    const size_t covered = seq.covered_len(tok.stride, tok.patch_len);

    std::vector<MaskPlan> plans;
    plans.reserve(batch.windows.size());
    for (size_t b = 0; b < batch.windows.size(); ++b) {
      plans.push_back(MaskPlan::make(
          seq.channels(), seq.patch_count, sys.cfg.mask_ratio,
          derive_seed(sys.cfg.seed, cat("mask.", epoch, ".", opt.steps(), ".", b))));
    }
    Tensor<T> masked = apply_mask(tape, seq, seq.tokens, sys.store, plans);

    Rng drop_rng(derive_seed(sys.cfg.seed, cat("drop.", epoch, ".", opt.steps())));
    Tensor<T> h = backbone_forward(tape, sys.store, mdl, masked,
                                   mdl.dropout > 0.0 ? &drop_rng : nullptr);
    Tensor<T> recon = decode_recon(tape, sys.store, h, seq, tok);
    Tensor<T> target = train_detail::norm_target(seq, covered);
    Tensor<T> loss = mstm_loss(tape, target, recon, plans, tok.stride, tok.patch_len);

    const double loss_val = static_cast<double>(loss.item());
    tape.backward(loss);
    sys.store.fill_missing_grads();
    opt.step(sys.store);

    if (stats.steps == 0) stats.first_step_loss = loss_val;
    stats.mean_loss += loss_val;
    ++stats.steps;
    auto& acc = per_fleet[fd.spec.fleet_id];
    acc.first += loss_val;
    ++acc.second;
    if (progress) {
      (*progress) << epoch << "," << fd.spec.fleet_id << "," << opt.steps() << "," << loss_val
                  << "\n";
    }
  }
  stats.mean_loss /= static_cast<double>(stats.steps);
  for (const auto& [fleet, acc] : per_fleet) {
    stats.fleet_mean_loss[fleet] = acc.first / static_cast<double>(acc.second);
  }
  return stats;
}

// Repeatedly steps on one fixed batch with a fixed mask plan; returns the
// loss before the first step and after the last.
template <typename T>
std::pair<double, double> overfit_single_batch(System<T>& sys, const FleetData& fd,
                                               const std::vector<const SignalWindow*>& batch,
                                               Adam<T>& opt, size_t steps) {
  const TokenizerConfig tok = sys.tok();
  const ModelConfig mdl = sys.model();
  double first = 0.0, last = 0.0;
  std::vector<MaskPlan> plans;
  for (size_t s = 0; s < steps; ++s) {
    Tape<T> tape;
    TokenSequence<T> seq = tokenize_batch(tape, batch, sys.store, fd.spec, tok);
    if (plans.empty()) {
      for (size_t b = 0; b < batch.size(); ++b) {
        plans.push_back(MaskPlan::make(seq.channels(), seq.patch_count, sys.cfg.mask_ratio,
                                       derive_seed(sys.cfg.seed, cat("overfit.mask.", b))));
      }
    }
    Tensor<T> masked = apply_mask(tape, seq, seq.tokens, sys.store, plans);
    Tensor<T> h = backbone_forward(tape, sys.store, mdl, masked);
    Tensor<T> recon = decode_recon(tape, sys.store, h, seq, tok);
    Tensor<T> target = train_detail::norm_target(seq, seq.covered_len(tok.stride, tok.patch_len));
    Tensor<T> loss = mstm_loss(tape, target, recon, plans, tok.stride, tok.patch_len);
    if (s == 0) first = static_cast<double>(loss.item());
    last = static_cast<double>(loss.item());
    tape.backward(loss);
    sys.store.fill_missing_grads();
    opt.step(sys.store);
  }
  return {first, last};
}

struct FinetuneResult {
  double trainable_ratio = 0.0;
  size_t steps = 0;
  std::vector<double> epoch_mean_loss;
  bool no_normal_support_seen = false;
};

// Joint BP+AD training with the backbone frozen per the FreezePlan. Only
// labeled windows are accepted; each batch decodes baseline predictions and
// anomaly scores and steps on l_bp + alpha * l_ad.
//
// Baseline prediction is regression from the covariate channels, so its
// forward hides the predicted channels' patch tokens behind the task token —
// the same replacement the masked pretraining objective trains — and the
// prediction must be reconstructed through channel attention. Anomaly
// detection needs the measured values, so it runs on the unmasked tokens.
// The two forwards share the tokenized batch.
template <typename T>
FinetuneResult finetune_run(System<T>& sys, const FleetData& fd,
                            const std::vector<const SignalWindow*>& train_windows,
                            Adam<T>& opt, const FreezePlan& freeze, const JointLossConfig& jl,
                            std::ostream* progress = nullptr) {
  if (train_windows.empty()) throw ContractError("finetune_run: no training windows");
  for (const auto* w : train_windows) {
    if (!w->labeled()) {
      throw ContractError("finetune_run: fleet " + fd.spec.fleet_id +
                          " has unlabeled windows; fine-tuning needs AD labels");
    }
  }
  freeze.apply(sys.store);
  FinetuneResult result;
  result.trainable_ratio = freeze.trainable_ratio(sys.store);

  const TokenizerConfig tok = sys.tok();
  const ModelConfig mdl = sys.model();
  for (size_t epoch = 0; epoch < sys.cfg.finetune_epochs; ++epoch) {
    auto batches = train_detail::make_batches<T>(
        train_windows, sys.cfg.batch_size,
        derive_seed(sys.cfg.seed, cat("ft.epoch.", epoch, ".order.", fd.spec.fleet_id)));
    double epoch_loss = 0.0;
    size_t epoch_steps = 0;
    for (const auto& batch : batches) {
      Tape<T> tape;
      TokenSequence<T> seq = tokenize_batch(tape, batch, sys.store, fd.spec, tok);
      const size_t covered = seq.covered_len(tok.stride, tok.patch_len);
      Rng drop_rng(derive_seed(sys.cfg.seed, cat("ft.drop.", epoch, ".", opt.steps())));
      Rng* drop = mdl.dropout > 0.0 ? &drop_rng : nullptr;

      auto bp_plans = channel_mask_plans(batch.size(), seq.channels(), seq.patch_count,
                                         jl.bp_channels);
      Tensor<T> bp_tokens = apply_mask(tape, seq, seq.tokens, sys.store, bp_plans);
      Tensor<T> h_bp = backbone_forward(tape, sys.store, mdl, bp_tokens, drop);
      Tensor<T> y_hat_bp = decode_bp(tape, sys.store, h_bp, seq, tok, jl.bp_channels);

      Tensor<T> h_ad = backbone_forward(tape, sys.store, mdl, seq.tokens, drop);
      Tensor<T> y_hat_ad = decode_ad(tape, sys.store, h_ad, seq, tok, jl.ad_channel);

      Tensor<T> y_bp = train_detail::bp_target<T>(batch, jl.bp_channels, covered);
      std::vector<uint8_t> labels = train_detail::cropped_labels(batch, covered);
      BpLossResult<T> bp = bp_loss(tape, y_bp, y_hat_bp, labels);
      if (bp.no_normal_support) result.no_normal_support_seen = true;
      Tensor<T> ad = ad_loss(tape, y_hat_ad, labels);
      Tensor<T> loss = total_loss(tape, bp.loss, ad, jl.alpha);

      epoch_loss += static_cast<double>(loss.item());
      ++epoch_steps;
      tape.backward(loss);
      sys.store.fill_missing_grads();
      opt.step(sys.store);
      ++result.steps;
      if (progress) {
        (*progress) << epoch << "," << fd.spec.fleet_id << "," << opt.steps() << ","
                    << static_cast<double>(loss.item()) << "\n";
      }
    }
    result.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(epoch_steps));
  }
  return result;
}

// Forward-only evaluation. BP errors are computed in physical units over
// normal timesteps only; AD counts are per timestep at the given threshold.
template <typename T>
EvalReport evaluate(System<T>& sys, const FleetData& fd,
                    const std::vector<SignalWindow>& windows, const JointLossConfig& jl) {
  if (windows.empty()) throw ContractError("evaluate: no windows");
  const TokenizerConfig tok = sys.tok();
  const ModelConfig mdl = sys.model();
  EvalReport report;
  report.fleet_id = fd.spec.fleet_id;
  report.windows = windows.size();
  report.seed = sys.cfg.seed;
  report.config_hash = config_hash_hex(sys.cfg);

  std::vector<double> y_all, yhat_all;
  auto ptrs = train_detail::window_ptrs(windows);
  size_t normal_total = 0;
  for (size_t i = 0; i < ptrs.size(); i += sys.cfg.batch_size) {
    std::vector<const SignalWindow*> batch(
        ptrs.begin() + i, ptrs.begin() + std::min(ptrs.size(), i + sys.cfg.batch_size));
    Tape<T> tape;
    tape.recording = false;
    TokenSequence<T> seq = tokenize_batch(tape, batch, sys.store, fd.spec, tok);
    const size_t covered = seq.covered_len(tok.stride, tok.patch_len);

    // Same split as fine-tuning: baseline prediction from covariates only
    // (predicted channels hidden behind the task token), anomaly scores from
    // the measured window.
    auto bp_plans = channel_mask_plans(batch.size(), seq.channels(), seq.patch_count,
                                       jl.bp_channels);
    Tensor<T> bp_tokens = apply_mask(tape, seq, seq.tokens, sys.store, bp_plans);
    Tensor<T> h_bp = backbone_forward(tape, sys.store, mdl, bp_tokens);
    Tensor<T> y_hat_bp = decode_bp(tape, sys.store, h_bp, seq, tok, jl.bp_channels);

    Tensor<T> h_ad = backbone_forward(tape, sys.store, mdl, seq.tokens);
    Tensor<T> y_hat_ad = decode_ad(tape, sys.store, h_ad, seq, tok, jl.ad_channel);

    const size_t B = batch.size(), C = jl.bp_channels.size();
    for (size_t b = 0; b < B; ++b) {
      const SignalWindow& w = *batch[b];
      for (size_t t = 0; t < covered; ++t) {
        const bool anomalous = w.labeled() && w.labels[t];
        if (anomalous) continue;
        ++normal_total;
        for (size_t ci = 0; ci < C; ++ci) {
          y_all.push_back(w.values[jl.bp_channels[ci]][t]);
          yhat_all.push_back(
              static_cast<double>(y_hat_bp.value()[(b * C + ci) * covered + t]));
        }
      }
      if (w.labeled()) {
        std::vector<uint8_t> labels(w.labels.begin(), w.labels.begin() + covered);
        std::vector<double> scores(covered);
        for (size_t t = 0; t < covered; ++t) {
          scores[t] = static_cast<double>(y_hat_ad.value()[b * covered + t]);
        }
        report.ad.add(ad_metrics(labels, scores, jl.ad_threshold));
      }
    }
  }
  if (normal_total == 0) {
    report.no_normal_support = true;
  } else {
    report.bp = bp_metrics(y_all, yhat_all);
  }
  return report;
}

template <typename T>
std::vector<EpochStats> run_pretrain(System<T>& sys, const std::vector<FleetData>& data,
                                     Adam<T>& opt, std::ostream* progress = nullptr) {
  std::vector<EpochStats> out;
  for (size_t e = 0; e < sys.cfg.pretrain_epochs; ++e) {
    out.push_back(pretrain_epoch(sys, data, opt, e, progress));
  }
  return out;
}

// Seeded subset of a fleet's training windows (fraction of 1.0 keeps all,
// in stored order). Both study arms must see the identical subset.
inline std::vector<const SignalWindow*> select_finetune_windows(const FleetData& fd,
                                                                double fraction, uint64_t seed) {
  auto ptrs = train_detail::window_ptrs(fd.windows.train);
  if (fraction >= 1.0) return ptrs;
  if (fraction <= 0.0) throw ContractError("train fraction must be positive");
  Rng rng(derive_seed(seed, "ft.subset"));
  rng.shuffle(ptrs);
  const size_t keep = std::max<size_t>(
      1, static_cast<size_t>(std::llround(fraction * static_cast<double>(ptrs.size()))));
  ptrs.resize(std::min(keep, ptrs.size()));
  return ptrs;
}

struct PipelineOutcome {
  EvalReport report;
  FinetuneResult finetune;
  std::vector<EpochStats> pretrain_epochs;
};

// Full study arm: optional self-supervised pretraining over pretrain_data,
// then heads-only fine-tuning on a fraction of the target fleet's training
// windows, then evaluation on the given windows. With pretrain_backbone
// false the backbone stays at its random initialization, so the arms differ
// only in what the frozen encoder has learned.
template <typename T>
PipelineOutcome run_pipeline(const RunConfig& cfg, const std::vector<FleetData>& pretrain_data,
                             const FleetData& target, bool pretrain_backbone,
                             double train_fraction, const std::vector<SignalWindow>& eval_windows,
                             std::ostream* progress = nullptr) {
  std::vector<FleetSpec> specs;
  auto add_spec = [&](const FleetSpec& s) {
    for (const auto& have : specs) {
      if (have.fleet_id == s.fleet_id) return;
    }
    specs.push_back(s);
  };
  for (const auto& fd : pretrain_data) add_spec(fd.spec);
  add_spec(target.spec);

  System<T> sys = build_system<T>(cfg, specs);
  PipelineOutcome out;
  if (pretrain_backbone) {
    if (pretrain_data.empty()) throw ContractError("run_pipeline: no pretraining data");
    set_pretrain_trainable(sys.store);
    AdamConfig ac;
    ac.lr = cfg.lr;
    Adam<T> opt(ac);
    out.pretrain_epochs = run_pretrain(sys, pretrain_data, opt, progress);
  }

  const FreezePlan freeze = finetune_freeze_plan();
  AdamConfig ac;
  ac.lr = cfg.effective_finetune_lr();
  Adam<T> opt(ac);
  const JointLossConfig jl = default_joint_config(target.spec, cfg);
  auto ft_windows = select_finetune_windows(target, train_fraction, cfg.seed);
  out.finetune = finetune_run(sys, target, ft_windows, opt, freeze, jl, progress);
  out.report = evaluate(sys, target, eval_windows, jl);
  out.report.trainable_ratio = out.finetune.trainable_ratio;
  return out;
}

// Mean-pooled final-layer patch tokens, one row per window:
// fleet_id, anomaly flag, then model_dim feature values.
template <typename T>
void export_features(System<T>& sys, const FleetData& fd,
                     const std::vector<SignalWindow>& windows, std::ostream& out) {
  const TokenizerConfig tok = sys.tok();
  const ModelConfig mdl = sys.model();
  out << "fleet_id,anomalous";
  for (size_t j = 0; j < mdl.model_dim; ++j) out << ",f_" << j;
  out << "\n";
  auto ptrs = train_detail::window_ptrs(windows);
  out.precision(17);
  for (size_t i = 0; i < ptrs.size(); i += sys.cfg.batch_size) {
    std::vector<const SignalWindow*> batch(
        ptrs.begin() + i, ptrs.begin() + std::min(ptrs.size(), i + sys.cfg.batch_size));
    Tape<T> tape;
    tape.recording = false;
    TokenSequence<T> seq = tokenize_batch(tape, batch, sys.store, fd.spec, tok);
    Tensor<T> h = backbone_forward(tape, sys.store, mdl, seq.tokens);
    const size_t B = batch.size(), M = seq.channels(), N = seq.sections.total();
    const size_t d = mdl.model_dim, P = seq.patch_count;
    const size_t pb = seq.sections.patch_begin();
    for (size_t b = 0; b < B; ++b) {
      std::vector<double> pooled(d, 0.0);
      for (size_t m = 0; m < M; ++m) {
        for (size_t p = 0; p < P; ++p) {
          const T* row = h.value().data() + (((b * M + m) * N) + pb + p) * d;
          for (size_t j = 0; j < d; ++j) pooled[j] += static_cast<double>(row[j]);
        }
      }
      out << fd.spec.fleet_id << "," << (batch[b]->any_anomaly() ? 1 : 0);
      for (size_t j = 0; j < d; ++j) {
        out << "," << pooled[j] / static_cast<double>(M * P);
      }
      out << "\n";
    }
  }
}

}  // namespace fsgpt
