#pragma once

// Finite-difference verification of the reverse-mode gradients: one check
// per tape operation plus end-to-end checks of both training losses at a
// tiny configuration. All checks run in 64-bit precision.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "fsgpt/train.hpp"

namespace fsgpt {

struct GradCheckEntry {
  std::string name;
  double max_err = 0.0;   // |analytic - fd| / max(1, |analytic|, |fd|)
  size_t elements = 0;    // gradient entries compared
};

namespace gradcheck_detail {

inline double rel_err(double a, double f) {
  const double denom = std::max({1.0, std::fabs(a), std::fabs(f)});
  return std::fabs(a - f) / denom;
}

inline Tensor<double> random_input(const Shape& shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal() * scale;
  Tensor<double> t = Tensor<double>::from(shape, std::move(v));
  t.set_requires_grad(true);
  return t;
}

inline Tensor<double> random_const(const Shape& shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.normal();
  return Tensor<double>::from(shape, std::move(v));
}

// Builds the scalar loss once with recording on, backpropagates, then
// compares every input's gradient against central differences computed by
// re-running the same builder with recording off.
inline GradCheckEntry check(
    const std::string& name, std::vector<Tensor<double>> inputs,
    const std::function<Tensor<double>(Tape<double>&, const std::vector<Tensor<double>>&)>&
        build,
    double h = 1e-5) {
  Tape<double> tape;
  Tensor<double> loss = build(tape, inputs);
  tape.backward(loss);

  GradCheckEntry entry;
  entry.name = name;
  auto eval = [&]() {
    Tape<double> t;
    t.recording = false;
    return static_cast<double>(build(t, inputs).item());
  };
  for (auto& x : inputs) {
    if (!x.requires_grad()) continue;
    std::vector<double> analytic = x.grad();
    std::vector<double> fd = finite_diff_grad<double>(eval, x, h);
    for (size_t i = 0; i < analytic.size(); ++i) {
      entry.max_err = std::max(entry.max_err, rel_err(analytic[i], fd[i]));
      ++entry.elements;
    }
  }
  return entry;
}

// Scalarizes a tensor asymmetrically so gradient errors cannot cancel:
// mean(out * c) with a fixed random weighting c.
inline Tensor<double> weighted_mean(Tape<double>& tape, Tensor<double> out, Tensor<double> c) {
  return tape.mean(tape.mul(out, c));
}

}  // namespace gradcheck_detail

inline std::vector<GradCheckEntry> run_op_gradchecks(uint64_t seed) {
  using gradcheck_detail::check;
  using gradcheck_detail::random_const;
  using gradcheck_detail::random_input;
  using gradcheck_detail::weighted_mean;
  Rng rng(seed);
  std::vector<GradCheckEntry> out;

  {
    Tensor<double> c = random_const({2, 3, 5}, rng);
    out.push_back(check("matmul.shared_rhs",
                        {random_input({2, 3, 4}, rng), random_input({4, 5}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(t, t.matmul(in[0], in[1]), c);
                        }));
  }
  {
    Tensor<double> c = random_const({2, 3, 5}, rng);
    out.push_back(check("matmul.batched",
                        {random_input({2, 3, 4}, rng), random_input({2, 4, 5}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(t, t.matmul(in[0], in[1]), c);
                        }));
  }
  {
    Tensor<double> c = random_const({2, 3, 5}, rng);
    out.push_back(check("linear",
                        {random_input({2, 3, 4}, rng), random_input({4, 5}, rng),
                         random_input({5}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(t, t.linear(in[0], in[1], in[2]), c);
                        }));
  }
  {
    Tensor<double> c = random_const({2, 3, 5}, rng);
    out.push_back(check("softmax_lastdim", {random_input({2, 3, 5}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(t, t.softmax_lastdim(in[0]), c);
                        }));
  }
  {
    Tensor<double> c = random_const({2, 3, 6}, rng);
    out.push_back(check("layer_norm",
                        {random_input({2, 3, 6}, rng), random_input({6}, rng),
                         random_input({6}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(t, t.layer_norm(in[0], in[1], in[2], 1e-5), c);
                        }));
  }
  {
    Tensor<double> c = random_const({2, 3, 4}, rng);
    out.push_back(check("sigmoid", {random_input({2, 3, 4}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(t, t.sigmoid(in[0]), c);
                        }));
  }
  {
    Tensor<double> c = random_const({2, 3, 4}, rng);
    out.push_back(check("gelu", {random_input({2, 3, 4}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(t, t.gelu(in[0]), c);
                        }));
  }
  {
    Tensor<double> c = random_const({3, 4}, rng);
    out.push_back(check("add_sub_mul",
                        {random_input({3, 4}, rng), random_input({3, 4}, rng),
                         random_input({3, 4}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          Tensor<double> s = t.sub(t.add(in[0], in[1]), in[2]);
                          return weighted_mean(t, t.mul(s, in[1]), c);
                        }));
  }
  {
    Tensor<double> c = random_const({3, 4}, rng);
    out.push_back(check("scalar_ops", {random_input({3, 4}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(
                              t, t.add_scalar(t.scalar_mul(in[0], 1.7), 0.3), c);
                        }));
  }
  {
    Tensor<double> c = random_const({3, 4}, rng);
    out.push_back(check("sum", {random_input({3, 4}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return t.sum(t.mul(in[0], c));
                        }));
  }
  {
    Tensor<double> c = random_const({3, 4}, rng);
    out.push_back(check("mean", {random_input({3, 4}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return t.mean(t.mul(in[0], c));
                        }));
  }
  out.push_back(check("mse", {random_input({3, 5}, rng), random_input({3, 5}, rng)},
                      [](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                        return t.mse(in[0], in[1]);
                      }));
  {
    Tensor<double> c = random_const({2, 3, 3}, rng);
    out.push_back(check("concat",
                        {random_input({2, 2, 3}, rng), random_input({2, 1, 3}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(t, t.concat({in[0], in[1]}, 1), c);
                        }));
  }
  {
    Tensor<double> c = random_const({2, 3, 2}, rng);
    out.push_back(check("slice", {random_input({3, 4, 5}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(t, t.slice(in[0], {1, 0, 2}, {2, 3, 2}), c);
                        }));
  }
  {
    Tensor<double> c = random_const({4, 2, 3}, rng);
    out.push_back(check("transpose", {random_input({2, 3, 4}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(t, t.transpose(in[0], {2, 0, 1}), c);
                        }));
  }
  {
    Tensor<double> c = random_const({2, 4, 2, 3}, rng);
    out.push_back(check("transpose_rank4", {random_input({2, 3, 2, 4}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(t, t.transpose(in[0], {0, 3, 2, 1}), c);
                        }));
  }
  {
    Tensor<double> c = random_const({3, 4}, rng);
    out.push_back(check("reshape", {random_input({2, 6}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(t, t.reshape(in[0], {3, 4}), c);
                        }));
  }
  {
    Tensor<double> c = random_const({2, 3, 4}, rng);
    out.push_back(check("broadcast_leading", {random_input({3, 4}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(t, t.broadcast_leading(in[0], {2}), c);
                        }));
  }
  {
    Tensor<double> c = random_const({2, 3, 3}, rng);
    out.push_back(check("index_select", {random_input({2, 4, 3}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(t, t.index_select(in[0], 1, {2, 0, 2}), c);
                        }));
  }
  {
    std::vector<uint8_t> mask(12);
    for (size_t i = 0; i < mask.size(); ++i) mask[i] = (i % 3) != 1;
    Tensor<double> c = random_const({8}, rng);
    out.push_back(check("masked_select", {random_input({2, 6}, rng)},
                        [c, mask](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(t, t.masked_select(in[0], mask), c);
                        }));
  }
  {
    Tensor<double> c = random_const({2, 2, 8}, rng);
    out.push_back(check("overlap_add", {random_input({2, 2, 3, 4}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(t, t.overlap_add(in[0], 2), c);
                        }));
  }
  {
    Tensor<double> c = random_const({2, 2, 12}, rng);
    out.push_back(check("overlap_add.disjoint", {random_input({2, 2, 3, 4}, rng)},
                        [c](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          return weighted_mean(t, t.overlap_add(in[0], 4), c);
                        }));
  }
  {
    Tensor<double> c = random_const({4, 5}, rng);
    const uint64_t drop_seed = derive_seed(seed, "dropout");
    out.push_back(check("dropout", {random_input({4, 5}, rng)},
                        [c, drop_seed](Tape<double>& t, const std::vector<Tensor<double>>& in) {
                          Rng r(drop_seed);
                          return weighted_mean(t, t.dropout(in[0], 0.4, r), c);
                        }));
  }
  return out;
}

// Tiny end-to-end configuration: 3 channels, 4 patches, model_dim 8,
// 2 blocks, 2 heads. Window length 24 with patch_len = stride = 6.
inline RunConfig gradcheck_config() {
  RunConfig cfg = desk_profile();
  cfg.model_dim = 8;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.ffn_hidden = 16;
  cfg.patch_len = 6;
  cfg.stride = 6;
  cfg.prompt_len = 2;
  cfg.task_len = 1;
  cfg.window_len = 24;
  cfg.window_stride = 24;
  cfg.precision = Precision::f64;
  cfg.seed = 11;
  return cfg;
}

inline FleetSpec gradcheck_fleet() {
  FleetSpec spec = desk_fleet_a();
  spec.fleet_id = "tinyA";
  spec.num_channels = 3;
  spec.channel_names = {"pressure", "temp", "flow"};
  spec.channel_units = {"kPa", "C", "lps"};
  spec.baseline_channel = 2;
  spec.anomaly_rate = 1.0;
  return spec;
}

// Finite differences of both training losses with respect to every
// parameter in the store.
inline std::vector<GradCheckEntry> run_loss_gradchecks(uint64_t seed) {
  const RunConfig cfg = gradcheck_config();
  const FleetSpec spec = gradcheck_fleet();
  System<double> sys = build_system<double>(cfg, {spec});
  const TokenizerConfig tok = sys.tok();
  const ModelConfig mdl = sys.model();

  Dataset ds = generate_fleet(spec, 240, derive_seed(seed, "gradcheck.data"), cfg.window_len);
  WindowSet ws = make_windows(ds, cfg.window_len, cfg.window_stride);
  const SignalWindow* window = nullptr;
  for (const auto& w : ws.train) {
    bool has_normal = false, has_anom = false;
    for (uint8_t l : w.labels) (l ? has_anom : has_normal) = true;
    if (has_normal && has_anom) {
      window = &w;
      break;
    }
  }
  if (!window) throw ContractError("gradcheck: no mixed-label window in tiny dataset");
  const std::vector<const SignalWindow*> batch{window};
  const JointLossConfig jl = default_joint_config(spec, cfg);

  const size_t P = patch_count(cfg.window_len, tok.patch_len, tok.stride);
  const std::vector<MaskPlan> plans{
      MaskPlan::make(spec.num_channels, P, cfg.mask_ratio, derive_seed(seed, "gradcheck.mask"))};

  auto masked_loss = [&](Tape<double>& tape) {
    TokenSequence<double> seq = tokenize_batch(tape, batch, sys.store, spec, tok);
    Tensor<double> masked = apply_mask(tape, seq, seq.tokens, sys.store, plans);
    Tensor<double> h = backbone_forward(tape, sys.store, mdl, masked);
    Tensor<double> recon = decode_recon(tape, sys.store, h, seq, tok);
    Tensor<double> target =
        train_detail::norm_target(seq, seq.covered_len(tok.stride, tok.patch_len));
    return mstm_loss(tape, target, recon, plans, tok.stride, tok.patch_len);
  };
  auto joint_loss = [&](Tape<double>& tape) {
    TokenSequence<double> seq = tokenize_batch(tape, batch, sys.store, spec, tok);
    const size_t covered = seq.covered_len(tok.stride, tok.patch_len);
    Tensor<double> h = backbone_forward(tape, sys.store, mdl, seq.tokens);
    Tensor<double> y_hat_bp = decode_bp(tape, sys.store, h, seq, tok, jl.bp_channels);
    Tensor<double> y_hat_ad = decode_ad(tape, sys.store, h, seq, tok, jl.ad_channel);
    Tensor<double> y_bp = train_detail::bp_target<double>(batch, jl.bp_channels, covered);
    std::vector<uint8_t> labels = train_detail::cropped_labels(batch, covered);
    BpLossResult<double> bp = bp_loss(tape, y_bp, y_hat_bp, labels);
    Tensor<double> ad = ad_loss(tape, y_hat_ad, labels);
    return total_loss(tape, bp.loss, ad, jl.alpha);
  };

  std::vector<GradCheckEntry> out;
  auto run = [&](const std::string& name, auto&& builder) {
    sys.store.zero_grads();
    Tape<double> tape;
    Tensor<double> loss = builder(tape);
    tape.backward(loss);
    GradCheckEntry entry;
    entry.name = name;
    auto eval = [&]() {
      Tape<double> t;
      t.recording = false;
      return static_cast<double>(builder(t).item());
    };
    for (size_t i = 0; i < sys.store.size(); ++i) {
      Tensor<double>& p = sys.store.at(i);
      std::vector<double> analytic =
          p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0);
      std::vector<double> fd = finite_diff_grad<double>(eval, p, 1e-5);
      for (size_t k = 0; k < analytic.size(); ++k) {
        entry.max_err = std::max(entry.max_err, gradcheck_detail::rel_err(analytic[k], fd[k]));
        ++entry.elements;
      }
    }
    out.push_back(entry);
  };
  run("loss.masked_reconstruction", masked_loss);
  run("loss.joint_bp_ad", joint_loss);
  return out;
}

inline std::vector<GradCheckEntry> run_all_gradchecks(uint64_t seed) {
  std::vector<GradCheckEntry> out = run_op_gradchecks(seed);
  std::vector<GradCheckEntry> losses = run_loss_gradchecks(seed);
  out.insert(out.end(), losses.begin(), losses.end());
  return out;
}

}  // namespace fsgpt
