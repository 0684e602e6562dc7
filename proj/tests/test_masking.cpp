#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "fsgpt/masking.hpp"

using namespace fsgpt;

namespace {

// independent oracle for the per-channel masked-patch budget
size_t expected_masked(size_t P, double ratio) {
  size_t z = static_cast<size_t>(std::llround(ratio * static_cast<double>(P)));
  return std::max<size_t>(1, std::min(z, P - 1));
}

// sample indices covered by the masked patches of one channel
std::set<size_t> masked_samples(const MaskPlan& plan, size_t m, size_t stride, size_t pl) {
  std::set<size_t> out;
  for (size_t p = 0; p < plan.patches; ++p) {
    if (!plan.masked(m, p)) continue;
    for (size_t o = 0; o < pl; ++o) out.insert(p * stride + o);
  }
  return out;
}

struct TokSetup {
  TokenizerConfig tok;
  FleetSpec spec;
  ParameterStore<double> store;
  SignalWindow window;
};

TokSetup make_setup(uint64_t seed, size_t task_len = 2) {
  TokSetup s;
  s.tok.patch_len = 4;
  s.tok.stride = 4;
  s.tok.model_dim = 8;
  s.tok.prompt_len = 2;
  s.tok.task_len = task_len;

  s.spec.fleet_id = "unitK";
  s.spec.num_channels = 2;
  s.spec.validate();

  Rng rng(seed);
  register_tokenizer_params(s.store, s.tok, rng);
  register_fleet_pools(s.store, s.spec, s.tok, rng);

  s.window.fleet_id = s.spec.fleet_id;
  s.window.values.resize(2);
  Rng wr(seed + 1);
  for (auto& ch : s.window.values) {
    ch.resize(16);  // four patches
    for (auto& v : ch) v = wr.normal(10.0, 2.0);
  }
  return s;
}

}  // namespace

TEST_SUITE("masking") {

TEST_CASE("per-channel masked counts follow the clamped ratio") {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const size_t M = 1 + rng.integer(6);
    const size_t P = 2 + rng.integer(30);
    const double ratio = 0.05 + 0.9 * rng.uniform(0.0, 1.0);
    MaskPlan plan = MaskPlan::make(M, P, ratio, rng.integer(1u << 30));
    INFO("M=" << M << " P=" << P << " ratio=" << ratio);
    for (size_t m = 0; m < M; ++m) {
      CHECK(plan.masked_count(m) == expected_masked(P, ratio));
      CHECK(plan.masked_count(m) >= 1);
      CHECK(plan.masked_count(m) <= P - 1);
    }
  }

  // extremes clamp instead of masking nothing or everything
  MaskPlan lo = MaskPlan::make(3, 10, 0.01, 7);
  MaskPlan hi = MaskPlan::make(3, 10, 0.99, 7);
  for (size_t m = 0; m < 3; ++m) {
    CHECK(lo.masked_count(m) == 1);
    CHECK(hi.masked_count(m) == 9);
  }

  CHECK_THROWS_AS(MaskPlan::make(0, 4, 0.3, 1), ContractError);
  CHECK_THROWS_AS(MaskPlan::make(2, 1, 0.3, 1), ContractError);
  CHECK_THROWS_AS(MaskPlan::make(2, 4, 0.0, 1), ContractError);
  CHECK_THROWS_AS(MaskPlan::make(2, 4, 1.0, 1), ContractError);
}

TEST_CASE("plans are deterministic in the seed") {
  MaskPlan a = MaskPlan::make(4, 12, 0.3, 99);
  MaskPlan b = MaskPlan::make(4, 12, 0.3, 99);
  CHECK(a.mask == b.mask);
  bool any_differs = false;
  for (uint64_t s = 100; s < 110 && !any_differs; ++s) {
    any_differs = MaskPlan::make(4, 12, 0.3, s).mask != a.mask;
  }
  CHECK(any_differs);
}

TEST_CASE("channel plans hide exactly the listed channels") {
  auto plans = channel_mask_plans(3, 4, 5, {1, 3});
  CHECK(plans.size() == 3);
  for (const auto& plan : plans) {
    CHECK(plan.channels == 4);
    CHECK(plan.patches == 5);
    for (size_t p = 0; p < 5; ++p) {
      CHECK(plan.masked(1, p));
      CHECK(plan.masked(3, p));
      CHECK_FALSE(plan.masked(0, p));
      CHECK_FALSE(plan.masked(2, p));
    }
  }

  CHECK_THROWS_AS(channel_mask_plans(0, 4, 5, {1}), ContractError);      // empty batch
  CHECK_THROWS_AS(channel_mask_plans(2, 4, 5, {}), ContractError);       // nothing hidden
  CHECK_THROWS_AS(channel_mask_plans(2, 4, 5, {4}), ContractError);      // out of range
  CHECK_THROWS_AS(channel_mask_plans(2, 2, 5, {0, 1}), ContractError);   // nothing visible
}

TEST_CASE("masked patch tokens become the task token, everything else passes through") {
  TokSetup s = make_setup(11);
  Tape<double> tape;
  TokenSequence<double> seq = tokenize(tape, s.window, s.store, s.spec, s.tok);
  const size_t M = 2, N = seq.sections.total(), d = 8, P = seq.patch_count;
  REQUIRE(P == 4);

  MaskPlan plan = MaskPlan::make(M, P, 0.5, 21);
  Tensor<double> masked = apply_mask(tape, seq, seq.tokens, s.store, {plan});
  CHECK(masked.shape() == seq.tokens.shape());

  const Tensor<double>& task = s.store.get(task_pool_name(s.spec.fleet_id));
  const size_t pb = seq.sections.patch_begin();
  for (size_t m = 0; m < M; ++m) {
    for (size_t n = 0; n < N; ++n) {
      for (size_t j = 0; j < d; ++j) {
        const size_t i = (m * N + n) * d + j;
        const bool in_patch = n >= pb && n < pb + P;
        if (in_patch && plan.masked(m, n - pb)) {
          // replaced by row 0 of the task pool, not any other row
          CHECK(masked.value()[i] == task.value()[j]);
        } else {
          CHECK(masked.value()[i] == seq.tokens.value()[i]);
        }
      }
    }
  }
}

TEST_CASE("batched masking applies each element's own plan") {
  TokSetup s = make_setup(31);
  SignalWindow w2 = s.window;
  for (auto& ch : w2.values) {
    for (auto& v : ch) v *= 1.1;
  }
  Tape<double> tape;
  TokenSequence<double> seq = tokenize_batch(tape, {&s.window, &w2}, s.store, s.spec, s.tok);
  const size_t M = 2, N = seq.sections.total(), d = 8, P = seq.patch_count;

  MaskPlan p0 = MaskPlan::make(M, P, 0.25, 41);
  MaskPlan p1 = MaskPlan::make(M, P, 0.75, 43);
  Tensor<double> masked = apply_mask(tape, seq, seq.tokens, s.store, {p0, p1});

  const Tensor<double>& task = s.store.get(task_pool_name(s.spec.fleet_id));
  const size_t pb = seq.sections.patch_begin();
  const std::vector<MaskPlan> plans = {p0, p1};
  for (size_t b = 0; b < 2; ++b) {
    for (size_t m = 0; m < M; ++m) {
      for (size_t p = 0; p < P; ++p) {
        const size_t row = ((b * M + m) * N + pb + p) * d;
        if (plans[b].masked(m, p)) {
          for (size_t j = 0; j < d; ++j) CHECK(masked.value()[row + j] == task.value()[j]);
        } else {
          for (size_t j = 0; j < d; ++j) {
            CHECK(masked.value()[row + j] == seq.tokens.value()[row + j]);
          }
        }
      }
    }
  }

  CHECK_THROWS_AS(apply_mask(tape, seq, seq.tokens, s.store, {p0}), ContractError);
  MaskPlan wrong = MaskPlan::make(M, P + 1, 0.5, 1);
  CHECK_THROWS_AS(apply_mask(tape, seq, seq.tokens, s.store, {wrong, wrong}), ContractError);
}

TEST_CASE("every masked position feeds gradient into the task token") {
  TokSetup s = make_setup(51);
  Tape<double> tape;
  TokenSequence<double> seq = tokenize(tape, s.window, s.store, s.spec, s.tok);
  const size_t P = seq.patch_count;
  MaskPlan plan = MaskPlan::make(2, P, 0.5, 61);

  // detach the tokens so the only path into the task pool is the replacement
  Tensor<double> frozen = Tensor<double>::from(seq.tokens.shape(), seq.tokens.value());
  Tape<double> grad_tape;
  Tensor<double> masked = apply_mask(grad_tape, seq, frozen, s.store, {plan});
  Tensor<double> total = grad_tape.sum(masked);
  s.store.get(task_pool_name(s.spec.fleet_id)).zero_grad();
  grad_tape.backward(total);

  size_t replaced = 0;
  for (size_t m = 0; m < 2; ++m) replaced += plan.masked_count(m);
  const auto& g = s.store.get(task_pool_name(s.spec.fleet_id)).grad();
  for (size_t j = 0; j < 8; ++j) {
    CHECK(g[j] == static_cast<double>(replaced));  // row 0: one unit per replacement
    CHECK(g[8 + j] == 0.0);                        // row 1 is never used for filling
  }
}

TEST_CASE("reconstruction loss averages exactly the masked samples") {
  // hand-sized case with overlapping patches: P=3, stride=2, patch_len=3, L=7
  const size_t M = 2, P = 3, stride = 2, pl = 3, L = 7;
  MaskPlan plan;
  plan.channels = M;
  plan.patches = P;
  plan.mask = {0, 1, 1,   // channel 0: patch 0 masked -> samples 0,1,2
               1, 0, 0};  // channel 1: patches 1,2 -> samples 2..6
  REQUIRE(plan.masked(0, 0));
  REQUIRE(plan.masked_count(1) == 2);

  Rng rng(71);
  std::vector<double> tgt(M * L), hat(M * L);
  for (auto& v : tgt) v = rng.normal(0.0, 1.0);
  for (auto& v : hat) v = rng.normal(0.0, 1.0);

  double sum = 0.0;
  size_t count = 0;
  for (size_t m = 0; m < M; ++m) {
    std::set<size_t> sel = masked_samples(plan, m, stride, pl);
    for (size_t t : sel) {
      const double diff = hat[m * L + t] - tgt[m * L + t];
      sum += diff * diff;
      ++count;
    }
  }
  REQUIRE(count == 3 + 5);  // union of overlapping patches, not their sum of lengths

  Tape<double> tape;
  Tensor<double> x = Tensor<double>::from({M, L}, tgt);
  Tensor<double> y = Tensor<double>::from({M, L}, hat);
  Tensor<double> loss = mstm_loss(tape, x, y, plan, stride, pl);
  CHECK(loss.item() == doctest::Approx(sum / double(count)).epsilon(1e-14));

  // plan grid must fit in the series
  CHECK_THROWS_AS(mstm_loss(tape, Tensor<double>::from({M, size_t{6}}, std::vector<double>(12)),
                            Tensor<double>::from({M, size_t{6}}, std::vector<double>(12)), plan,
                            stride, pl),
                  ContractError);
  CHECK_THROWS_AS(mstm_loss(tape, Tensor<double>::zeros({M, L}),
                            Tensor<double>::zeros({M, L + 1}), plan, stride, pl),
                  ShapeError);
}

TEST_CASE("loss gradient is zero at every unmasked sample") {
  const size_t M = 3, P = 4, stride = 3, pl = 3, L = 12;
  MaskPlan plan = MaskPlan::make(M, P, 0.4, 81);

  Rng rng(91);
  std::vector<double> tgt(M * L), hatv(M * L);
  for (auto& v : tgt) v = rng.normal(0.0, 1.0);
  for (auto& v : hatv) v = rng.normal(0.0, 1.0);

  Tape<double> tape;
  Tensor<double> x = Tensor<double>::from({M, L}, tgt);
  Tensor<double> hat = Tensor<double>::from({M, L}, hatv, true);
  Tensor<double> loss = mstm_loss(tape, x, hat, plan, stride, pl);
  tape.backward(loss);

  size_t selected = 0;
  for (size_t m = 0; m < M; ++m) selected += masked_samples(plan, m, stride, pl).size();

  const auto& g = hat.grad();
  size_t nonzero = 0;
  for (size_t m = 0; m < M; ++m) {
    std::set<size_t> sel = masked_samples(plan, m, stride, pl);
    for (size_t t = 0; t < L; ++t) {
      const size_t i = m * L + t;
      if (sel.count(t)) {
        const double expect = 2.0 * (hatv[i] - tgt[i]) / double(selected);
        CHECK(g[i] == doctest::Approx(expect).epsilon(1e-14));
        if (g[i] != 0.0) ++nonzero;
      } else {
        CHECK(g[i] == 0.0);  // exactly zero: unmasked samples carry no signal
      }
    }
  }
  CHECK(nonzero == selected);

  // batched variant with distinct plans per element
  MaskPlan other = MaskPlan::make(M, P, 0.6, 83);
  Tape<double> btape;
  std::vector<double> btgt(2 * M * L), bhatv(2 * M * L);
  for (auto& v : btgt) v = rng.normal(0.0, 1.0);
  for (auto& v : bhatv) v = rng.normal(0.0, 1.0);
  Tensor<double> bx = Tensor<double>::from({2, M, L}, btgt);
  Tensor<double> bhat = Tensor<double>::from({2, M, L}, bhatv, true);
  Tensor<double> bloss = mstm_loss(btape, bx, bhat, {plan, other}, stride, pl);
  btape.backward(bloss);
  const std::vector<MaskPlan> plans = {plan, other};
  const auto& bg = bhat.grad();
  for (size_t b = 0; b < 2; ++b) {
    for (size_t m = 0; m < M; ++m) {
      std::set<size_t> sel = masked_samples(plans[b], m, stride, pl);
      for (size_t t = 0; t < L; ++t) {
        if (!sel.count(t)) CHECK(bg[(b * M + m) * L + t] == 0.0);
      }
    }
  }
}

}  // TEST_SUITE("masking")
