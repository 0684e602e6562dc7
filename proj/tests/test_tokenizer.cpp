#include <doctest.h>

#include <cmath>

#include "fsgpt/tokenizer.hpp"

using namespace fsgpt;

namespace {

// independent oracle: count patch start positions by walking the window
size_t naive_patch_count(size_t L, size_t pl, size_t S) {
  size_t n = 0;
  for (size_t start = 0; start + pl <= L; start += S) ++n;
  return n;
}

SignalWindow make_window(const FleetSpec& spec, size_t L, uint64_t seed) {
  SignalWindow w;
  w.fleet_id = spec.fleet_id;
  w.values.resize(spec.num_channels);
  Rng rng(seed);
  for (auto& ch : w.values) {
    ch.resize(L);
    for (auto& v : ch) v = rng.normal(5.0, 3.0);
  }
  return w;
}

FleetSpec small_fleet() {
  FleetSpec spec;
  spec.fleet_id = "unitF";
  spec.num_channels = 3;
  spec.validate();  // fills default channel names/units
  return spec;
}

}  // namespace

TEST_SUITE("tokenizer") {

TEST_CASE("patch counting matches the walked oracle") {
  CHECK(patch_count(10, 4, 2) == 4);
  CHECK(patch_count(10, 10, 3) == 1);
  CHECK(patch_count(2048, 128, 128) == 16);
  CHECK(patch_count(2048, 128, 64) == 31);
  CHECK_THROWS_AS(patch_count(10, 11, 2), ContractError);
  CHECK_THROWS_AS(patch_count(10, 0, 2), ContractError);
  CHECK_THROWS_AS(patch_count(10, 4, 0), ContractError);
  Rng rng(23);
  for (int i = 0; i < 500; ++i) {
    const size_t pl = 1 + rng.integer(64);
    const size_t L = pl + rng.integer(512);
    const size_t S = 1 + rng.integer(64);
    INFO("L=" << L << " pl=" << pl << " S=" << S);
    CHECK(patch_count(L, pl, S) == naive_patch_count(L, pl, S));
  }
}

TEST_CASE("per-channel normalization") {
  std::vector<double> x{2.0, 4.0, 6.0, 8.0};
  NormResult n = normalize_channel(x, 1e-5);
  CHECK(n.mu == doctest::Approx(5.0));
  CHECK(n.sigma == doctest::Approx(std::sqrt(5.0)));  // population variance
  double mean = 0, var = 0;
  for (double v : n.values) mean += v;
  mean /= 4;
  for (double v : n.values) var += (v - mean) * (v - mean);
  CHECK(mean == doctest::Approx(0.0));
  CHECK(var / 4 == doctest::Approx(1.0).epsilon(1e-9));
  auto back = denormalize(n.values, n.mu, n.sigma, 1e-5);
  for (size_t i = 0; i < x.size(); ++i) CHECK(back[i] == doctest::Approx(x[i]).epsilon(1e-12));
}

TEST_CASE("constant channels normalize to zero through the clamp") {
  std::vector<double> x(16, 3.25);
  NormResult n = normalize_channel(x, 1e-5);
  CHECK(n.sigma == doctest::Approx(0.0));
  for (double v : n.values) {
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(0.0));
  }
  auto back = denormalize(n.values, n.mu, n.sigma, 1e-5);
  for (double v : back) CHECK(v == doctest::Approx(3.25));
}

TEST_CASE("statistic squash is signed log1p") {
  CHECK(squash_stat(0.0) == 0.0);
  CHECK(squash_stat(std::exp(1.0) - 1.0) == doctest::Approx(1.0));
  CHECK(squash_stat(-(std::exp(1.0) - 1.0)) == doctest::Approx(-1.0));
  CHECK(squash_stat(1e12) < 30.0);  // tames raw-unit magnitudes
}

TEST_CASE("token sequence layout and shapes") {
  TokenizerConfig cfg;
  cfg.patch_len = 8;
  cfg.stride = 4;
  cfg.model_dim = 16;
  cfg.prompt_len = 3;
  cfg.task_len = 2;
  FleetSpec spec = small_fleet();
  ParameterStore<double> store;
  Rng rng(1);
  register_tokenizer_params(store, cfg, rng);
  register_fleet_pools(store, spec, cfg, rng);
  CHECK(fleet_registered(store, spec));

  SignalWindow w = make_window(spec, 32, 2);
  Tape<double> tape;
  TokenSequence<double> seq = tokenize(tape, w, store, spec, cfg);
  const size_t P = patch_count(32, 8, 4);
  REQUIRE(P == 7);
  CHECK(seq.patch_count == P);
  CHECK(seq.sections.total() == 3 + P + 2 + 2);
  REQUIRE(seq.tokens.shape() == Shape{3, 3 + P + 2 + 2, 16});
  CHECK(seq.covered_len(cfg.stride, cfg.patch_len) == (P - 1) * 4 + 8);

  // section boundaries
  CHECK(seq.sections.patch_begin() == 3);
  CHECK(seq.sections.stat_begin() == 3 + P);
  CHECK(seq.sections.task_begin() == 3 + P + 2);
}

TEST_CASE("prompt and task tokens come from the fleet pools") {
  TokenizerConfig cfg;
  cfg.patch_len = 4;
  cfg.stride = 4;
  cfg.model_dim = 8;
  cfg.prompt_len = 2;
  cfg.task_len = 1;
  FleetSpec spec = small_fleet();
  ParameterStore<double> store;
  Rng rng(3);
  register_tokenizer_params(store, cfg, rng);
  register_fleet_pools(store, spec, cfg, rng);

  SignalWindow w = make_window(spec, 16, 4);
  Tape<double> tape;
  TokenSequence<double> seq = tokenize(tape, w, store, spec, cfg);
  const size_t N = seq.sections.total(), d = 8;

  for (size_t m = 0; m < spec.num_channels; ++m) {
    const Tensor<double>& prompt =
        store.get(prompt_pool_name(spec.fleet_id, spec.channel_names[m]));
    for (size_t p = 0; p < cfg.prompt_len; ++p) {
      for (size_t j = 0; j < d; ++j) {
        CHECK(seq.tokens.value()[(m * N + p) * d + j] == prompt.value()[p * d + j]);
      }
    }
    const Tensor<double>& task = store.get(task_pool_name(spec.fleet_id));
    for (size_t j = 0; j < d; ++j) {
      CHECK(seq.tokens.value()[(m * N + seq.sections.task_begin()) * d + j] ==
            task.value()[j]);
    }
  }
}

TEST_CASE("patch tokens are the linear projection of normalized patches") {
  TokenizerConfig cfg;
  cfg.patch_len = 4;
  cfg.stride = 2;
  cfg.model_dim = 6;
  cfg.prompt_len = 1;
  cfg.task_len = 1;
  FleetSpec spec = small_fleet();
  ParameterStore<double> store;
  Rng rng(5);
  register_tokenizer_params(store, cfg, rng);
  register_fleet_pools(store, spec, cfg, rng);

  SignalWindow w = make_window(spec, 12, 6);
  Tape<double> tape;
  TokenSequence<double> seq = tokenize(tape, w, store, spec, cfg);
  const auto& W = store.get("tok.proj.w").value();  // [pl, d]
  const auto& b = store.get("tok.proj.b").value();  // [d]
  const size_t N = seq.sections.total(), d = 6;

  for (size_t m = 0; m < 3; ++m) {
    for (size_t p = 0; p < seq.patch_count; ++p) {
      for (size_t j = 0; j < d; ++j) {
        double want = b[j];
        for (size_t k = 0; k < 4; ++k) {
          want += seq.norm_values[0][m][p * 2 + k] * W[k * d + j];
        }
        const double got = seq.tokens.value()[(m * N + seq.sections.patch_begin() + p) * d + j];
        CHECK(got == doctest::Approx(want).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("stat tokens embed the squashed raw-unit moments") {
  TokenizerConfig cfg;
  cfg.patch_len = 4;
  cfg.stride = 4;
  cfg.model_dim = 5;
  cfg.prompt_len = 1;
  cfg.task_len = 1;
  FleetSpec spec = small_fleet();
  ParameterStore<double> store;
  Rng rng(7);
  register_tokenizer_params(store, cfg, rng);
  register_fleet_pools(store, spec, cfg, rng);

  SignalWindow w = make_window(spec, 8, 8);
  Tape<double> tape;
  TokenSequence<double> seq = tokenize(tape, w, store, spec, cfg);
  const auto& wmu = store.get("tok.stat_mu.w").value();
  const auto& bmu = store.get("tok.stat_mu.b").value();
  const auto& wsig = store.get("tok.stat_sigma.w").value();
  const auto& bsig = store.get("tok.stat_sigma.b").value();
  const size_t N = seq.sections.total(), d = 5;
  for (size_t m = 0; m < 3; ++m) {
    const double smu = squash_stat(seq.mu[0][m]);
    const double ssig = squash_stat(seq.sigma[0][m]);
    for (size_t j = 0; j < d; ++j) {
      CHECK(seq.tokens.value()[(m * N + seq.sections.stat_begin()) * d + j] ==
            doctest::Approx(smu * wmu[j] + bmu[j]).epsilon(1e-12));
      CHECK(seq.tokens.value()[(m * N + seq.sections.stat_begin() + 1) * d + j] ==
            doctest::Approx(ssig * wsig[j] + bsig[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("tokenization is deterministic and validates the fleet") {
  TokenizerConfig cfg;
  cfg.patch_len = 8;
  cfg.stride = 8;
  cfg.model_dim = 8;
  cfg.prompt_len = 2;
  cfg.task_len = 1;
  FleetSpec spec = small_fleet();
  ParameterStore<double> store;
  Rng rng(9);
  register_tokenizer_params(store, cfg, rng);
  register_fleet_pools(store, spec, cfg, rng);
  SignalWindow w = make_window(spec, 32, 10);

  Tape<double> t1, t2;
  CHECK(tokenize(t1, w, store, spec, cfg).tokens.value() ==
        tokenize(t2, w, store, spec, cfg).tokens.value());

  FleetSpec other = small_fleet();
  other.fleet_id = "unknown";
  Tape<double> t3;
  CHECK_THROWS_AS(tokenize(t3, w, store, other, cfg), ContractError);

  // batches must be homogeneous
  SignalWindow shorter = make_window(spec, 24, 11);
  Tape<double> t4;
  std::vector<const SignalWindow*> batch{&w, &shorter};
  CHECK_THROWS_AS(tokenize_batch(t4, batch, store, spec, cfg), ContractError);
}

TEST_CASE("shapes hold across random configurations") {
  Rng rng(31);
  for (int i = 0; i < 25; ++i) {
    TokenizerConfig cfg;
    cfg.patch_len = 2 + rng.integer(14);
    cfg.stride = 1 + rng.integer(cfg.patch_len);
    cfg.model_dim = 4 + rng.integer(12);
    cfg.prompt_len = 1 + rng.integer(4);
    cfg.task_len = 1 + rng.integer(2);
    FleetSpec spec = small_fleet();
    const size_t L = cfg.patch_len + rng.integer(48);
    ParameterStore<double> store;
    Rng prng(100 + i);
    register_tokenizer_params(store, cfg, prng);
    register_fleet_pools(store, spec, cfg, prng);
    SignalWindow w = make_window(spec, L, 200 + i);
    Tape<double> tape;
    TokenSequence<double> seq = tokenize(tape, w, store, spec, cfg);
    const size_t P = patch_count(L, cfg.patch_len, cfg.stride);
    INFO("L=" << L << " pl=" << cfg.patch_len << " S=" << cfg.stride);
    CHECK(seq.tokens.shape() ==
          Shape{spec.num_channels, cfg.prompt_len + P + 2 + cfg.task_len, cfg.model_dim});
  }
}

}  // TEST_SUITE
