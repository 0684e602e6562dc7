#include <doctest.h>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "fsgpt/checkpoint.hpp"
#include "fsgpt/model.hpp"

using namespace fsgpt;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void spill(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  REQUIRE(bool(out));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void patch_u32(std::string& bytes, size_t offset, uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes[offset + i] = static_cast<char>((v >> (8 * i)) & 0xFF);
}

// rewrite the trailing CRC so structural edits stay "authentic"
void reseal(std::string& bytes) {
  patch_u32(bytes, bytes.size() - 4, crc32_ieee(bytes.data(), bytes.size() - 4));
}

ParameterStore<double> sample_store(uint64_t seed) {
  ParameterStore<double> store;
  Rng rng(seed);
  store.add_gaussian("alpha.w", {3, 4}, 0.5, rng);
  store.add_gaussian("alpha.b", {4}, 0.5, rng);
  store.add_gaussian("beta.w", {2, 2, 2}, 0.5, rng);
  return store;
}

struct Cleanup {
  std::vector<std::string> paths;
  ~Cleanup() {
    for (const auto& p : paths) std::remove(p.c_str());
  }
};

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("save and load round trip preserves params, moments, and header") {
  Cleanup files{{"ckpt_rt.bin"}};
  ParameterStore<double> store = sample_store(3);

  Adam<double> opt;
  opt.restore("alpha.w", std::vector<double>(12, 0.25), std::vector<double>(12, 0.0625));
  opt.restore("beta.w", std::vector<double>(8, -1.5), std::vector<double>(8, 2.25));
  opt.set_steps(42);

  const std::string cfg = "model.dim=8\nmodel.layers=1\n";
  save_checkpoint("ckpt_rt.bin", store, &opt, cfg, 1234, 42);

  LoadedCheckpoint<double> back = load_checkpoint<double>("ckpt_rt.bin");
  CHECK(back.config_text == cfg);
  CHECK(back.seed == 1234);
  CHECK(back.step == 42);
  CHECK(back.has_optimizer_state());

  REQUIRE(back.store.size() == store.size());
  for (size_t i = 0; i < store.size(); ++i) {
    CHECK(back.store.names()[i] == store.names()[i]);  // file order == insertion order
    const Tensor<double>& a = store.at(i);
    const Tensor<double>& b = back.store.at(i);
    REQUIRE(a.shape() == b.shape());
    for (size_t j = 0; j < a.numel(); ++j) CHECK(a.value()[j] == b.value()[j]);
  }
  CHECK(back.adam_m.at("alpha.w") == std::vector<double>(12, 0.25));
  CHECK(back.adam_v.at("alpha.w") == std::vector<double>(12, 0.0625));
  CHECK(back.adam_m.at("beta.w") == std::vector<double>(8, -1.5));
  CHECK(back.adam_v.at("beta.w") == std::vector<double>(8, 2.25));
  CHECK(back.adam_m.count("alpha.b") == 0);  // never stepped, never saved

  CheckpointHeader h = peek_checkpoint("ckpt_rt.bin");
  CHECK(h.config_text == cfg);
  CHECK(h.seed == 1234);
  CHECK(h.step == 42);
}

TEST_CASE("saving without an optimizer leaves the state table empty") {
  Cleanup files{{"ckpt_plain.bin"}};
  ParameterStore<double> store = sample_store(5);
  save_checkpoint<double>("ckpt_plain.bin", store, nullptr, "", 9, 0);
  LoadedCheckpoint<double> back = load_checkpoint<double>("ckpt_plain.bin");
  CHECK_FALSE(back.has_optimizer_state());
  CHECK(back.config_text.empty());
  CHECK(back.store.size() == 3);
}

TEST_CASE("repeated saves and save-after-load are bitwise identical") {
  Cleanup files{{"ckpt_a.bin", "ckpt_b.bin", "ckpt_c.bin"}};
  ParameterStore<double> store = sample_store(7);
  Adam<double> opt;
  opt.restore("alpha.b", std::vector<double>(4, 0.5), std::vector<double>(4, 0.25));
  save_checkpoint("ckpt_a.bin", store, &opt, "k=v\n", 11, 3);
  save_checkpoint("ckpt_b.bin", store, &opt, "k=v\n", 11, 3);
  CHECK(slurp("ckpt_a.bin") == slurp("ckpt_b.bin"));

  LoadedCheckpoint<double> back = load_checkpoint<double>("ckpt_a.bin");
  Adam<double> opt2;
  for (const auto& [name, m] : back.adam_m) opt2.restore(name, m, back.adam_v.at(name));
  save_checkpoint("ckpt_c.bin", back.store, &opt2, back.config_text, back.seed, back.step);
  CHECK(slurp("ckpt_c.bin") == slurp("ckpt_a.bin"));
}

TEST_CASE("restored parameters reproduce a forward pass bitwise") {
  Cleanup files{{"ckpt_fwd.bin"}};
  ModelConfig cfg;
  cfg.num_layers = 1;
  cfg.model_dim = 8;
  cfg.ffn_hidden = 16;
  cfg.num_heads = 2;
  TokenizerConfig tok;
  tok.patch_len = 4;
  tok.model_dim = 8;

  auto build = [&](uint64_t seed) {
    ParameterStore<double> s;
    Rng rng(seed);
    register_model_params(s, cfg, tok, 5, rng);
    return s;
  };
  Rng xr(13);
  std::vector<double> xv(2 * 5 * 8);
  for (auto& v : xv) v = xr.normal(0.0, 1.0);

  auto forward = [&](ParameterStore<double>& s) {
    Tape<double> tape;
    tape.recording = false;
    return backbone_forward(tape, s, cfg, Tensor<double>::from({1, 2, 5, 8}, xv));
  };

  ParameterStore<double> original = build(17);
  Tensor<double> want = forward(original);
  save_checkpoint<double>("ckpt_fwd.bin", original, nullptr, "", 17, 0);

  // differently-initialized store disagrees until the saved values land in it
  ParameterStore<double> other = build(19);
  Tensor<double> before = forward(other);
  bool differs = false;
  for (size_t i = 0; i < want.numel() && !differs; ++i) {
    differs = before.value()[i] != want.value()[i];
  }
  CHECK(differs);

  LoadedCheckpoint<double> back = load_checkpoint<double>("ckpt_fwd.bin");
  for (size_t i = 0; i < back.store.size(); ++i) {
    Tensor<double>& dst = other.get(back.store.names()[i]);
    REQUIRE(dst.shape() == back.store.at(i).shape());
    dst.value() = back.store.at(i).value();
  }
  Tensor<double> after = forward(other);
  for (size_t i = 0; i < want.numel(); ++i) CHECK(after.value()[i] == want.value()[i]);
}

TEST_CASE("any flipped byte past the magic is caught by the checksum") {
  Cleanup files{{"ckpt_flip.bin", "ckpt_flip_mut.bin"}};
  save_checkpoint<double>("ckpt_flip.bin", sample_store(23), nullptr, "cfg\n", 1, 2);
  const std::string good = slurp("ckpt_flip.bin");

  for (size_t pos : {size_t{6}, size_t{10}, good.size() / 3, good.size() / 2, good.size() - 1}) {
    std::string bad = good;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x20);
    spill("ckpt_flip_mut.bin", bad);
    INFO("flipped byte " << pos << " of " << good.size());
    CHECK_THROWS_AS(load_checkpoint<double>("ckpt_flip_mut.bin"), CorruptError);
    CHECK_THROWS_AS(peek_checkpoint("ckpt_flip_mut.bin"), CorruptError);
  }
}

TEST_CASE("bad magic and truncation are structural errors") {
  Cleanup files{{"ckpt_tr.bin", "ckpt_tr_mut.bin"}};
  save_checkpoint<double>("ckpt_tr.bin", sample_store(29), nullptr, "", 1, 0);
  const std::string good = slurp("ckpt_tr.bin");

  std::string wrong = good;
  wrong[0] = 'X';
  spill("ckpt_tr_mut.bin", wrong);
  CHECK_THROWS_AS(load_checkpoint<double>("ckpt_tr_mut.bin"), FormatError);
  CHECK_THROWS_AS(peek_checkpoint("ckpt_tr_mut.bin"), FormatError);

  spill("ckpt_tr_mut.bin", good.substr(0, 10));  // shorter than any valid header
  CHECK_THROWS_AS(load_checkpoint<double>("ckpt_tr_mut.bin"), FormatError);

  spill("ckpt_tr_mut.bin", good.substr(0, good.size() - 1));  // lost a tail byte
  CHECK_THROWS_AS(load_checkpoint<double>("ckpt_tr_mut.bin"), CorruptError);

  CHECK_THROWS_AS(load_checkpoint<double>("no_such_file.bin"), ContractError);
}

TEST_CASE("future versions are rejected, not misread") {
  Cleanup files{{"ckpt_ver.bin", "ckpt_ver_mut.bin"}};
  save_checkpoint<double>("ckpt_ver.bin", sample_store(31), nullptr, "", 1, 0);
  std::string bumped = slurp("ckpt_ver.bin");
  patch_u32(bumped, 6, kCheckpointVersion + 1);  // version sits right after the magic
  reseal(bumped);
  spill("ckpt_ver_mut.bin", bumped);
  CHECK_THROWS_AS(load_checkpoint<double>("ckpt_ver_mut.bin"), VersionError);
  CHECK_THROWS_AS(peek_checkpoint("ckpt_ver_mut.bin"), VersionError);
}

TEST_CASE("element type is tagged and enforced") {
  Cleanup files{{"ckpt_f64.bin", "ckpt_f32.bin"}};
  save_checkpoint<double>("ckpt_f64.bin", sample_store(37), nullptr, "p=f64\n", 1, 0);
  CHECK_THROWS_AS(load_checkpoint<float>("ckpt_f64.bin"), FormatError);

  ParameterStore<float> fstore;
  Rng rng(41);
  fstore.add_gaussian("gamma", {4}, 0.5f, rng);
  save_checkpoint<float>("ckpt_f32.bin", fstore, nullptr, "p=f32\n", 2, 5);
  CHECK_THROWS_AS(load_checkpoint<double>("ckpt_f32.bin"), FormatError);

  // the untyped peek works on either file
  CHECK(peek_checkpoint("ckpt_f64.bin").config_text == "p=f64\n");
  CHECK(peek_checkpoint("ckpt_f32.bin").config_text == "p=f32\n");
  LoadedCheckpoint<float> back = load_checkpoint<float>("ckpt_f32.bin");
  CHECK(back.store.get("gamma").numel() == 4);
}

}  // TEST_SUITE("checkpoint")
