#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fsgpt/gradcheck.hpp"
#include "fsgpt/tensor.hpp"

using namespace fsgpt;

TEST_SUITE("tensor") {

TEST_CASE("factories validate shapes") {
  CHECK_THROWS_AS(Tensor<double>::zeros({}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>::zeros({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor<double>::from({2, 2}, {1.0, 2.0}), ShapeError);
  Tensor<double> t = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.numel() == 6);
  CHECK(t.extent(1) == 3);
  CHECK(Tensor<double>::full({1}, 2.0).item() == 2.0);
  CHECK_THROWS_AS(t.item(), ContractError);
}

TEST_CASE("grad lifecycle") {
  Tensor<double> x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  CHECK(!x.has_grad());
  CHECK_THROWS_AS(x.grad(), ContractError);
  Tape<double> tape;
  Tensor<double> y = tape.mean(x);
  tape.backward(y);
  CHECK(x.has_grad());
  CHECK(x.grad()[0] == doctest::Approx(0.5));
  x.zero_grad();
  CHECK(!x.has_grad());
}

TEST_CASE("matmul matches a hand-rolled loop") {
  Rng rng(3);
  std::vector<double> av(2 * 3 * 4), bv(4 * 5);
  for (auto& v : av) v = rng.normal();
  for (auto& v : bv) v = rng.normal();
  Tensor<double> a = Tensor<double>::from({2, 3, 4}, av);
  Tensor<double> b = Tensor<double>::from({4, 5}, bv);
  Tape<double> tape;
  Tensor<double> c = tape.matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 5});
  for (size_t g = 0; g < 2; ++g) {
    for (size_t i = 0; i < 3; ++i) {
      for (size_t j = 0; j < 5; ++j) {
        double want = 0;
        for (size_t k = 0; k < 4; ++k) want += av[(g * 3 + i) * 4 + k] * bv[k * 5 + j];
        CHECK(c.value()[(g * 3 + i) * 5 + j] == doctest::Approx(want).epsilon(1e-12));
      }
    }
  }
  CHECK(tape.matmul_multiplies() == 2 * 3 * 4 * 5);
  CHECK_THROWS_AS(tape.matmul(a, Tensor<double>::zeros({3, 5})), ShapeError);
}

TEST_CASE("linear equals matmul plus bias and counts rows*k*n") {
  Rng rng(4);
  std::vector<double> xv(6 * 3), wv(3 * 2), bv(2);
  for (auto& v : xv) v = rng.normal();
  for (auto& v : wv) v = rng.normal();
  for (auto& v : bv) v = rng.normal();
  Tensor<double> x = Tensor<double>::from({2, 3, 3}, xv);
  Tensor<double> w = Tensor<double>::from({3, 2}, wv);
  Tensor<double> b = Tensor<double>::from({2}, bv);
  Tape<double> tape;
  Tensor<double> y = tape.linear(x, w, b);
  REQUIRE(y.shape() == Shape{2, 3, 2});
  for (size_t r = 0; r < 6; ++r) {
    for (size_t j = 0; j < 2; ++j) {
      double want = bv[j];
      for (size_t k = 0; k < 3; ++k) want += xv[r * 3 + k] * wv[k * 2 + j];
      CHECK(y.value()[r * 2 + j] == doctest::Approx(want).epsilon(1e-12));
    }
  }
  CHECK(tape.matmul_multiplies() == 6 * 3 * 2);
}

TEST_CASE("softmax rows are normalized and match a naive computation") {
  Rng rng(5);
  std::vector<double> xv(3 * 4);
  for (auto& v : xv) v = rng.normal() * 3;
  Tensor<double> x = Tensor<double>::from({3, 4}, xv);
  Tape<double> tape;
  Tensor<double> y = tape.softmax_lastdim(x);
  for (size_t r = 0; r < 3; ++r) {
    double maxv = *std::max_element(xv.begin() + r * 4, xv.begin() + (r + 1) * 4);
    double denom = 0;
    for (size_t j = 0; j < 4; ++j) denom += std::exp(xv[r * 4 + j] - maxv);
    double sum = 0;
    for (size_t j = 0; j < 4; ++j) {
      double want = std::exp(xv[r * 4 + j] - maxv) / denom;
      CHECK(y.value()[r * 4 + j] == doctest::Approx(want).epsilon(1e-12));
      sum += y.value()[r * 4 + j];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("layer_norm standardizes with population variance") {
  Rng rng(6);
  std::vector<double> xv(2 * 5);
  for (auto& v : xv) v = rng.normal() * 2 + 1;
  Tensor<double> x = Tensor<double>::from({2, 5}, xv);
  Tensor<double> g = Tensor<double>::full({5}, 1.0);
  Tensor<double> b = Tensor<double>::zeros({5});
  Tape<double> tape;
  Tensor<double> y = tape.layer_norm(x, g, b, 0.0);
  for (size_t r = 0; r < 2; ++r) {
    double mean = 0, var = 0;
    for (size_t j = 0; j < 5; ++j) mean += y.value()[r * 5 + j];
    mean /= 5;
    for (size_t j = 0; j < 5; ++j) {
      double d = y.value()[r * 5 + j] - mean;
      var += d * d;
    }
    var /= 5;
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
    CHECK(var == doctest::Approx(1.0).epsilon(1e-10));
  }
}

TEST_CASE("pointwise op values") {
  Tape<double> tape;
  Tensor<double> z = Tensor<double>::from({1}, {0.0});
  CHECK(tape.sigmoid(z).item() == doctest::Approx(0.5));
  CHECK(tape.gelu(z).item() == doctest::Approx(0.0));
  // reference value computed from 0.5*x*(1+tanh(sqrt(2/pi)*(x+0.044715 x^3)))
  Tensor<double> one = Tensor<double>::from({1}, {1.0});
  const double k = std::sqrt(2.0 / 3.14159265358979323846);
  const double want = 0.5 * (1.0 + std::tanh(k * (1.0 + 0.044715)));
  CHECK(tape.gelu(one).item() == doctest::Approx(want).epsilon(1e-12));
  Tensor<double> big = Tensor<double>::from({2}, {40.0, -40.0});
  auto s = tape.sigmoid(big).value();
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(s[1] == doctest::Approx(0.0));
  CHECK(std::isfinite(s[1]));
}

TEST_CASE("sum, mean, and mse accumulate in double") {
  std::vector<double> xv(1000);
  Rng rng(7);
  for (auto& v : xv) v = rng.normal();
  Tensor<double> x = Tensor<double>::from({10, 100}, xv);
  Tape<double> tape;
  const double want_sum = std::accumulate(xv.begin(), xv.end(), 0.0);
  CHECK(tape.sum(x).item() == doctest::Approx(want_sum).epsilon(1e-12));
  CHECK(tape.mean(x).item() == doctest::Approx(want_sum / 1000).epsilon(1e-12));
  Tensor<double> y = Tensor<double>::zeros({10, 100});
  double want_mse = 0;
  for (double v : xv) want_mse += v * v;
  CHECK(tape.mse(x, y).item() == doctest::Approx(want_mse / 1000).epsilon(1e-12));
}

TEST_CASE("concat and slice round trip") {
  Tensor<double> a = Tensor<double>::from({2, 2, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  Tensor<double> b = Tensor<double>::from({2, 1, 3}, {13, 14, 15, 16, 17, 18});
  Tape<double> tape;
  Tensor<double> c = tape.concat({a, b}, 1);
  REQUIRE(c.shape() == Shape{2, 3, 3});
  CHECK(c.value()[6] == 13);   // batch 0, row 2
  CHECK(c.value()[15] == 16);  // batch 1, row 2
  Tensor<double> back = tape.slice(c, {0, 2, 0}, {2, 1, 3});
  CHECK(back.value() == b.value());
  CHECK_THROWS_AS(tape.slice(c, {0, 2, 0}, {2, 2, 3}), ShapeError);
  CHECK_THROWS_AS(tape.concat({a, Tensor<double>::zeros({2, 1, 4})}, 1), ShapeError);
}

TEST_CASE("transpose permutes strides correctly") {
  std::vector<double> xv(2 * 3 * 4);
  std::iota(xv.begin(), xv.end(), 0.0);
  Tensor<double> x = Tensor<double>::from({2, 3, 4}, xv);
  Tape<double> tape;
  Tensor<double> y = tape.transpose(x, {2, 0, 1});
  REQUIRE(y.shape() == Shape{4, 2, 3});
  for (size_t i = 0; i < 2; ++i) {
    for (size_t j = 0; j < 3; ++j) {
      for (size_t k = 0; k < 4; ++k) {
        CHECK(y.value()[(k * 2 + i) * 3 + j] == xv[(i * 3 + j) * 4 + k]);
      }
    }
  }
  CHECK_THROWS_AS(tape.transpose(x, {0, 0, 1}), ShapeError);
}

TEST_CASE("reshape, broadcast_leading, index_select") {
  Tensor<double> x = Tensor<double>::from({2, 6}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  Tape<double> tape;
  Tensor<double> r = tape.reshape(x, {3, 4});
  CHECK(r.value() == x.value());
  CHECK_THROWS_AS(tape.reshape(x, {5, 2}), ShapeError);

  Tensor<double> s = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  Tensor<double> b = tape.broadcast_leading(s, {3});
  REQUIRE(b.shape() == Shape{3, 2, 2});
  for (size_t i = 0; i < 3; ++i) {
    CHECK(std::equal(s.value().begin(), s.value().end(), b.value().begin() + i * 4));
  }

  Tensor<double> g = tape.index_select(x, 1, {5, 0, 5});
  REQUIRE(g.shape() == Shape{2, 3});
  CHECK(g.value() == std::vector<double>{5, 0, 5, 11, 6, 11});
  CHECK_THROWS_AS(tape.index_select(x, 1, {6}), ShapeError);
}

TEST_CASE("masked_select keeps order and rejects empty selections") {
  Tensor<double> x = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tape<double> tape;
  Tensor<double> y = tape.masked_select(x, {1, 0, 0, 1, 1, 0});
  CHECK(y.value() == std::vector<double>{1, 4, 5});
  CHECK_THROWS_AS(tape.masked_select(x, {0, 0, 0, 0, 0, 0}), ContractError);
  CHECK_THROWS_AS(tape.masked_select(x, {1, 0}), ShapeError);
}

TEST_CASE("overlap_add averages covered samples and zeroes the rest") {
  // two patches of length 4 at stride 2: positions 2,3 are covered twice
  Tensor<double> x = Tensor<double>::from({1, 1, 2, 4}, {1, 1, 1, 1, 3, 3, 3, 3});
  Tape<double> tape;
  Tensor<double> y = tape.overlap_add(x, 2);
  REQUIRE(y.shape() == Shape{1, 1, 6});
  CHECK(y.value() == std::vector<double>{1, 1, 2, 2, 3, 3});
  // disjoint patches at stride == patch_len reproduce the concatenation
  Tensor<double> z = tape.overlap_add(x, 4);
  REQUIRE(z.shape() == Shape{1, 1, 8});
  CHECK(z.value() == std::vector<double>{1, 1, 1, 1, 3, 3, 3, 3});
}

TEST_CASE("dropout is inverted and seed-stable") {
  Tensor<double> x = Tensor<double>::full({100}, 1.0);
  Tape<double> tape;
  Rng r1(9), r2(9);
  Tensor<double> a = tape.dropout(x, 0.5, r1);
  Tensor<double> b = tape.dropout(x, 0.5, r2);
  CHECK(a.value() == b.value());
  size_t kept = 0;
  for (double v : a.value()) {
    CHECK((v == 0.0 || v == doctest::Approx(2.0)));
    kept += v != 0.0;
  }
  CHECK(kept > 20);
  CHECK(kept < 80);
  Rng r3(9);
  Tensor<double> c = tape.dropout(x, 0.0, r3);
  CHECK(c.value() == x.value());
}

TEST_CASE("backward accumulates over reused tensors") {
  Tensor<double> x = Tensor<double>::from({2}, {3.0, 4.0}, true);
  Tape<double> tape;
  Tensor<double> y = tape.sum(tape.add(x, x));
  tape.backward(y);
  CHECK(x.grad() == std::vector<double>{2.0, 2.0});
}

TEST_CASE("backward contract errors") {
  Tensor<double> x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  Tape<double> tape;
  Tensor<double> y = tape.add(x, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);  // not scalar
  Tape<double> empty;
  Tensor<double> c = Tensor<double>::full({1}, 1.0);
  CHECK_THROWS_AS(empty.backward(c), ContractError);  // nothing recorded
}

TEST_CASE("recording off leaves the tape empty") {
  Tensor<double> x = Tensor<double>::from({2}, {1.0, 2.0}, true);
  Tape<double> tape;
  tape.recording = false;
  Tensor<double> y = tape.mean(x);
  CHECK(y.item() == doctest::Approx(1.5));
  CHECK(tape.nodes().empty());
}

TEST_CASE("validate_finite rejects non-finite op results") {
  Tensor<double> x = Tensor<double>::from({1}, {1e308});
  Tape<double> tape;
  tape.validate_finite = true;
  CHECK_THROWS_AS(tape.add(x, x), ContractError);
}

TEST_CASE("finite_diff_grad restores the probed tensor") {
  Tensor<double> x = Tensor<double>::from({3}, {1.0, 2.0, 3.0});
  const std::vector<double> before = x.value();
  auto f = [&]() { return x.value()[0] * x.value()[0] + 2 * x.value()[1]; };
  auto g = finite_diff_grad<double>(f, x, 1e-6);
  CHECK(g[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(g[1] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(g[2] == doctest::Approx(0.0));
  CHECK(x.value() == before);
}

TEST_CASE("every op's gradient matches central differences") {
  for (const auto& entry : run_op_gradchecks(21)) {
    INFO(entry.name);
    CHECK(entry.elements > 0);
    CHECK(entry.max_err <= 1e-4);
  }
}

}  // TEST_SUITE
