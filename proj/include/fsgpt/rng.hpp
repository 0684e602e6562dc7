#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "fsgpt/common.hpp"

namespace fsgpt {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Every stochastic source in a run pulls from a stream derived from one
// master seed and a purpose tag, so a single --seed pins the whole run.
inline uint64_t derive_seed(uint64_t master, std::string_view tag) {
  return splitmix64(master ^ fnv1a64(tag));
}

// mt19937_64 with hand-rolled float/normal/int draws. The std distribution
// objects are implementation-defined, which would tie reproducibility to one
// libstdc++ version; these draws are pinned by construction.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  // [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(gen_() >> 11) * kInv53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller with cached spare
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // [0, n), unbiased via rejection
  uint64_t integer(uint64_t n) {
    if (n == 0) throw ContractError("Rng::integer: n must be positive");
    uint64_t limit = (UINT64_MAX / n) * n;
    uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return x % n;
  }

  template <typename V>
  void shuffle(V& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(integer(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct indices out of [0, n), in shuffled order
  std::vector<size_t> sample_indices(size_t n, size_t k) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    shuffle(idx);
    idx.resize(k < n ? k : n);
    return idx;
  }

 private:
  static constexpr double kInv53 = 1.0 / 9007199254740992.0;  // 2^-53
  static constexpr double kPi = 3.14159265358979323846;
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fsgpt
