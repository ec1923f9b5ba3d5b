#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace cmp {

// splitmix64; used to derive independent stream seeds from (seed, index).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// mt19937_64 core with hand-rolled distributions so that sampled values are
// identical across standard libraries for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : gen_(seed) {}

  std::uint64_t bits() { return gen_(); }

  // uniform in [0, 1)
  double u01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  // uniform integer in [0, n)
  std::uint64_t uniform_int(std::uint64_t n) {
    const std::uint64_t lim = ~std::uint64_t{0} - ~std::uint64_t{0} % n;
    std::uint64_t x = gen_();
    while (x >= lim) x = gen_();
    return x % n;
  }

  // standard normal via Marsaglia polar; second draw cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * u01() - 1.0;
      v = 2.0 * u01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  double normal(double mean, double std) { return mean + std * normal(); }

  Rng fork(std::uint64_t stream) { return Rng(mix_seed(gen_(), stream)); }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace cmp
