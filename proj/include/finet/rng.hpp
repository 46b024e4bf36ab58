#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace finet {

// Deterministic RNG used everywhere instead of std distributions, whose
// output differs between standard library implementations. Normal draws
// use Box-Muller so the stream is reproducible bit for bit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  int uniform_int(int n) { return static_cast<int>(uniform() * n); }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

// Derives an independent stream from a base seed and up to two indices
// (e.g. step and sample position), so parallel draws never alias.
inline Rng derive_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t h = detail::splitmix64(seed);
  h = detail::splitmix64(h ^ detail::splitmix64(a + 0x100000001b3ULL));
  h = detail::splitmix64(h ^ detail::splitmix64(b + 0xcbf29ce484222325ULL));
  return Rng(h);
}

}  // namespace finet
