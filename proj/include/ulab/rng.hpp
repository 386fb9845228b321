#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "ulab/hash.hpp"

namespace ulab {

// mt19937_64 with hand-rolled distributions. std::normal_distribution and
// std::shuffle are implementation-defined, which would break bit-identical
// runs across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // unbiased enough for sampling at this scale: multiply-shift bound
  uint64_t bounded(uint64_t n) {
    if (n == 0) return 0;
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  double uniform() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);  // 53 bits
  }

  float normal(float mean, float stddev) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 6.283185307179586 * u2;
    spare_ = static_cast<float>(r * std::sin(a));
    have_spare_ = true;
    return mean + stddev * static_cast<float>(r * std::cos(a));
  }

  // Derive a child seed from a parent seed and a label, so independent
  // sampling streams never alias.
  static uint64_t derive(uint64_t seed, std::string_view label) {
    Fnv1a h;
    h.update(&seed, sizeof(seed));
    h.update(label);
    return h.digest();
  }
  static uint64_t derive(uint64_t seed, uint64_t index) {
    Fnv1a h;
    h.update(&seed, sizeof(seed));
    h.update(&index, sizeof(index));
    return h.digest();
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  float spare_ = 0.0f;
};

// Fisher-Yates with the multiply-shift bound; deterministic everywhere.
template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    size_t j = static_cast<size_t>(rng.bounded(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace ulab
