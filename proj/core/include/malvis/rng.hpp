#pragma once

#include <cstdint>
#include <vector>

namespace malvis {

// SplitMix64. This generator is part of the reproducibility contract and is
// fixed forever: splits, shuffles and parameter initialization derived from a
// seed must stay identical across releases and across reimplementations.
//
//   next():      state += 0x9E3779B97F4A7C15
//                z = state
//                z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//                z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//                return z ^ (z >> 31)
//   next_unit(): (next() >> 11) * 2^-53, a double in [0, 1)
//   next_below(n): next() % n
//   shuffle:     Fisher-Yates, i from n-1 down to 1, swap(v[i], v[next_below(i+1)])
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double next_unit() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double next_range(double lo, double hi) {
    return lo + (hi - lo) * next_unit();
  }

  std::uint64_t next_below(std::uint64_t n) { return next() % n; }

  template <typename T>
  void shuffle(std::vector<T>& values) {
    if (values.size() < 2) return;
    for (std::size_t i = values.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(next_below(i + 1));
      std::swap(values[i], values[j]);
    }
  }

 private:
  std::uint64_t state_;
};

// Derives an independent seed for stream `stream` of a base seed (one shuffle
// per epoch, one init stream per layer, ...). Also fixed forever.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  SplitMix64 g(seed ^ (0x9E3779B97F4A7C15ULL * (stream + 0x632BE59BD9B4E019ULL)));
  return g.next();
}

}  // namespace malvis
