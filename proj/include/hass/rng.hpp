#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace hass {

// Deterministic splitmix64 stream. Named sub-streams derived from one seed
// keep the random draws of independent components (init, shuffle, synth)
// from contaminating each other.
// Deterministic sub-seed for a named component.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream_name);

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  static RngStream derive(std::uint64_t seed, std::string_view stream_name);

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 bits of mantissa.
  double uniform01();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller; pairs are cached.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  std::size_t index(std::size_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace hass
