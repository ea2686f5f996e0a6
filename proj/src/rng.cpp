#include "hass/rng.hpp"

#include <cmath>

namespace hass {

namespace {

std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : s) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

constexpr double kTwoPi = 6.283185307179586476925286766559;

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream_name) {
  return mix64(seed) ^ fnv1a64(stream_name);
}

RngStream::RngStream(std::uint64_t seed) : state_(mix64(seed + 0x9E3779B97F4A7C15ULL)) {}

RngStream RngStream::derive(std::uint64_t seed, std::string_view stream_name) {
  return RngStream(derive_seed(seed, stream_name));
}

std::uint64_t RngStream::next_u64() {
  state_ += 0x9E3779B97F4A7C15ULL;
  return mix64(state_);
}

double RngStream::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

double RngStream::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  double u1 = uniform01();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  double u2 = uniform01();
  double r = std::sqrt(-2.0 * std::log(u1));
  cached_ = r * std::sin(kTwoPi * u2);
  has_cached_ = true;
  return r * std::cos(kTwoPi * u2);
}

std::size_t RngStream::index(std::size_t n) {
  return n == 0 ? 0 : static_cast<std::size_t>(next_u64() % n);
}

}  // namespace hass
