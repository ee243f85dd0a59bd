#pragma once

#include "cdgp/common.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <vector>

namespace cdgp {

// Counter-based stream: the state is (key, counter), so substreams can be
// derived deterministically from a root seed and every draw is reproducible
// after checkpoint resume by re-deriving the same (key, counter) pair.
class Rng {
 public:
  explicit Rng(std::uint64_t key) : key_(key) {}

  static Rng root(std::uint64_t seed) { return Rng(mix(seed ^ kRootSalt)); }

  Rng split(std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) const {
    std::uint64_t k = key_;
    k = mix(k ^ (a + kGolden));
    k = mix(k ^ (b + kSaltB));
    k = mix(k ^ (c + kSaltC));
    return Rng(k);
  }

  Rng split(std::string_view tag, std::uint64_t a = 0, std::uint64_t b = 0) const {
    return split(fnv1a(tag), a, b);
  }

  std::uint64_t next_u64() {
    ++counter_;
    return mix(key_ + counter_ * kGolden);
  }

  // Uniform on (0,1); never 0, safe under log().
  double next_unit() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double next_gaussian() {
    const double u1 = next_unit();
    const double u2 = next_unit();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw InvalidSize("next_below(0)");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  std::uint64_t counter() const { return counter_; }
  std::uint64_t key() const { return key_; }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
  static constexpr std::uint64_t kSaltB = 0xD1B54A32D192ED03ULL;
  static constexpr std::uint64_t kSaltC = 0x8CB92BA72F3D8DD7ULL;
  static constexpr std::uint64_t kRootSalt = 0x6A09E667F3BCC908ULL;

  // splitmix64 finalizer
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// i.i.d. standard normals, filled in row-major order.
inline Mat gaussian_matrix(Rng& rng, Index rows, Index cols) {
  if (rows <= 0 || cols <= 0) throw InvalidSize("gaussian_matrix: empty shape");
  Mat out(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) out(i, j) = rng.next_gaussian();
  return out;
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace cdgp
