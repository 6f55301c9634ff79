#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <utility>
#include <vector>

namespace mycobow {

/// Portable seeded generator.
///
/// The raw stream is splitmix64: the state advances by 0x9E3779B97F4A7C15 and
/// each output is the state passed through the splitmix64 finalizer. Derived
/// draws are defined on top of that stream so every platform reproduces them:
///
///   uniform()       = ((next() >> 11) + 1) * 2^-53, a value in (0, 1]
///   below(n)        = floor(uniform_open() * n) with uniform_open() = (next() >> 11) * 2^-53
///   normal()        = sqrt(-2 ln u1) * cos(2 pi u2) with u1 = uniform(), u2 = uniform()
///
/// std:: distributions are implementation-defined, so they are not used for
/// anything that has to be reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  double uniform() { return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53; }

  double uniform_open() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  std::size_t below(std::size_t n) {
    auto i = static_cast<std::size_t>(uniform_open() * static_cast<double>(n));
    return i < n ? i : n - 1;
  }

  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Fisher-Yates, walking from the back.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::uint64_t state_;
};

/// Derive an independent sub-seed from a parent seed and a tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t index = 0) {
  std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a over the tag
  for (unsigned char c : tag) {
    h = (h ^ c) * 0x100000001B3ULL;
  }
  Rng mix(seed ^ h ^ (index * 0xD6E8FEB86659FD93ULL));
  mix.next();
  return mix.next();
}

}  // namespace mycobow
