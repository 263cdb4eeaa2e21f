#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace phmix {

using Rng = std::mt19937_64;

/// One round of the splitmix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_label(std::string_view label) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Counter-based stream key: the same (root, labels..., index) always maps to
/// the same seed, independent of evaluation order or thread assignment.
class SeedKey {
 public:
  explicit constexpr SeedKey(std::uint64_t root) : state_(splitmix64(root)) {}

  constexpr SeedKey with(std::string_view label) const {
    return SeedKey(state_, hash_label(label));
  }
  constexpr SeedKey with(std::uint64_t index) const { return SeedKey(state_, splitmix64(index)); }

  constexpr std::uint64_t seed() const { return splitmix64(state_); }
  Rng rng() const { return Rng(seed()); }

 private:
  constexpr SeedKey(std::uint64_t state, std::uint64_t mix)
      : state_(splitmix64(state ^ (mix + 0x632be59bd9b4e019ULL + (state << 6) + (state >> 2)))) {}

  std::uint64_t state_;
};

}  // namespace phmix
