#ifndef CBW_RNG_HPP
#define CBW_RNG_HPP

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace cbw {

/// Random stream used everywhere in the library. Each worker owns its own.
using Rng = std::mt19937_64;

/// SplitMix64 finalizer.
inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Order-sensitive hash of a key tuple into a 64-bit seed.
inline constexpr std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

/// FNV-1a, used to fold string tags into seed keys.
inline constexpr std::uint64_t tag_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace cbw

#endif  // CBW_RNG_HPP
