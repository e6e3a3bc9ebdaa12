#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedunlearn {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for a (seed, tag...) coordinate. Adding a new
/// coordinate never shifts the draws of existing ones.
inline std::mt19937_64 derived_stream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64(seed);
  for (std::uint64_t t : tags) h = splitmix64(h ^ splitmix64(t));
  return std::mt19937_64(h);
}

}  // namespace fedunlearn
