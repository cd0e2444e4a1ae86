#pragma once

#include <cstdint>
#include <string_view>

#include "cgd/error.hpp"

namespace cgd::detail {

// 64-bit FNV-1a. Stable across platforms and runs, unlike std::hash.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// splitmix64 finalizer
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derivation_seed(const Derivation& d) {
  std::uint64_t h = mix64(d.seed);
  h = mix64(h ^ static_cast<std::uint64_t>(d.step));
  h = mix64(h ^ static_cast<std::uint64_t>(d.parent_slot));
  h = mix64(h ^ static_cast<std::uint64_t>(d.sample_slot));
  return h;
}

}  // namespace cgd::detail
