#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dtg {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Stable sub-seed for (root, purpose, ids...). Every random stream in the
// project is derived through this so runs are reproducible from one seed.
template <typename... Ids>
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                                    Ids... ids) {
  std::uint64_t h = mix64(root ^ hash_string(purpose));
  ((h = mix64(h ^ static_cast<std::uint64_t>(ids))), ...);
  return h;
}

template <typename... Ids>
Rng make_rng(std::uint64_t root, std::string_view purpose, Ids... ids) {
  return Rng(derive_seed(root, purpose, ids...));
}

}  // namespace dtg
