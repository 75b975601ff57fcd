#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace uatmc {

using Rng = std::mt19937_64;

// Splits one root seed into independent per-component streams.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view tag) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = root + 0x9E3779B97F4A7C15ULL * (h | 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t root, std::string_view tag) { return Rng(derive_seed(root, tag)); }

}  // namespace uatmc
