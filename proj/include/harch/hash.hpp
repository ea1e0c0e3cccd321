#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace harch {

// 64-bit FNV-1a. Stable across platforms, used for cache keys, config and
// template hashes, manifest content hashes and stub-encoder token buckets.
inline std::uint64_t fnv1a64(std::string_view data,
                             std::uint64_t seed = 0xcbf29ce484222325ULL) {
  std::uint64_t h = seed;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(value));
  return buf;
}

inline std::string fnv1a64_hex(std::string_view data) {
  return hex64(fnv1a64(data));
}

}  // namespace harch
