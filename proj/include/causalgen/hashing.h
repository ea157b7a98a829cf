#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace causalgen {

// FNV-1a, 64 bit. Stable across builds; used for provenance hashes.
inline uint64_t fnv1a64(std::string_view data, uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace causalgen
