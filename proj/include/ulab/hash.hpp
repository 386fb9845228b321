#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace ulab {

// Incremental FNV-1a (64-bit). Used for checkpoint checksums, corpus ids and
// config hashes; stable across platforms and runs.
class Fnv1a {
 public:
  void update(const void* bytes, size_t n) {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ull;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  void update(std::span<const uint8_t> s) { update(s.data(), s.size()); }
  uint64_t digest() const { return state_; }

 private:
  uint64_t state_ = 0xcbf29ce484222325ull;
};

inline uint64_t fnv1a64(const void* bytes, size_t n) {
  Fnv1a h;
  h.update(bytes, n);
  return h.digest();
}

inline uint64_t fnv1a64(std::string_view s) { return fnv1a64(s.data(), s.size()); }

inline std::string hex16(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace ulab
