#pragma once

#include <cstdint>
#include <cstdio>
#include <span>
#include <string>

#include "metainput/tensor.hpp"

namespace metainput {

// 64-bit FNV-1a. Used for checkpoint integrity and for the frozen-weight
// checks, so it hashes raw bytes (bit patterns), not values.
class Fnv1a {
 public:
  void update(const void* bytes, std::size_t n) noexcept {
    const auto* p = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= p[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  void update(std::span<const float> values) noexcept {
    update(values.data(), values.size_bytes());
  }
  void update(const std::string& s) noexcept { update(s.data(), s.size()); }
  void update_u64(std::uint64_t v) noexcept { update(&v, sizeof v); }

  std::uint64_t digest() const noexcept { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t checksum(std::span<const float> values) noexcept {
  Fnv1a h;
  h.update(values);
  return h.digest();
}

inline std::uint64_t checksum(const Tensor& t) noexcept {
  Fnv1a h;
  for (auto e : t.shape()) h.update_u64(e);
  h.update(t.data());
  return h.digest();
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace metainput
