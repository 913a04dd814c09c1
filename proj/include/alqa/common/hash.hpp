#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace alqa {

// Stable 64-bit FNV-1a; used for content hashes persisted to disk.
constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

constexpr std::uint64_t fnv1a(std::string_view data, std::uint64_t h = kFnvOffset) {
  for (unsigned char c : data) {
    h ^= c;
    h *= kFnvPrime;
  }
  return h;
}

inline std::uint64_t fnv1a_bytes(std::span<const std::byte> data, std::uint64_t h = kFnvOffset) {
  for (std::byte b : data) {
    h ^= static_cast<unsigned char>(b);
    h *= kFnvPrime;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Independent stream seed for (base, entity, index), e.g. one dropout pass of one candidate.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view entity, std::uint64_t index) {
  return splitmix64(splitmix64(base ^ fnv1a(entity)) + index);
}

std::string to_hex(std::uint64_t value);

}  // namespace alqa
