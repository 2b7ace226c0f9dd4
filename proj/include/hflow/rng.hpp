#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hflow {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// One independent random stream. Each Monte Carlo replica owns exactly one.
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::uint64_t bits() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Split function: stream seed for (root, purpose, replica). Pure, so any
/// replica can be regenerated in isolation from the root seed alone.
inline constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                                           std::uint64_t replica) noexcept {
  return splitmix64(splitmix64(root ^ fnv1a64(purpose)) + splitmix64(replica + 1));
}

inline Stream derive_stream(std::uint64_t root, std::string_view purpose, std::uint64_t replica) {
  return Stream(derive_seed(root, purpose, replica));
}

}  // namespace hflow
