#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace tskd {

inline constexpr std::uint64_t kDefaultSeed = 1234;

/// splitmix64 finalizer; used to derive independent sub-seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a over a byte string.
constexpr std::uint64_t fnv1a(std::string_view s,
                              std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Root of all randomness for one run. Each purpose ("data_order",
/// "augment", "init", ...) gets its own stream so that adding draws to one
/// purpose never shifts another.
class SeedStream {
 public:
  explicit SeedStream(std::uint64_t root) : root_(root) {}

  std::uint64_t root() const noexcept { return root_; }

  std::uint64_t derive(std::string_view purpose, std::uint64_t index = 0) const noexcept {
    return mix64(root_ ^ mix64(fnv1a(purpose) + index));
  }

  std::mt19937_64 engine(std::string_view purpose, std::uint64_t index = 0) const {
    return std::mt19937_64(derive(purpose, index));
  }

 private:
  std::uint64_t root_;
};

/// Portable Fisher-Yates; std::shuffle's draw pattern is library-defined.
template <typename T>
void deterministic_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

/// Uniform double in [0,1) from the top 53 bits.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * uniform01(rng);
}

}  // namespace tskd
