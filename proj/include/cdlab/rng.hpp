#pragma once

#include <cstdint>
#include <string_view>

namespace cdlab {

// SplitMix64 finalizer; used to expand and mix seeds.
std::uint64_t mix64(std::uint64_t x) noexcept;

// Derives an independent stream seed from a root seed and a purpose. All
// module streams come from here so no global RNG state exists.
std::uint64_t derive_seed(std::uint64_t root, std::string_view module, std::string_view purpose) noexcept;
// Counter-style derivation: stream `index` of `root` (chunks, points, trials).
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t index) noexcept;

// xoshiro256** generator with portable uniform/normal transforms, so draws
// are bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept;

  std::uint64_t next() noexcept;
  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller.
  double normal() noexcept;
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) noexcept;

 private:
  std::uint64_t s_[4];
};

}  // namespace cdlab
