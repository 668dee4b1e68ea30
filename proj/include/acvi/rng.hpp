#pragma once

#include <cstdint>

namespace acvi {

// Purpose tag for an addressed random stream. Each consumer draws from its
// own stream so that draws never depend on evaluation order.
enum class Stream : std::uint64_t {
  kGaussian = 1,
  kGumbel = 2,
  kCategorical = 3,
  kParamInit = 4,
  kBatch = 5,
  kData = 6,
  kDropout = 7,
};

// Counter-based random source. A draw is a pure function of
// (seed, stream, a, b, c) -- identical addresses give identical values,
// which is what makes training runs resumable and bitwise reproducible.
class NoiseSource {
 public:
  explicit NoiseSource(std::uint64_t seed) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }

  // Raw 64 bits for the address.
  std::uint64_t bits(Stream s, std::uint64_t a, std::uint64_t b = 0,
                     std::uint64_t c = 0) const;

  // Uniform draw strictly inside (0, 1).
  double uniform(Stream s, std::uint64_t a, std::uint64_t b = 0,
                 std::uint64_t c = 0) const;

  // Standard normal via Box-Muller on two decorrelated uniforms.
  double gaussian(Stream s, std::uint64_t a, std::uint64_t b = 0,
                  std::uint64_t c = 0) const;

  // Standard Gumbel: -log(-log u).
  double gumbel(Stream s, std::uint64_t a, std::uint64_t b = 0,
                std::uint64_t c = 0) const;

  // Integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n, Stream s, std::uint64_t a,
                            std::uint64_t b = 0, std::uint64_t c = 0) const;

 private:
  std::uint64_t seed_;
};

}  // namespace acvi
