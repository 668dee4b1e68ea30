#include "acvi/rng.hpp"

#include <cmath>

#include "acvi/errors.hpp"

namespace acvi {

namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

// splitmix64 finalizer; full avalanche on 64 bits.
std::uint64_t mix64(std::uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t combine(std::uint64_t seed, std::uint64_t s, std::uint64_t a,
                      std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ s);
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  h = mix64(h ^ c);
  return h;
}

// Map 64 bits to (0, 1): 53-bit mantissa shifted by half an ulp so the
// endpoints are unreachable (log(u) and log(1-u) stay finite).
double to_open_unit(std::uint64_t x) {
  return (static_cast<double>(x >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

std::uint64_t NoiseSource::bits(Stream s, std::uint64_t a, std::uint64_t b,
                                std::uint64_t c) const {
  return combine(seed_, static_cast<std::uint64_t>(s), a, b, c);
}

double NoiseSource::uniform(Stream s, std::uint64_t a, std::uint64_t b,
                            std::uint64_t c) const {
  return to_open_unit(bits(s, a, b, c));
}

double NoiseSource::gaussian(Stream s, std::uint64_t a, std::uint64_t b,
                             std::uint64_t c) const {
  // Two lanes derived from the same address.
  const double u1 = to_open_unit(combine(seed_, static_cast<std::uint64_t>(s),
                                         a, b, c * 2 + 1));
  const double u2 = to_open_unit(combine(seed_, static_cast<std::uint64_t>(s),
                                         a, b, c * 2 + 2));
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * 3.14159265358979323846 * u2);
}

double NoiseSource::gumbel(Stream s, std::uint64_t a, std::uint64_t b,
                           std::uint64_t c) const {
  return -std::log(-std::log(uniform(s, a, b, c)));
}

std::uint64_t NoiseSource::uniform_int(std::uint64_t n, Stream s,
                                       std::uint64_t a, std::uint64_t b,
                                       std::uint64_t c) const {
  if (n == 0) throw DomainError("uniform_int: n must be positive");
  // Fixed-point multiply; bias is < 2^-64 per draw and fully deterministic.
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(bits(s, a, b, c)) * n) >> 64);
}

}  // namespace acvi
