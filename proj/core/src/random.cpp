#include "explab/random.hpp"

#include <array>
#include <cmath>

namespace explab {

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fmix64(std::uint64_t k) {
  k ^= k >> 33;
  k *= 0xff51afd7ed558ccdULL;
  k ^= k >> 33;
  k *= 0xc4ceb9fe1a85ec53ULL;
  k ^= k >> 33;
  return k;
}

std::uint64_t salted_hash(std::string_view salt, std::uint64_t id) {
  std::array<char, 8> le{};
  for (std::size_t i = 0; i < le.size(); ++i) {
    le[i] = static_cast<char>((id >> (8 * i)) & 0xffU);
  }
  const std::uint64_t h = fnv1a64(salt);
  return fmix64(fnv1a64(std::string_view(le.data(), le.size()), h));
}

double hash_to_unit(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

RandomStream RandomStream::derive(std::uint64_t tag) const {
  return RandomStream(fmix64(seed_ ^ fmix64(tag + 0x9e3779b97f4a7c15ULL)));
}

RandomStream RandomStream::derive(std::uint64_t tag_a, std::uint64_t tag_b) const {
  return derive(tag_a).derive(tag_b);
}

std::uint64_t RandomStream::poisson(double mean) {
  if (!(mean > 0.0)) return 0;
  std::poisson_distribution<std::uint64_t> dist(mean);
  return dist(engine_);
}

std::uint64_t RandomStream::below(std::uint64_t n) {
  if (n == 0) return 0;
  std::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
  return dist(engine_);
}

}  // namespace explab
