#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace explab {

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);

/// MurmurHash3 fmix64 finalizer; full avalanche on 64-bit keys.
std::uint64_t fmix64(std::uint64_t key);

/// Hash of (salt, id): FNV-1a over salt followed by the little-endian bytes
/// of id, then fmix64.
std::uint64_t salted_hash(std::string_view salt, std::uint64_t id);

/// Maps a 64-bit hash onto [0, 1) using its top 53 bits.
double hash_to_unit(std::uint64_t h);

/// Deterministic random stream. Substreams are derived by hashing a parent
/// seed with integer tags, so (seed, arm, day) always yields the same draws
/// regardless of the order in which substreams are created.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  RandomStream derive(std::uint64_t tag) const;
  RandomStream derive(std::uint64_t tag_a, std::uint64_t tag_b) const;

  double uniform() { return unit_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal() { return normal_(engine_); }
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t poisson(double mean);
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace explab
