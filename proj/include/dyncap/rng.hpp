#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace dyncap {

// Deterministic xoshiro256++ stream with an explicit, serializable state.
// The standard library distributions are implementation-defined, so every
// random draw in the project (uniform, gaussian, subset sampling) goes
// through this class to keep runs bit-reproducible across platforms and
// stdlib versions.
class Rng {
 public:
  // Number of 64-bit words in the serialized state (4 engine words,
  // the cached Box-Muller spare, and its validity flag).
  static constexpr int kStateWords = 6;

  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform in [0,1) with 53 random bits.
  double uniform();

  // Standard normal via Box-Muller; the second value is cached.
  double gaussian();

  // Uniform integer in [0,n), n > 0, rejection-sampled (no modulo bias).
  std::int64_t below(std::int64_t n);

  // k distinct values from [0,n), returned sorted ascending.
  std::vector<std::int64_t> sample_without_replacement(std::int64_t n, std::int64_t k);

  std::array<std::uint64_t, kStateWords> state_words() const;
  void restore(const std::array<std::uint64_t, kStateWords>& words);

 private:
  std::array<std::uint64_t, 4> state_{};
  double gauss_spare_ = 0.0;
  bool has_gauss_spare_ = false;
};

// SplitMix64 step; used to expand seeds and derive independent stream seeds.
std::uint64_t splitmix64(std::uint64_t& state);

// Derives the seed for a named sub-stream (latent / mask / data / eval ...)
// from a master seed. Same (seed, index) always yields the same stream.
std::uint64_t derive_stream_seed(std::uint64_t master_seed, std::uint64_t stream_index);

}  // namespace dyncap
