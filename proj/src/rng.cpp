#include "dyncap/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace dyncap {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_stream_seed(std::uint64_t master_seed, std::uint64_t stream_index) {
  std::uint64_t s = master_seed ^ (0xa0761d6478bd642fULL * (stream_index + 1));
  return splitmix64(s);
}

namespace {
inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}
}  // namespace

Rng::Rng(std::uint64_t seed) {
  std::uint64_t sm = seed;
  for (auto& word : state_) word = splitmix64(sm);
}

std::uint64_t Rng::next_u64() {
  const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::gaussian() {
  if (has_gauss_spare_) {
    has_gauss_spare_ = false;
    return gauss_spare_;
  }
  // 1 - uniform() lies in (0,1], so the log is finite.
  const double u = 1.0 - uniform();
  const double r = std::sqrt(-2.0 * std::log(u));
  const double theta = 2.0 * std::numbers::pi * uniform();
  gauss_spare_ = r * std::sin(theta);
  has_gauss_spare_ = true;
  return r * std::cos(theta);
}

std::int64_t Rng::below(std::int64_t n) {
  if (n <= 0) throw std::invalid_argument("Rng::below requires n > 0");
  const std::uint64_t un = static_cast<std::uint64_t>(n);
  const std::uint64_t limit =
      std::numeric_limits<std::uint64_t>::max() -
      std::numeric_limits<std::uint64_t>::max() % un;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return static_cast<std::int64_t>(x % un);
}

std::vector<std::int64_t> Rng::sample_without_replacement(std::int64_t n, std::int64_t k) {
  if (k < 0 || k > n) throw std::invalid_argument("sample_without_replacement: k out of range");
  std::vector<std::int64_t> pool(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  for (std::int64_t i = 0; i < k; ++i) {
    const std::int64_t j = i + below(n - i);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(k));
  std::sort(pool.begin(), pool.end());
  return pool;
}

std::array<std::uint64_t, Rng::kStateWords> Rng::state_words() const {
  std::array<std::uint64_t, kStateWords> words{};
  for (int i = 0; i < 4; ++i) words[static_cast<std::size_t>(i)] = state_[static_cast<std::size_t>(i)];
  std::uint64_t spare_bits;
  static_assert(sizeof(spare_bits) == sizeof(gauss_spare_));
  std::memcpy(&spare_bits, &gauss_spare_, sizeof(spare_bits));
  words[4] = spare_bits;
  words[5] = has_gauss_spare_ ? 1 : 0;
  return words;
}

void Rng::restore(const std::array<std::uint64_t, kStateWords>& words) {
  for (int i = 0; i < 4; ++i) state_[static_cast<std::size_t>(i)] = words[static_cast<std::size_t>(i)];
  std::memcpy(&gauss_spare_, &words[4], sizeof(gauss_spare_));
  has_gauss_spare_ = words[5] != 0;
}

}  // namespace dyncap
