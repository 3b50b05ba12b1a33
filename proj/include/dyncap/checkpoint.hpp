#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dyncap/tensor.hpp"

namespace dyncap {

// Flat binary container of named float64 arrays with a small header
// (schedule step, per-layer active widths, RNG words). Little-endian
// throughout; round-trips bitwise. Layout documented in docs/checkpoint.md.
struct CheckpointHeader {
  std::uint64_t step = 0;
  std::vector<std::uint32_t> active_widths;
  std::vector<std::uint64_t> rng_words;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  CheckpointHeader header;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dyncap
