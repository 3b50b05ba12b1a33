#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dyncap/rng.hpp"
#include "dyncap/tensor.hpp"

namespace dyncap {

enum class DatasetKind { kRing8, kTwoMoons, kSprites16 };

DatasetKind dataset_kind_from_string(const std::string& name);
std::string dataset_kind_name(DatasetKind kind);

struct DatasetSpec {
  DatasetKind kind = DatasetKind::kRing8;
  std::int64_t n_samples = 1024;
  double noise = 0.15;
  std::uint64_t seed = 0;
};

// Deterministic synthetic dataset: samples normalized into [-1,1] and a
// disjoint 90/10 train/val split, all a pure function of the spec.
struct Dataset {
  DatasetSpec spec;
  Tensor samples;                   // [n,2] points or [n,1,16,16] sprites
  std::vector<std::int64_t> train_idx;
  std::vector<std::int64_t> val_idx;
  // Mixture centers in normalized coordinates (ring8 only, else empty).
  std::vector<std::array<double, 2>> mode_centers;
  double norm_scale = 1.0;          // raw coordinates were divided by this

  std::int64_t train_size() const { return static_cast<std::int64_t>(train_idx.size()); }
  std::int64_t val_size() const { return static_cast<std::int64_t>(val_idx.size()); }
  Shape sample_shape() const;       // per-sample shape
  // Rows of the train/val split as a batch tensor.
  Tensor gather(const std::vector<std::int64_t>& rows) const;
  Tensor train_split() const;
  Tensor val_split() const;
};

// The 8 mixture means of the ring dataset before normalization: radius 2,
// angles 2*pi*k/8.
std::vector<std::array<double, 2>> ring8_raw_centers();

Dataset generate(const DatasetSpec& spec);

// Uniform with replacement from the train split only.
Tensor sample_batch(const Dataset& dataset, Rng& rng, std::int64_t batch_size);

// Named sample-size regimes: limited-tiny (64), limited (1024),
// sufficient (65536).
struct RegimePreset {
  std::string name;
  std::int64_t n_samples;
};
const std::vector<RegimePreset>& regime_presets();
std::int64_t regime_samples(const std::string& name);

}  // namespace dyncap
