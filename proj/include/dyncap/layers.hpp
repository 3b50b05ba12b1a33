#pragma once

#include <cstdint>
#include <vector>

#include "dyncap/rng.hpp"
#include "dyncap/tensor.hpp"

namespace dyncap {

enum class InitRule { kFanInScaledNormal };

// Recipe for the weights exposed by a grow step. Same seed, same new
// weights, bit for bit. gain <= 0 picks the layer's own default
// 2 / (1 + slope^2).
struct GrowthInit {
  InitRule rule = InitRule::kFanInScaledNormal;
  double gain = 0.0;
  std::uint64_t seed = 0;
};

// Dense layer with a full-capacity weight store and a movable active
// boundary. The store is allocated once at (max_out x max_in); growing
// only moves the boundary and fills the newly exposed entries.
class DynDenseLayer {
 public:
  DynDenseLayer(std::int64_t max_out, std::int64_t max_in, int layer_index,
                bool low_level, double leaky_slope, std::uint64_t init_seed);

  // input [B, active_in] -> [B, active_out] using the leading weight block.
  Tensor forward_sliced(const Tensor& input, std::int64_t active_out, std::int64_t active_in) const;
  // input [B, |in_idx|] -> [B, |out_idx|] using the selected rows/columns.
  Tensor forward_masked(const Tensor& input, const std::vector<std::int64_t>& out_idx,
                        const std::vector<std::int64_t>& in_idx) const;

  // Expands the active region. Never shrinks, never touches the weights
  // that were already active.
  void grow(std::int64_t new_out, std::int64_t new_in, const GrowthInit& init);
  // Setup-time override of the active region (e.g. starting at half width).
  void set_active(std::int64_t active_out, std::int64_t active_in);

  std::int64_t max_out() const { return max_out_; }
  std::int64_t max_in() const { return max_in_; }
  std::int64_t active_out() const { return active_out_; }
  std::int64_t active_in() const { return active_in_; }
  int layer_index() const { return layer_index_; }
  bool low_level() const { return low_level_; }
  double default_gain() const { return default_gain_; }

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

  // Per-entry activity flags aligned to the stores, for the optimizer.
  std::vector<std::uint8_t> weight_activity_sliced(std::int64_t out, std::int64_t in) const;
  std::vector<std::uint8_t> bias_activity_sliced(std::int64_t out) const;
  std::vector<std::uint8_t> weight_activity_masked(const std::vector<std::int64_t>& out_idx,
                                                   const std::vector<std::int64_t>& in_idx) const;
  std::vector<std::uint8_t> bias_activity_masked(const std::vector<std::int64_t>& out_idx) const;

 private:
  std::int64_t max_out_, max_in_;
  std::int64_t active_out_, active_in_;
  int layer_index_;
  bool low_level_;
  double default_gain_;
  Tensor weight_;  // [max_out, max_in]
  Tensor bias_;    // [max_out]
};

// Convolutional counterpart; stores [max_out, max_in, k, k].
class DynConvLayer {
 public:
  DynConvLayer(std::int64_t max_out, std::int64_t max_in, std::int64_t ksize,
               std::int64_t stride, std::int64_t pad, int layer_index,
               bool low_level, double leaky_slope, std::uint64_t init_seed);

  Tensor forward_sliced(const Tensor& input, std::int64_t active_out, std::int64_t active_in) const;
  Tensor forward_masked(const Tensor& input, const std::vector<std::int64_t>& out_idx,
                        const std::vector<std::int64_t>& in_idx) const;

  void grow(std::int64_t new_out, std::int64_t new_in, const GrowthInit& init);
  void set_active(std::int64_t active_out, std::int64_t active_in);

  std::int64_t max_out() const { return max_out_; }
  std::int64_t max_in() const { return max_in_; }
  std::int64_t active_out() const { return active_out_; }
  std::int64_t active_in() const { return active_in_; }
  std::int64_t ksize() const { return ksize_; }
  std::int64_t stride() const { return stride_; }
  std::int64_t pad() const { return pad_; }
  int layer_index() const { return layer_index_; }
  bool low_level() const { return low_level_; }
  double default_gain() const { return default_gain_; }

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

  std::vector<std::uint8_t> weight_activity_sliced(std::int64_t out, std::int64_t in) const;
  std::vector<std::uint8_t> bias_activity_sliced(std::int64_t out) const;
  std::vector<std::uint8_t> weight_activity_masked(const std::vector<std::int64_t>& out_idx,
                                                   const std::vector<std::int64_t>& in_idx) const;
  std::vector<std::uint8_t> bias_activity_masked(const std::vector<std::int64_t>& out_idx) const;

 private:
  std::int64_t max_out_, max_in_, ksize_, stride_, pad_;
  std::int64_t active_out_, active_in_;
  int layer_index_;
  bool low_level_;
  double default_gain_;
  Tensor weight_;  // [max_out, max_in, k, k]
  Tensor bias_;    // [max_out]
};

}  // namespace dyncap
