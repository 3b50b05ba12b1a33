#include "dyncap/layers.hpp"

#include <cmath>
#include <string>

namespace dyncap {

namespace {

double init_stddev(double gain, std::int64_t fan_in) {
  return std::sqrt(gain / static_cast<double>(fan_in));
}

void fill_fan_in_normal(std::vector<double>& store, double stddev, Rng& rng) {
  for (auto& w : store) w = stddev * rng.gaussian();
}

void check_grow_bounds(const char* who, std::int64_t new_out, std::int64_t new_in,
                       std::int64_t active_out, std::int64_t active_in,
                       std::int64_t max_out, std::int64_t max_in) {
  if (new_out < active_out || new_in < active_in) {
    throw TensorError(std::string(who) + ": grow cannot shrink (active " + std::to_string(active_out) +
                      "x" + std::to_string(active_in) + " -> requested " + std::to_string(new_out) +
                      "x" + std::to_string(new_in) + ")");
  }
  if (new_out > max_out || new_in > max_in) {
    throw TensorError(std::string(who) + ": grow exceeds store capacity " + std::to_string(max_out) +
                      "x" + std::to_string(max_in));
  }
}

void check_set_active(const char* who, std::int64_t out, std::int64_t in,
                      std::int64_t max_out, std::int64_t max_in) {
  if (out < 1 || out > max_out || in < 1 || in > max_in) {
    throw TensorError(std::string(who) + ": active extent " + std::to_string(out) + "x" +
                      std::to_string(in) + " outside store " + std::to_string(max_out) + "x" +
                      std::to_string(max_in));
  }
}

std::vector<std::uint8_t> block_activity(std::int64_t d0, std::int64_t d1, std::int64_t rest,
                                         std::int64_t n0, std::int64_t n1) {
  std::vector<std::uint8_t> act(static_cast<std::size_t>(d0 * d1 * rest), 0);
  for (std::int64_t i = 0; i < n0; ++i) {
    for (std::int64_t j = 0; j < n1; ++j) {
      const std::size_t at = static_cast<std::size_t>((i * d1 + j) * rest);
      for (std::int64_t t = 0; t < rest; ++t) act[at + static_cast<std::size_t>(t)] = 1;
    }
  }
  return act;
}

std::vector<std::uint8_t> index_activity(std::int64_t d0, std::int64_t d1, std::int64_t rest,
                                         const std::vector<std::int64_t>& idx0,
                                         const std::vector<std::int64_t>& idx1) {
  std::vector<std::uint8_t> act(static_cast<std::size_t>(d0 * d1 * rest), 0);
  for (auto i : idx0) {
    for (auto j : idx1) {
      const std::size_t at = static_cast<std::size_t>((i * d1 + j) * rest);
      for (std::int64_t t = 0; t < rest; ++t) act[at + static_cast<std::size_t>(t)] = 1;
    }
  }
  return act;
}

// Fills every entry of the (new_out x new_in) rectangle that lies outside
// the old (old_out x old_in) block, in row-major store order: the new
// input columns of existing filters and every entry of the new filters.
void fill_exposed(std::vector<double>& store, std::int64_t d1, std::int64_t rest,
                  std::int64_t old_out, std::int64_t old_in,
                  std::int64_t new_out, std::int64_t new_in,
                  double stddev, Rng& rng) {
  for (std::int64_t o = 0; o < new_out; ++o) {
    for (std::int64_t i = 0; i < new_in; ++i) {
      if (o < old_out && i < old_in) continue;
      const std::size_t at = static_cast<std::size_t>((o * d1 + i) * rest);
      for (std::int64_t t = 0; t < rest; ++t) {
        store[at + static_cast<std::size_t>(t)] = stddev * rng.gaussian();
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// DynDenseLayer

DynDenseLayer::DynDenseLayer(std::int64_t max_out, std::int64_t max_in, int layer_index,
                             bool low_level, double leaky_slope, std::uint64_t init_seed)
    : max_out_(max_out),
      max_in_(max_in),
      active_out_(max_out),
      active_in_(max_in),
      layer_index_(layer_index),
      low_level_(low_level),
      default_gain_(2.0 / (1.0 + leaky_slope * leaky_slope)) {
  if (max_out < 1 || max_in < 1) throw TensorError("DynDenseLayer: extents must be positive");
  std::vector<double> w(static_cast<std::size_t>(max_out * max_in));
  Rng rng(init_seed);
  fill_fan_in_normal(w, init_stddev(default_gain_, max_in_), rng);
  weight_ = Tensor::from_data(Shape{max_out, max_in}, std::move(w), /*requires_grad=*/true);
  bias_ = Tensor::zeros(Shape{max_out}, /*requires_grad=*/true);
}

Tensor DynDenseLayer::forward_sliced(const Tensor& input, std::int64_t active_out,
                                     std::int64_t active_in) const {
  check_set_active("DynDenseLayer::forward_sliced", active_out, active_in, max_out_, max_in_);
  if (input.rank() != 2 || input.dim(1) != active_in) {
    throw TensorError("DynDenseLayer::forward_sliced: input " + shape_str(input.shape()) +
                      " does not match active_in " + std::to_string(active_in));
  }
  Tensor w = take_block(weight_, active_out, active_in);
  Tensor b = take_block(bias_, active_out);
  return add(matmul(input, transpose(w)), b);
}

Tensor DynDenseLayer::forward_masked(const Tensor& input, const std::vector<std::int64_t>& out_idx,
                                     const std::vector<std::int64_t>& in_idx) const {
  if (input.rank() != 2 || input.dim(1) != static_cast<std::int64_t>(in_idx.size())) {
    throw TensorError("DynDenseLayer::forward_masked: input " + shape_str(input.shape()) +
                      " does not match " + std::to_string(in_idx.size()) + " selected input dims");
  }
  Tensor w = take_index(weight_, out_idx, in_idx);
  Tensor b = take_index(bias_, out_idx);
  return add(matmul(input, transpose(w)), b);
}

void DynDenseLayer::grow(std::int64_t new_out, std::int64_t new_in, const GrowthInit& init) {
  check_grow_bounds("DynDenseLayer::grow", new_out, new_in, active_out_, active_in_, max_out_, max_in_);
  const double gain = init.gain > 0.0 ? init.gain : default_gain_;
  Rng rng(init.seed);
  fill_exposed(weight_.mutable_data(), max_in_, 1, active_out_, active_in_, new_out, new_in,
               init_stddev(gain, max_in_), rng);
  // New filters start with zero bias.
  active_out_ = new_out;
  active_in_ = new_in;
}

void DynDenseLayer::set_active(std::int64_t active_out, std::int64_t active_in) {
  check_set_active("DynDenseLayer::set_active", active_out, active_in, max_out_, max_in_);
  active_out_ = active_out;
  active_in_ = active_in;
}

std::vector<std::uint8_t> DynDenseLayer::weight_activity_sliced(std::int64_t out, std::int64_t in) const {
  return block_activity(max_out_, max_in_, 1, out, in);
}
std::vector<std::uint8_t> DynDenseLayer::bias_activity_sliced(std::int64_t out) const {
  return block_activity(max_out_, 1, 1, out, 1);
}
std::vector<std::uint8_t> DynDenseLayer::weight_activity_masked(
    const std::vector<std::int64_t>& out_idx, const std::vector<std::int64_t>& in_idx) const {
  return index_activity(max_out_, max_in_, 1, out_idx, in_idx);
}
std::vector<std::uint8_t> DynDenseLayer::bias_activity_masked(const std::vector<std::int64_t>& out_idx) const {
  return index_activity(max_out_, 1, 1, out_idx, {0});
}

// ---------------------------------------------------------------------------
// DynConvLayer

DynConvLayer::DynConvLayer(std::int64_t max_out, std::int64_t max_in, std::int64_t ksize,
                           std::int64_t stride, std::int64_t pad, int layer_index,
                           bool low_level, double leaky_slope, std::uint64_t init_seed)
    : max_out_(max_out),
      max_in_(max_in),
      ksize_(ksize),
      stride_(stride),
      pad_(pad),
      active_out_(max_out),
      active_in_(max_in),
      layer_index_(layer_index),
      low_level_(low_level),
      default_gain_(2.0 / (1.0 + leaky_slope * leaky_slope)) {
  if (max_out < 1 || max_in < 1 || ksize < 1) throw TensorError("DynConvLayer: extents must be positive");
  std::vector<double> w(static_cast<std::size_t>(max_out * max_in * ksize * ksize));
  Rng rng(init_seed);
  fill_fan_in_normal(w, init_stddev(default_gain_, max_in_ * ksize_ * ksize_), rng);
  weight_ = Tensor::from_data(Shape{max_out, max_in, ksize, ksize}, std::move(w), /*requires_grad=*/true);
  bias_ = Tensor::zeros(Shape{max_out}, /*requires_grad=*/true);
}

Tensor DynConvLayer::forward_sliced(const Tensor& input, std::int64_t active_out,
                                    std::int64_t active_in) const {
  check_set_active("DynConvLayer::forward_sliced", active_out, active_in, max_out_, max_in_);
  if (input.rank() != 4 || input.dim(1) != active_in) {
    throw TensorError("DynConvLayer::forward_sliced: input " + shape_str(input.shape()) +
                      " does not match active_in " + std::to_string(active_in));
  }
  Tensor w = take_block(weight_, active_out, active_in);
  Tensor b = take_block(bias_, active_out);
  return conv2d(input, w, b, stride_, pad_);
}

Tensor DynConvLayer::forward_masked(const Tensor& input, const std::vector<std::int64_t>& out_idx,
                                    const std::vector<std::int64_t>& in_idx) const {
  if (input.rank() != 4 || input.dim(1) != static_cast<std::int64_t>(in_idx.size())) {
    throw TensorError("DynConvLayer::forward_masked: input " + shape_str(input.shape()) +
                      " does not match " + std::to_string(in_idx.size()) + " selected input channels");
  }
  Tensor w = take_index(weight_, out_idx, in_idx);
  Tensor b = take_index(bias_, out_idx);
  return conv2d(input, w, b, stride_, pad_);
}

void DynConvLayer::grow(std::int64_t new_out, std::int64_t new_in, const GrowthInit& init) {
  check_grow_bounds("DynConvLayer::grow", new_out, new_in, active_out_, active_in_, max_out_, max_in_);
  const double gain = init.gain > 0.0 ? init.gain : default_gain_;
  Rng rng(init.seed);
  fill_exposed(weight_.mutable_data(), max_in_, ksize_ * ksize_, active_out_, active_in_,
               new_out, new_in, init_stddev(gain, max_in_ * ksize_ * ksize_), rng);
  active_out_ = new_out;
  active_in_ = new_in;
}

void DynConvLayer::set_active(std::int64_t active_out, std::int64_t active_in) {
  check_set_active("DynConvLayer::set_active", active_out, active_in, max_out_, max_in_);
  active_out_ = active_out;
  active_in_ = active_in;
}

std::vector<std::uint8_t> DynConvLayer::weight_activity_sliced(std::int64_t out, std::int64_t in) const {
  return block_activity(max_out_, max_in_, ksize_ * ksize_, out, in);
}
std::vector<std::uint8_t> DynConvLayer::bias_activity_sliced(std::int64_t out) const {
  return block_activity(max_out_, 1, 1, out, 1);
}
std::vector<std::uint8_t> DynConvLayer::weight_activity_masked(
    const std::vector<std::int64_t>& out_idx, const std::vector<std::int64_t>& in_idx) const {
  return index_activity(max_out_, max_in_, ksize_ * ksize_, out_idx, in_idx);
}
std::vector<std::uint8_t> DynConvLayer::bias_activity_masked(const std::vector<std::int64_t>& out_idx) const {
  return index_activity(max_out_, 1, 1, out_idx, {0});
}

}  // namespace dyncap
