#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dyncap/layers.hpp"
#include "dyncap/rng.hpp"
#include "dyncap/tensor.hpp"

namespace dyncap {

// Per-layer selection of active output filters for the discriminator trunk.
// Layer l consumes exactly the channels layer l-1 produced, so the input
// selection is implied by the previous entry; the first layer always reads
// all data channels and the scalar head is never masked.
struct FilterMask {
  std::vector<std::vector<std::int64_t>> selected;  // sorted, strictly increasing
  std::uint64_t seed = 0;
};

// Fixed-capacity generator: an MLP for 2-d point data or a dense stem
// followed by a transposed-convolution stack for 16x16 sprites.
class Generator {
 public:
  static Generator make_point(std::int64_t latent_dim, std::vector<std::int64_t> hidden,
                              std::int64_t out_dim, double slope, std::uint64_t seed);
  static Generator make_sprite(std::int64_t latent_dim, double slope, std::uint64_t seed);

  // z [B, latent] -> samples in (-1,1), shape [B,...sample_shape].
  Tensor forward(const Tensor& z) const;

  std::int64_t latent_dim() const { return latent_dim_; }
  Shape sample_shape() const { return sample_shape_; }
  std::int64_t param_count() const;
  std::vector<Tensor*> parameters();

 private:
  Generator() = default;
  bool is_sprite_ = false;
  std::int64_t latent_dim_ = 0;
  Shape sample_shape_;
  double slope_ = 0.2;
  Shape stem_shape_;  // sprite: [C,H,W] the dense stem reshapes into
  std::vector<Tensor> dense_w_, dense_b_;
  std::vector<Tensor> deconv_w_, deconv_b_;  // kernels [I,O,4,4], stride 2, pad 1
};

// Discriminator over dynamic-width layers: an optional stride-2 conv trunk,
// an optional dense trunk, and a fixed single-logit head. Capacity is
// expressed either as per-layer active widths (slice view) or a FilterMask.
class Discriminator {
 public:
  static Discriminator make_point(std::int64_t input_dim, std::vector<std::int64_t> widths,
                                  double slope, std::uint64_t seed);
  static Discriminator make_sprite(std::int64_t in_channels, std::int64_t image_size,
                                   std::vector<std::int64_t> channels, double slope,
                                   std::uint64_t seed);

  std::int64_t trunk_size() const { return static_cast<std::int64_t>(base_widths_.size()); }
  const std::vector<std::int64_t>& base_widths() const { return base_widths_; }
  std::vector<std::int64_t> active_widths() const;
  std::int64_t input_width() const { return input_width_; }
  bool is_conv() const { return !convs_.empty(); }
  double slope() const { return slope_; }

  Tensor forward_full(const Tensor& x) const;
  Tensor forward_sliced(const Tensor& x, const std::vector<std::int64_t>& widths) const;
  Tensor forward_masked(const Tensor& x, const FilterMask& mask) const;

  void set_active_widths(const std::vector<std::int64_t>& widths);
  // Applies a grow event; per-layer init seeds derive from init.seed.
  void grow_to(const std::vector<std::int64_t>& widths, const GrowthInit& init);

  std::int64_t param_count_for(const std::vector<std::int64_t>& widths) const;
  std::int64_t param_count_masked(const FilterMask& mask) const;
  // Multiply-add count of one single-sample forward pass (one extra op per
  // output element for the bias).
  std::int64_t flops_for(const std::vector<std::int64_t>& widths) const;
  std::int64_t flops_masked(const FilterMask& mask) const;

  std::vector<Tensor*> parameters();
  // Activity flags aligned with parameters(), for masking optimizer updates.
  std::vector<std::vector<std::uint8_t>> activity_sliced(const std::vector<std::int64_t>& widths) const;
  std::vector<std::vector<std::uint8_t>> activity_masked(const FilterMask& mask) const;

  std::vector<DynConvLayer>& conv_layers() { return convs_; }
  std::vector<DynDenseLayer>& dense_layers() { return denses_; }
  DynDenseLayer& head() { return *head_; }
  const DynDenseLayer& head() const { return *head_; }

 private:
  Discriminator() = default;
  void check_widths(const std::vector<std::int64_t>& widths) const;
  void check_mask(const FilterMask& mask) const;

  std::int64_t input_width_ = 0;   // data dims (dense) or channels (conv)
  std::int64_t image_size_ = 0;    // conv only
  double slope_ = 0.2;
  std::vector<std::int64_t> base_widths_;
  std::vector<DynConvLayer> convs_;
  std::vector<DynDenseLayer> denses_;
  std::optional<DynDenseLayer> head_;
};

// Uniform random sub-kernel selection: every non-excluded trunk layer keeps
// round-half-up(beta * base) of its filters (at least 1), excluded layers
// keep all of them. The head is outside the trunk and is never masked.
FilterMask sample_mask(const Discriminator& net, double beta,
                       const std::vector<std::int64_t>& excluded, std::uint64_t seed);
FilterMask sample_mask(const Discriminator& net, double beta,
                       const std::vector<std::int64_t>& excluded, Rng& rng);

}  // namespace dyncap
