#include "dyncap/networks.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dyncap/schedule.hpp"

namespace dyncap {

namespace {

Tensor init_dense_weight(std::int64_t out, std::int64_t in, double slope, std::uint64_t seed) {
  Rng rng(seed);
  const double stddev = std::sqrt(2.0 / ((1.0 + slope * slope) * static_cast<double>(in)));
  std::vector<double> w(static_cast<std::size_t>(out * in));
  for (auto& v : w) v = stddev * rng.gaussian();
  return Tensor::from_data(Shape{out, in}, std::move(w), /*requires_grad=*/true);
}

Tensor init_deconv_weight(std::int64_t in, std::int64_t out, std::int64_t k, double slope,
                          std::uint64_t seed) {
  Rng rng(seed);
  const double stddev = std::sqrt(2.0 / ((1.0 + slope * slope) * static_cast<double>(in * k * k)));
  std::vector<double> w(static_cast<std::size_t>(in * out * k * k));
  for (auto& v : w) v = stddev * rng.gaussian();
  return Tensor::from_data(Shape{in, out, k, k}, std::move(w), /*requires_grad=*/true);
}

std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

// ---------------------------------------------------------------------------
// Generator

Generator Generator::make_point(std::int64_t latent_dim, std::vector<std::int64_t> hidden,
                                std::int64_t out_dim, double slope, std::uint64_t seed) {
  Generator g;
  g.latent_dim_ = latent_dim;
  g.sample_shape_ = Shape{out_dim};
  g.slope_ = slope;
  std::int64_t in = latent_dim;
  std::uint64_t layer = 0;
  for (std::int64_t width : hidden) {
    g.dense_w_.push_back(init_dense_weight(width, in, slope, derive_stream_seed(seed, layer++)));
    g.dense_b_.push_back(Tensor::zeros(Shape{width}, true));
    in = width;
  }
  g.dense_w_.push_back(init_dense_weight(out_dim, in, slope, derive_stream_seed(seed, layer++)));
  g.dense_b_.push_back(Tensor::zeros(Shape{out_dim}, true));
  return g;
}

Generator Generator::make_sprite(std::int64_t latent_dim, double slope, std::uint64_t seed) {
  Generator g;
  g.is_sprite_ = true;
  g.latent_dim_ = latent_dim;
  g.sample_shape_ = Shape{1, 16, 16};
  g.slope_ = slope;
  g.stem_shape_ = Shape{64, 2, 2};
  std::uint64_t layer = 0;
  g.dense_w_.push_back(init_dense_weight(64 * 2 * 2, latent_dim, slope, derive_stream_seed(seed, layer++)));
  g.dense_b_.push_back(Tensor::zeros(Shape{64 * 2 * 2}, true));
  const std::int64_t chain[4] = {64, 32, 16, 1};
  for (int i = 0; i < 3; ++i) {
    g.deconv_w_.push_back(init_deconv_weight(chain[i], chain[i + 1], 4, slope, derive_stream_seed(seed, layer++)));
    g.deconv_b_.push_back(Tensor::zeros(Shape{chain[i + 1]}, true));
  }
  return g;
}

Tensor Generator::forward(const Tensor& z) const {
  if (z.rank() != 2 || z.dim(1) != latent_dim_) {
    throw TensorError("Generator::forward: latent batch " + shape_str(z.shape()) +
                      " does not match latent_dim " + std::to_string(latent_dim_));
  }
  Tensor h = z;
  for (std::size_t i = 0; i < dense_w_.size(); ++i) {
    h = add(matmul(h, transpose(dense_w_[i])), dense_b_[i]);
    const bool last_dense = i + 1 == dense_w_.size();
    if (!is_sprite_ && last_dense) {
      h = dyncap::tanh(h);
    } else {
      h = leaky_relu(h, slope_);
    }
  }
  if (!is_sprite_) return h;

  const std::int64_t batch = z.dim(0);
  h = reshape(h, Shape{batch, stem_shape_[0], stem_shape_[1], stem_shape_[2]});
  for (std::size_t i = 0; i < deconv_w_.size(); ++i) {
    h = conv_transpose2d(h, deconv_w_[i], deconv_b_[i], /*stride=*/2, /*pad=*/1);
    if (i + 1 == deconv_w_.size()) {
      h = dyncap::tanh(h);
    } else {
      h = leaky_relu(h, slope_);
    }
  }
  return h;
}

std::int64_t Generator::param_count() const {
  std::int64_t n = 0;
  for (const auto& t : dense_w_) n += t.numel();
  for (const auto& t : dense_b_) n += t.numel();
  for (const auto& t : deconv_w_) n += t.numel();
  for (const auto& t : deconv_b_) n += t.numel();
  return n;
}

std::vector<Tensor*> Generator::parameters() {
  std::vector<Tensor*> out;
  for (std::size_t i = 0; i < dense_w_.size(); ++i) {
    out.push_back(&dense_w_[i]);
    out.push_back(&dense_b_[i]);
  }
  for (std::size_t i = 0; i < deconv_w_.size(); ++i) {
    out.push_back(&deconv_w_[i]);
    out.push_back(&deconv_b_[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Discriminator

Discriminator Discriminator::make_point(std::int64_t input_dim, std::vector<std::int64_t> widths,
                                        double slope, std::uint64_t seed) {
  if (widths.empty()) throw TensorError("Discriminator::make_point: needs at least one trunk layer");
  Discriminator d;
  d.input_width_ = input_dim;
  d.slope_ = slope;
  d.base_widths_ = widths;
  std::int64_t in = input_dim;
  int index = 0;
  for (std::int64_t w : widths) {
    // The first trunk layer counts as low-level (mask-exclusion eligible).
    d.denses_.emplace_back(w, in, index, index == 0, slope, derive_stream_seed(seed, static_cast<std::uint64_t>(index)));
    in = w;
    ++index;
  }
  d.head_.emplace(1, in, index, false, slope, derive_stream_seed(seed, static_cast<std::uint64_t>(index)));
  return d;
}

Discriminator Discriminator::make_sprite(std::int64_t in_channels, std::int64_t image_size,
                                         std::vector<std::int64_t> channels, double slope,
                                         std::uint64_t seed) {
  if (channels.empty()) throw TensorError("Discriminator::make_sprite: needs at least one conv layer");
  Discriminator d;
  d.input_width_ = in_channels;
  d.image_size_ = image_size;
  d.slope_ = slope;
  d.base_widths_ = channels;
  std::int64_t in = in_channels;
  std::int64_t spatial = image_size;
  int index = 0;
  for (std::int64_t ch : channels) {
    d.convs_.emplace_back(ch, in, /*ksize=*/3, /*stride=*/2, /*pad=*/1, index, index < 2, slope,
                          derive_stream_seed(seed, static_cast<std::uint64_t>(index)));
    in = ch;
    spatial = conv_out_extent(spatial, 3, 2, 1);
    ++index;
  }
  if (spatial != 1) {
    throw TensorError("Discriminator::make_sprite: conv stack must reduce spatial extent to 1, got " +
                      std::to_string(spatial));
  }
  d.head_.emplace(1, in, index, false, slope, derive_stream_seed(seed, static_cast<std::uint64_t>(index)));
  return d;
}

std::vector<std::int64_t> Discriminator::active_widths() const {
  std::vector<std::int64_t> out;
  for (const auto& c : convs_) out.push_back(c.active_out());
  for (const auto& l : denses_) out.push_back(l.active_out());
  return out;
}

void Discriminator::check_widths(const std::vector<std::int64_t>& widths) const {
  if (static_cast<std::int64_t>(widths.size()) != trunk_size()) {
    throw TensorError("Discriminator: expected " + std::to_string(trunk_size()) +
                      " trunk widths, got " + std::to_string(widths.size()));
  }
  for (std::size_t i = 0; i < widths.size(); ++i) {
    if (widths[i] < 1 || widths[i] > base_widths_[i]) {
      throw TensorError("Discriminator: width " + std::to_string(widths[i]) + " for layer " +
                        std::to_string(i) + " outside [1," + std::to_string(base_widths_[i]) + "]");
    }
  }
}

void Discriminator::check_mask(const FilterMask& mask) const {
  if (static_cast<std::int64_t>(mask.selected.size()) != trunk_size()) {
    throw TensorError("Discriminator: mask covers " + std::to_string(mask.selected.size()) +
                      " layers, trunk has " + std::to_string(trunk_size()));
  }
  for (std::size_t l = 0; l < mask.selected.size(); ++l) {
    const auto& idx = mask.selected[l];
    if (idx.empty()) throw TensorError("Discriminator: empty mask for layer " + std::to_string(l));
    std::int64_t prev = -1;
    for (auto i : idx) {
      if (i <= prev || i >= base_widths_[l]) {
        throw TensorError("Discriminator: mask index " + std::to_string(i) + " invalid for layer " +
                          std::to_string(l) + " (base " + std::to_string(base_widths_[l]) + ")");
      }
      prev = i;
    }
  }
}

Tensor Discriminator::forward_full(const Tensor& x) const {
  return forward_sliced(x, base_widths_);
}

Tensor Discriminator::forward_sliced(const Tensor& x, const std::vector<std::int64_t>& widths) const {
  check_widths(widths);
  Tensor h = x;
  std::int64_t in = input_width_;
  std::size_t li = 0;
  for (const auto& conv : convs_) {
    h = leaky_relu(conv.forward_sliced(h, widths[li], in), slope_);
    in = widths[li];
    ++li;
  }
  if (!convs_.empty()) h = reshape(h, Shape{h.dim(0), in});
  for (const auto& dense : denses_) {
    h = leaky_relu(dense.forward_sliced(h, widths[li], in), slope_);
    in = widths[li];
    ++li;
  }
  return head_->forward_sliced(h, 1, in);
}

Tensor Discriminator::forward_masked(const Tensor& x, const FilterMask& mask) const {
  check_mask(mask);
  std::vector<std::int64_t> all_inputs(static_cast<std::size_t>(input_width_));
  for (std::int64_t i = 0; i < input_width_; ++i) all_inputs[static_cast<std::size_t>(i)] = i;

  Tensor h = x;
  const std::vector<std::int64_t>* in_idx = &all_inputs;
  std::size_t li = 0;
  for (const auto& conv : convs_) {
    h = leaky_relu(conv.forward_masked(h, mask.selected[li], *in_idx), slope_);
    in_idx = &mask.selected[li];
    ++li;
  }
  if (!convs_.empty()) h = reshape(h, Shape{h.dim(0), static_cast<std::int64_t>(in_idx->size())});
  for (const auto& dense : denses_) {
    h = leaky_relu(dense.forward_masked(h, mask.selected[li], *in_idx), slope_);
    in_idx = &mask.selected[li];
    ++li;
  }
  // Head keeps its single logit; only its input columns follow the mask.
  std::vector<std::int64_t> head_out{0};
  return head_->forward_masked(h, head_out, *in_idx);
}

void Discriminator::set_active_widths(const std::vector<std::int64_t>& widths) {
  check_widths(widths);
  std::int64_t in = input_width_;
  std::size_t li = 0;
  for (auto& conv : convs_) {
    conv.set_active(widths[li], in);
    in = widths[li];
    ++li;
  }
  for (auto& dense : denses_) {
    dense.set_active(widths[li], in);
    in = widths[li];
    ++li;
  }
  head_->set_active(1, in);
}

void Discriminator::grow_to(const std::vector<std::int64_t>& widths, const GrowthInit& init) {
  check_widths(widths);
  std::int64_t in = input_width_;
  std::size_t li = 0;
  for (auto& conv : convs_) {
    GrowthInit layer_init{init.rule, init.gain, derive_stream_seed(init.seed, li)};
    conv.grow(widths[li], in, layer_init);
    in = widths[li];
    ++li;
  }
  for (auto& dense : denses_) {
    GrowthInit layer_init{init.rule, init.gain, derive_stream_seed(init.seed, li)};
    dense.grow(widths[li], in, layer_init);
    in = widths[li];
    ++li;
  }
  GrowthInit head_init{init.rule, init.gain, derive_stream_seed(init.seed, li)};
  head_->grow(1, in, head_init);
}

std::int64_t Discriminator::param_count_for(const std::vector<std::int64_t>& widths) const {
  check_widths(widths);
  std::int64_t total = 0;
  std::int64_t in = input_width_;
  std::size_t li = 0;
  for (const auto& conv : convs_) {
    total += widths[li] * in * conv.ksize() * conv.ksize() + widths[li];
    in = widths[li];
    ++li;
  }
  for (; li < base_widths_.size(); ++li) {
    total += widths[li] * in + widths[li];
    in = widths[li];
  }
  total += in + 1;  // head
  return total;
}

std::int64_t Discriminator::param_count_masked(const FilterMask& mask) const {
  check_mask(mask);
  std::vector<std::int64_t> sizes(mask.selected.size());
  for (std::size_t i = 0; i < mask.selected.size(); ++i) {
    sizes[i] = static_cast<std::int64_t>(mask.selected[i].size());
  }
  return param_count_for(sizes);
}

std::int64_t Discriminator::flops_for(const std::vector<std::int64_t>& widths) const {
  check_widths(widths);
  std::int64_t total = 0;
  std::int64_t in = input_width_;
  std::int64_t spatial = image_size_;
  std::size_t li = 0;
  for (const auto& conv : convs_) {
    spatial = conv_out_extent(spatial, conv.ksize(), conv.stride(), conv.pad());
    total += spatial * spatial * widths[li] * (in * conv.ksize() * conv.ksize() + 1);
    in = widths[li];
    ++li;
  }
  for (; li < base_widths_.size(); ++li) {
    total += widths[li] * (in + 1);
    in = widths[li];
  }
  total += in + 1;  // head
  return total;
}

std::int64_t Discriminator::flops_masked(const FilterMask& mask) const {
  check_mask(mask);
  std::vector<std::int64_t> sizes(mask.selected.size());
  for (std::size_t i = 0; i < mask.selected.size(); ++i) {
    sizes[i] = static_cast<std::int64_t>(mask.selected[i].size());
  }
  return flops_for(sizes);
}

std::vector<Tensor*> Discriminator::parameters() {
  std::vector<Tensor*> out;
  for (auto& c : convs_) {
    out.push_back(&c.weight());
    out.push_back(&c.bias());
  }
  for (auto& l : denses_) {
    out.push_back(&l.weight());
    out.push_back(&l.bias());
  }
  out.push_back(&head_->weight());
  out.push_back(&head_->bias());
  return out;
}

std::vector<std::vector<std::uint8_t>> Discriminator::activity_sliced(
    const std::vector<std::int64_t>& widths) const {
  check_widths(widths);
  std::vector<std::vector<std::uint8_t>> acts;
  std::int64_t in = input_width_;
  std::size_t li = 0;
  for (const auto& c : convs_) {
    acts.push_back(c.weight_activity_sliced(widths[li], in));
    acts.push_back(c.bias_activity_sliced(widths[li]));
    in = widths[li];
    ++li;
  }
  for (const auto& l : denses_) {
    acts.push_back(l.weight_activity_sliced(widths[li], in));
    acts.push_back(l.bias_activity_sliced(widths[li]));
    in = widths[li];
    ++li;
  }
  acts.push_back(head_->weight_activity_sliced(1, in));
  acts.push_back(head_->bias_activity_sliced(1));
  return acts;
}

std::vector<std::vector<std::uint8_t>> Discriminator::activity_masked(const FilterMask& mask) const {
  check_mask(mask);
  std::vector<std::int64_t> all_inputs(static_cast<std::size_t>(input_width_));
  for (std::int64_t i = 0; i < input_width_; ++i) all_inputs[static_cast<std::size_t>(i)] = i;

  std::vector<std::vector<std::uint8_t>> acts;
  const std::vector<std::int64_t>* in_idx = &all_inputs;
  std::size_t li = 0;
  for (const auto& c : convs_) {
    acts.push_back(c.weight_activity_masked(mask.selected[li], *in_idx));
    acts.push_back(c.bias_activity_masked(mask.selected[li]));
    in_idx = &mask.selected[li];
    ++li;
  }
  for (const auto& l : denses_) {
    acts.push_back(l.weight_activity_masked(mask.selected[li], *in_idx));
    acts.push_back(l.bias_activity_masked(mask.selected[li]));
    in_idx = &mask.selected[li];
    ++li;
  }
  std::vector<std::int64_t> head_out{0};
  acts.push_back(head_->weight_activity_masked(head_out, *in_idx));
  acts.push_back(head_->bias_activity_masked(head_out));
  return acts;
}

// ---------------------------------------------------------------------------
// Mask sampling

FilterMask sample_mask(const Discriminator& net, double beta,
                       const std::vector<std::int64_t>& excluded, std::uint64_t seed) {
  if (!(beta > 0.0 && beta <= 1.0)) {
    throw TensorError("sample_mask: beta " + std::to_string(beta) + " outside (0,1]");
  }
  Rng rng(seed);
  FilterMask mask;
  mask.seed = seed;
  mask.selected.resize(static_cast<std::size_t>(net.trunk_size()));
  for (std::int64_t l = 0; l < net.trunk_size(); ++l) {
    const std::int64_t base = net.base_widths()[static_cast<std::size_t>(l)];
    const bool keep_all =
        std::find(excluded.begin(), excluded.end(), l) != excluded.end();
    if (keep_all) {
      auto& idx = mask.selected[static_cast<std::size_t>(l)];
      idx.resize(static_cast<std::size_t>(base));
      for (std::int64_t i = 0; i < base; ++i) idx[static_cast<std::size_t>(i)] = i;
      continue;
    }
    std::int64_t size = round_half_up_width(beta * static_cast<double>(base));
    if (size > base) size = base;
    mask.selected[static_cast<std::size_t>(l)] = rng.sample_without_replacement(base, size);
  }
  return mask;
}

FilterMask sample_mask(const Discriminator& net, double beta,
                       const std::vector<std::int64_t>& excluded, Rng& rng) {
  return sample_mask(net, beta, excluded, rng.next_u64());
}

}  // namespace dyncap
