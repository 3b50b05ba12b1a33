#include <doctest.h>

#include <cmath>
#include <vector>

#include "dyncap/networks.hpp"
#include "dyncap/rng.hpp"

using namespace dyncap;

namespace {

Tensor rand_tensor(Shape shape, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = -1.0 + 2.0 * rng.uniform();
  return Tensor::from_data(std::move(shape), std::move(v), false);
}

// Materialization oracle: copy exactly the selected weights out of the
// store into an ordinary dense tensor pair, run the plain primitive path.
Tensor materialized_dense(const DynDenseLayer& layer, const std::vector<std::int64_t>& out_idx,
                          const std::vector<std::int64_t>& in_idx, const Tensor& input) {
  const auto& w = layer.weight().data();
  const auto& b = layer.bias().data();
  const std::int64_t max_in = layer.max_in();
  std::vector<double> sub_w;
  std::vector<double> sub_b;
  for (auto o : out_idx) {
    for (auto i : in_idx) sub_w.push_back(w[static_cast<std::size_t>(o * max_in + i)]);
    sub_b.push_back(b[static_cast<std::size_t>(o)]);
  }
  Tensor wt = Tensor::from_data({static_cast<std::int64_t>(out_idx.size()),
                                 static_cast<std::int64_t>(in_idx.size())},
                                std::move(sub_w));
  Tensor bt = Tensor::from_data({static_cast<std::int64_t>(out_idx.size())}, std::move(sub_b));
  return add(matmul(input, transpose(wt)), bt);
}

Tensor materialized_conv(const DynConvLayer& layer, const std::vector<std::int64_t>& out_idx,
                         const std::vector<std::int64_t>& in_idx, const Tensor& input) {
  const auto& w = layer.weight().data();
  const auto& b = layer.bias().data();
  const std::int64_t max_in = layer.max_in();
  const std::int64_t kk = layer.ksize() * layer.ksize();
  std::vector<double> sub_w;
  std::vector<double> sub_b;
  for (auto o : out_idx) {
    for (auto i : in_idx) {
      const std::size_t at = static_cast<std::size_t>((o * max_in + i) * kk);
      sub_w.insert(sub_w.end(), w.begin() + static_cast<std::ptrdiff_t>(at),
                   w.begin() + static_cast<std::ptrdiff_t>(at + static_cast<std::size_t>(kk)));
    }
    sub_b.push_back(b[static_cast<std::size_t>(o)]);
  }
  Tensor wt = Tensor::from_data({static_cast<std::int64_t>(out_idx.size()),
                                 static_cast<std::int64_t>(in_idx.size()), layer.ksize(),
                                 layer.ksize()},
                                std::move(sub_w));
  Tensor bt = Tensor::from_data({static_cast<std::int64_t>(out_idx.size())}, std::move(sub_b));
  return conv2d(input, wt, bt, layer.stride(), layer.pad());
}

std::vector<std::int64_t> iota_idx(std::int64_t n) {
  std::vector<std::int64_t> v(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

}  // namespace

TEST_CASE("sliced dense forward matches the materialized block bitwise") {
  Rng rng(101);
  DynDenseLayer layer(6, 5, 0, false, 0.2, 42);
  Tensor x_full = rand_tensor({3, 5}, rng);
  Tensor full = layer.forward_sliced(x_full, 6, 5);
  CHECK(full.shape() == Shape{3, 6});
  CHECK(full.data() == materialized_dense(layer, iota_idx(6), iota_idx(5), x_full).data());

  Tensor x3 = rand_tensor({2, 3}, rng);
  Tensor one = layer.forward_sliced(x3, 1, 3);
  CHECK(one.shape() == Shape{2, 1});
  CHECK(one.data() == materialized_dense(layer, {0}, iota_idx(3), x3).data());

  Tensor sliced = layer.forward_sliced(x3, 4, 3);
  CHECK(sliced.data() == materialized_dense(layer, iota_idx(4), iota_idx(3), x3).data());

  CHECK_THROWS_AS(layer.forward_sliced(x3, 4, 5), TensorError);
  CHECK_THROWS_AS(layer.forward_sliced(x3, 7, 3), TensorError);
}

TEST_CASE("masked forward equals the materialized sub-layer bitwise") {
  Rng rng(102);
  for (int trial = 0; trial < 50; ++trial) {
    DynDenseLayer dense(8, 6, 0, false, 0.2, 1000 + static_cast<std::uint64_t>(trial));
    Rng pick(500 + static_cast<std::uint64_t>(trial));
    const auto out_idx = pick.sample_without_replacement(8, 1 + pick.below(8));
    const auto in_idx = pick.sample_without_replacement(6, 1 + pick.below(6));
    Tensor x = rand_tensor({2, static_cast<std::int64_t>(in_idx.size())}, rng);
    CHECK(dense.forward_masked(x, out_idx, in_idx).data() ==
          materialized_dense(dense, out_idx, in_idx, x).data());
  }
  for (int trial = 0; trial < 20; ++trial) {
    DynConvLayer conv(6, 4, 3, 2, 1, 1, false, 0.2, 2000 + static_cast<std::uint64_t>(trial));
    Rng pick(700 + static_cast<std::uint64_t>(trial));
    const auto out_idx = pick.sample_without_replacement(6, 1 + pick.below(6));
    const auto in_idx = pick.sample_without_replacement(4, 1 + pick.below(4));
    Tensor x = rand_tensor({2, static_cast<std::int64_t>(in_idx.size()), 6, 6}, rng);
    CHECK(conv.forward_masked(x, out_idx, in_idx).data() ==
          materialized_conv(conv, out_idx, in_idx, x).data());
  }
}

TEST_CASE("mask corner cases") {
  Rng rng(103);
  DynConvLayer conv(4, 3, 3, 1, 1, 0, true, 0.2, 77);
  Tensor x = rand_tensor({2, 3, 5, 5}, rng);

  // all indices = full forward
  Tensor full = conv.forward_sliced(x, 4, 3);
  Tensor masked_all = conv.forward_masked(x, iota_idx(4), iota_idx(3));
  CHECK(full.data() == masked_all.data());

  // single filter selection: output equals that filter's response
  Tensor f0 = conv.forward_masked(x, {0}, iota_idx(3));
  CHECK(f0.shape() == Shape{2, 1, 5, 5});
  const auto& full_vals = full.data();
  std::vector<double> chan0(full_vals.begin(), full_vals.begin() + 25);
  std::vector<double> got0(f0.data().begin(), f0.data().begin() + 25);
  CHECK(chan0 == got0);

  CHECK_THROWS_AS(conv.forward_masked(x, {0, 9}, iota_idx(3)), TensorError);
}

TEST_CASE("gradients flow only to selected weights") {
  Rng rng(104);
  DynDenseLayer layer(6, 4, 0, false, 0.2, 7);
  const std::vector<std::int64_t> out_idx{1, 4};
  const std::vector<std::int64_t> in_idx{0, 3};
  Tensor x = rand_tensor({3, 2}, rng);
  layer.weight().zero_grad();
  layer.bias().zero_grad();
  backward(mean(layer.forward_masked(x, out_idx, in_idx)));

  const auto active = layer.weight_activity_masked(out_idx, in_idx);
  const auto& grads = layer.weight().grad();
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!active[i]) CHECK(grads[i] == 0.0);
  }
  const auto bias_active = layer.bias_activity_masked(out_idx);
  const auto& bias_grads = layer.bias().grad();
  for (std::size_t i = 0; i < bias_grads.size(); ++i) {
    if (!bias_active[i]) CHECK(bias_grads[i] == 0.0);
  }
}

TEST_CASE("grow preserves existing weights bitwise") {
  DynConvLayer layer(6, 3, 3, 1, 1, 0, false, 0.2, 55);
  layer.set_active(4, 3);
  const std::vector<double> before = layer.weight().data();

  SUBCASE("no-op grow leaves the store untouched") {
    layer.grow(4, 3, GrowthInit{InitRule::kFanInScaledNormal, 0.0, 999});
    CHECK(layer.weight().data() == before);
    CHECK(layer.active_out() == 4);
  }

  SUBCASE("growing output filters keeps the old block and the forward on it") {
    Rng rng(105);
    Tensor x = rand_tensor({2, 3, 4, 4}, rng);
    const std::vector<double> pre_fwd = layer.forward_sliced(x, 4, 3).data();

    layer.grow(6, 3, GrowthInit{InitRule::kFanInScaledNormal, 0.0, 999});
    CHECK(layer.active_out() == 6);
    // old active block bitwise unchanged
    for (std::int64_t o = 0; o < 4; ++o) {
      for (std::int64_t rest = 0; rest < 3 * 9; ++rest) {
        const std::size_t at = static_cast<std::size_t>(o * 3 * 9 + rest);
        CHECK(layer.weight().data()[at] == before[at]);
      }
    }
    // two new filters appeared with fresh values
    bool any_new_nonzero = false;
    for (std::size_t at = 4 * 27; at < 6 * 27; ++at) {
      if (layer.weight().data()[at] != before[at]) any_new_nonzero = true;
    }
    CHECK(any_new_nonzero);
    // forward restricted to the old slice is bitwise identical
    CHECK(layer.forward_sliced(x, 4, 3).data() == pre_fwd);
  }

  SUBCASE("same growth seed reproduces the new weights bitwise") {
    DynConvLayer twin(6, 3, 3, 1, 1, 0, false, 0.2, 55);
    twin.set_active(4, 3);
    layer.grow(6, 3, GrowthInit{InitRule::kFanInScaledNormal, 0.0, 1234});
    twin.grow(6, 3, GrowthInit{InitRule::kFanInScaledNormal, 0.0, 1234});
    CHECK(layer.weight().data() == twin.weight().data());
  }

  SUBCASE("shrinking via grow is rejected") {
    CHECK_THROWS_WITH_AS(layer.grow(3, 3, GrowthInit{}), doctest::Contains("shrink"), TensorError);
    CHECK_THROWS_AS(layer.grow(7, 3, GrowthInit{}), TensorError);
  }
}

TEST_CASE("sample_mask sizes, determinism, and uniformity") {
  Discriminator d = Discriminator::make_point(2, {8, 8, 8}, 0.2, 9);

  FilterMask all = sample_mask(d, 1.0, {}, 333);
  for (std::int64_t l = 0; l < 3; ++l) {
    CHECK(all.selected[static_cast<std::size_t>(l)] == iota_idx(8));
  }

  FilterMask half = sample_mask(d, 0.5, {}, 334);
  for (const auto& idx : half.selected) CHECK(idx.size() == 4);

  FilterMask excl = sample_mask(d, 0.5, {0, 1}, 335);
  CHECK(excl.selected[0].size() == 8);
  CHECK(excl.selected[1].size() == 8);
  CHECK(excl.selected[2].size() == 4);

  // round-half-up and the >=1 clamp
  Discriminator d3 = Discriminator::make_point(2, {3, 5, 1}, 0.2, 10);
  FilterMask odd = sample_mask(d3, 0.5, {}, 336);
  CHECK(odd.selected[0].size() == 2);  // 1.5 rounds up
  CHECK(odd.selected[1].size() == 3);  // 2.5 rounds up
  CHECK(odd.selected[2].size() == 1);  // clamped to 1

  CHECK(sample_mask(d, 0.5, {}, 777).selected == sample_mask(d, 0.5, {}, 777).selected);
  CHECK_THROWS_AS(sample_mask(d, 0.0, {}, 1), TensorError);
  CHECK_THROWS_AS(sample_mask(d, 1.5, {}, 1), TensorError);

  // Monte-Carlo uniformity: each filter of an 8-wide layer selected with
  // frequency 0.5 +- 0.02 over 10000 draws.
  std::vector<std::int64_t> counts(8, 0);
  Rng stream(2024);
  const int draws = 10000;
  for (int t = 0; t < draws; ++t) {
    FilterMask m = sample_mask(d, 0.5, {}, stream);
    for (auto i : m.selected[0]) counts[static_cast<std::size_t>(i)]++;
  }
  for (auto c : counts) {
    const double freq = static_cast<double>(c) / draws;
    CHECK(std::fabs(freq - 0.5) < 0.02);
  }
}

TEST_CASE("parameter and flop accounting") {
  // dense 4x3 + bias, fully active -> 16 parameters
  Discriminator d1 = Discriminator::make_point(3, {4}, 0.2, 1);
  // trunk dense 4*3+4 = 16, head 4+1 = 5
  CHECK(d1.param_count_for({4}) == 16 + 5);

  // conv O=2,I=3,k=3 fully active -> 2*3*9+2 = 56 parameters
  DynConvLayer conv(2, 3, 3, 2, 1, 0, false, 0.2, 3);
  CHECK(conv.max_out() * conv.max_in() * conv.ksize() * conv.ksize() + conv.max_out() == 56);

  Discriminator d = Discriminator::make_point(2, {64, 64, 64}, 0.2, 5);
  const std::int64_t full_params = d.param_count_for(d.base_widths());
  const std::int64_t full_flops = d.flops_for(d.base_widths());
  CHECK(full_params == (64 * 2 + 64) + (64 * 64 + 64) * 2 + (64 + 1));
  CHECK(full_flops == 64 * 3 + 64 * 65 * 2 + 65);

  // width monotonicity in the accounting
  CHECK(d.param_count_for({32, 32, 32}) < full_params);
  CHECK(d.flops_for({32, 32, 32}) < full_flops);

  FilterMask m = sample_mask(d, 0.5, {}, 9);
  CHECK(d.param_count_masked(m) == d.param_count_for({32, 32, 32}));
}

TEST_CASE("discriminator emits one logit at every capacity state") {
  Rng rng(106);
  Discriminator d = Discriminator::make_point(2, {16, 16, 16}, 0.2, 12);
  Tensor x = rand_tensor({5, 2}, rng);
  CHECK(d.forward_full(x).shape() == Shape{5, 1});
  CHECK(d.forward_sliced(x, {8, 8, 8}).shape() == Shape{5, 1});
  FilterMask m = sample_mask(d, 0.5, {0}, 1);
  CHECK(d.forward_masked(x, m).shape() == Shape{5, 1});

  Discriminator ds = Discriminator::make_sprite(1, 16, {4, 8, 8, 8}, 0.2, 13);
  Tensor img = rand_tensor({2, 1, 16, 16}, rng);
  CHECK(ds.forward_full(img).shape() == Shape{2, 1});
  CHECK(ds.forward_sliced(img, {2, 4, 4, 4}).shape() == Shape{2, 1});
  FilterMask ms = sample_mask(ds, 0.5, {0, 1}, 2);
  CHECK(ds.forward_masked(img, ms).shape() == Shape{2, 1});
}

TEST_CASE("network masked forward equals the sliced network built from selected weights") {
  Rng rng(107);
  Discriminator d = Discriminator::make_point(2, {6, 6, 6}, 0.2, 21);
  Tensor x = rand_tensor({4, 2}, rng);
  FilterMask m = sample_mask(d, 0.5, {}, 31);

  // chain the per-layer materialization by hand
  Tensor h = x;
  std::vector<std::int64_t> in_idx = {0, 1};
  for (std::int64_t l = 0; l < 3; ++l) {
    h = leaky_relu(materialized_dense(d.dense_layers()[static_cast<std::size_t>(l)],
                                      m.selected[static_cast<std::size_t>(l)], in_idx, h),
                   0.2);
    in_idx = m.selected[static_cast<std::size_t>(l)];
  }
  Tensor expected = materialized_dense(d.head(), {0}, in_idx, h);
  CHECK(d.forward_masked(x, m).data() == expected.data());
}

TEST_CASE("grow_to walks the whole trunk and the head input") {
  Discriminator d = Discriminator::make_point(2, {8, 8, 8}, 0.2, 77);
  d.set_active_widths({4, 4, 4});
  CHECK(d.active_widths() == std::vector<std::int64_t>{4, 4, 4});
  CHECK(d.head().active_in() == 4);

  const std::vector<double> head_before = d.head().weight().data();
  d.grow_to({6, 6, 6}, GrowthInit{InitRule::kFanInScaledNormal, 0.0, 88});
  CHECK(d.active_widths() == std::vector<std::int64_t>{6, 6, 6});
  CHECK(d.head().active_in() == 6);
  // head columns 0..3 untouched
  for (std::size_t i = 0; i < 4; ++i) CHECK(d.head().weight().data()[i] == head_before[i]);
}

TEST_CASE("generator is fixed capacity") {
  Rng rng(108);
  Generator g = Generator::make_point(16, {64, 64, 64}, 2, 0.2, 5);
  Tensor z = rand_tensor({3, 16}, rng);
  Tensor out = g.forward(z);
  CHECK(out.shape() == Shape{3, 2});
  for (double v : out.data()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
  CHECK(g.param_count() == (64 * 16 + 64) + (64 * 64 + 64) * 2 + (2 * 64 + 2));

  Generator gs = Generator::make_sprite(32, 0.2, 6);
  Tensor zs = rand_tensor({2, 32}, rng);
  Tensor img = gs.forward(zs);
  CHECK(img.shape() == Shape{2, 1, 16, 16});
  for (double v : img.data()) {
    CHECK(v > -1.0);
    CHECK(v < 1.0);
  }
}
