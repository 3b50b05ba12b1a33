#pragma once

// Shared helpers for the test binaries: random tensors and the
// materialization oracle (an ordinary layer built from exactly the
// selected weights, run through the plain primitive path).

#include <cstdint>
#include <vector>

#include "dyncap/layers.hpp"
#include "dyncap/rng.hpp"
#include "dyncap/tensor.hpp"

namespace dyncap_test {

inline dyncap::Tensor rand_tensor(dyncap::Shape shape, dyncap::Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(dyncap::shape_numel(shape)));
  for (auto& x : v) x = -1.0 + 2.0 * rng.uniform();
  return dyncap::Tensor::from_data(std::move(shape), std::move(v), false);
}

inline std::vector<std::int64_t> iota_idx(std::int64_t n) {
  std::vector<std::int64_t> v(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

inline dyncap::Tensor materialized_dense(const dyncap::DynDenseLayer& layer,
                                         const std::vector<std::int64_t>& out_idx,
                                         const std::vector<std::int64_t>& in_idx,
                                         const dyncap::Tensor& input) {
  const auto& w = layer.weight().data();
  const auto& b = layer.bias().data();
  const std::int64_t max_in = layer.max_in();
  std::vector<double> sub_w;
  std::vector<double> sub_b;
  for (auto o : out_idx) {
    for (auto i : in_idx) sub_w.push_back(w[static_cast<std::size_t>(o * max_in + i)]);
    sub_b.push_back(b[static_cast<std::size_t>(o)]);
  }
  dyncap::Tensor wt = dyncap::Tensor::from_data(
      {static_cast<std::int64_t>(out_idx.size()), static_cast<std::int64_t>(in_idx.size())},
      std::move(sub_w));
  dyncap::Tensor bt =
      dyncap::Tensor::from_data({static_cast<std::int64_t>(out_idx.size())}, std::move(sub_b));
  return dyncap::add(dyncap::matmul(input, dyncap::transpose(wt)), bt);
}

inline dyncap::Tensor materialized_conv(const dyncap::DynConvLayer& layer,
                                        const std::vector<std::int64_t>& out_idx,
                                        const std::vector<std::int64_t>& in_idx,
                                        const dyncap::Tensor& input) {
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
  dyncap::Tensor wt = dyncap::Tensor::from_data(
      {static_cast<std::int64_t>(out_idx.size()), static_cast<std::int64_t>(in_idx.size()),
       layer.ksize(), layer.ksize()},
      std::move(sub_w));
  dyncap::Tensor bt =
      dyncap::Tensor::from_data({static_cast<std::int64_t>(out_idx.size())}, std::move(sub_b));
  return dyncap::conv2d(input, wt, bt, layer.stride(), layer.pad());
}

}  // namespace dyncap_test
