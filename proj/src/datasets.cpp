#include "dyncap/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace dyncap {

namespace {

constexpr double kRing8Radius = 2.0;
constexpr double kRing8NormScale = 2.5;
constexpr double kMoonsNormScale = 1.5;

double clamp_unit(double v) { return std::clamp(v, -1.0, 1.0); }

void generate_ring8(const DatasetSpec& spec, Rng& rng, std::vector<double>& out) {
  const auto centers = ring8_raw_centers();
  out.resize(static_cast<std::size_t>(spec.n_samples) * 2);
  for (std::int64_t i = 0; i < spec.n_samples; ++i) {
    const auto& c = centers[static_cast<std::size_t>(rng.below(8))];
    const double x = c[0] + spec.noise * rng.gaussian();
    const double y = c[1] + spec.noise * rng.gaussian();
    out[static_cast<std::size_t>(2 * i)] = clamp_unit(x / kRing8NormScale);
    out[static_cast<std::size_t>(2 * i + 1)] = clamp_unit(y / kRing8NormScale);
  }
}

void generate_two_moons(const DatasetSpec& spec, Rng& rng, std::vector<double>& out) {
  out.resize(static_cast<std::size_t>(spec.n_samples) * 2);
  for (std::int64_t i = 0; i < spec.n_samples; ++i) {
    const bool lower = rng.below(2) == 1;
    const double t = rng.uniform() * std::numbers::pi;
    double x, y;
    if (!lower) {
      x = std::cos(t);
      y = std::sin(t);
    } else {
      x = 1.0 - std::cos(t);
      y = 0.5 - std::sin(t);
    }
    x += spec.noise * rng.gaussian();
    y += spec.noise * rng.gaussian();
    out[static_cast<std::size_t>(2 * i)] = clamp_unit((x - 0.5) / kMoonsNormScale);
    out[static_cast<std::size_t>(2 * i + 1)] = clamp_unit((y - 0.25) / kMoonsNormScale);
  }
}

// Procedural 16x16 grayscale sprites: one or two antialiased shapes
// (axis-aligned rectangle or disc) on a -1 background.
void generate_sprites(const DatasetSpec& spec, Rng& rng, std::vector<double>& out) {
  constexpr std::int64_t kSide = 16;
  out.assign(static_cast<std::size_t>(spec.n_samples) * kSide * kSide, 0.0);
  std::vector<double> canvas(kSide * kSide);
  for (std::int64_t img = 0; img < spec.n_samples; ++img) {
    std::fill(canvas.begin(), canvas.end(), 0.0);
    const std::int64_t n_shapes = 1 + rng.below(2);
    for (std::int64_t s = 0; s < n_shapes; ++s) {
      const bool disc = rng.below(2) == 0;
      const double intensity = 0.4 + 0.6 * rng.uniform();
      if (disc) {
        const double cx = 3.0 + 10.0 * rng.uniform();
        const double cy = 3.0 + 10.0 * rng.uniform();
        const double r = 2.0 + 3.0 * rng.uniform();
        for (std::int64_t py = 0; py < kSide; ++py) {
          for (std::int64_t px = 0; px < kSide; ++px) {
            const double dx = static_cast<double>(px) + 0.5 - cx;
            const double dy = static_cast<double>(py) + 0.5 - cy;
            const double cov = std::clamp(r + 0.5 - std::sqrt(dx * dx + dy * dy), 0.0, 1.0);
            auto& cell = canvas[static_cast<std::size_t>(py * kSide + px)];
            cell = std::max(cell, cov * intensity);
          }
        }
      } else {
        const double x0 = 1.0 + 9.0 * rng.uniform();
        const double y0 = 1.0 + 9.0 * rng.uniform();
        const double w = 3.0 + 5.0 * rng.uniform();
        const double h = 3.0 + 5.0 * rng.uniform();
        for (std::int64_t py = 0; py < kSide; ++py) {
          for (std::int64_t px = 0; px < kSide; ++px) {
            const double ox = std::clamp(std::min(x0 + w, static_cast<double>(px) + 1.0) -
                                             std::max(x0, static_cast<double>(px)),
                                         0.0, 1.0);
            const double oy = std::clamp(std::min(y0 + h, static_cast<double>(py) + 1.0) -
                                             std::max(y0, static_cast<double>(py)),
                                         0.0, 1.0);
            auto& cell = canvas[static_cast<std::size_t>(py * kSide + px)];
            cell = std::max(cell, ox * oy * intensity);
          }
        }
      }
    }
    const std::size_t at = static_cast<std::size_t>(img) * kSide * kSide;
    for (std::int64_t p = 0; p < kSide * kSide; ++p) {
      double v = 2.0 * canvas[static_cast<std::size_t>(p)] - 1.0;
      if (spec.noise > 0.0) v += spec.noise * rng.gaussian();
      out[at + static_cast<std::size_t>(p)] = clamp_unit(v);
    }
  }
}

}  // namespace

DatasetKind dataset_kind_from_string(const std::string& name) {
  if (name == "ring8") return DatasetKind::kRing8;
  if (name == "two_moons") return DatasetKind::kTwoMoons;
  if (name == "sprites16") return DatasetKind::kSprites16;
  throw std::invalid_argument("unknown dataset kind: " + name);
}

std::string dataset_kind_name(DatasetKind kind) {
  switch (kind) {
    case DatasetKind::kRing8: return "ring8";
    case DatasetKind::kTwoMoons: return "two_moons";
    case DatasetKind::kSprites16: return "sprites16";
  }
  return "?";
}

std::vector<std::array<double, 2>> ring8_raw_centers() {
  std::vector<std::array<double, 2>> centers(8);
  for (int k = 0; k < 8; ++k) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(k) / 8.0;
    centers[static_cast<std::size_t>(k)] = {kRing8Radius * std::cos(a), kRing8Radius * std::sin(a)};
  }
  return centers;
}

Shape Dataset::sample_shape() const {
  Shape s = samples.shape();
  s.erase(s.begin());
  return s;
}

Tensor Dataset::gather(const std::vector<std::int64_t>& rows) const {
  const Shape& full = samples.shape();
  const std::int64_t per = shape_numel(full) / full[0];
  Shape out_shape = full;
  out_shape[0] = static_cast<std::int64_t>(rows.size());
  std::vector<double> out(static_cast<std::size_t>(per) * rows.size());
  const auto& src = samples.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[r] * per), per,
                out.begin() + static_cast<std::ptrdiff_t>(static_cast<std::int64_t>(r) * per));
  }
  return Tensor::from_data(std::move(out_shape), std::move(out), false);
}

Tensor Dataset::train_split() const { return gather(train_idx); }
Tensor Dataset::val_split() const { return gather(val_idx); }

Dataset generate(const DatasetSpec& spec) {
  if (spec.n_samples < 2) throw std::invalid_argument("generate: need at least 2 samples");
  if (spec.noise < 0.0) throw std::invalid_argument("generate: noise must be nonnegative");

  Rng rng(derive_stream_seed(spec.seed, 0xda7aULL));
  Dataset ds;
  ds.spec = spec;

  std::vector<double> values;
  switch (spec.kind) {
    case DatasetKind::kRing8: {
      generate_ring8(spec, rng, values);
      ds.samples = Tensor::from_data(Shape{spec.n_samples, 2}, std::move(values), false);
      ds.norm_scale = kRing8NormScale;
      for (const auto& c : ring8_raw_centers()) {
        ds.mode_centers.push_back({c[0] / kRing8NormScale, c[1] / kRing8NormScale});
      }
      break;
    }
    case DatasetKind::kTwoMoons: {
      generate_two_moons(spec, rng, values);
      ds.samples = Tensor::from_data(Shape{spec.n_samples, 2}, std::move(values), false);
      ds.norm_scale = kMoonsNormScale;
      break;
    }
    case DatasetKind::kSprites16: {
      generate_sprites(spec, rng, values);
      ds.samples = Tensor::from_data(Shape{spec.n_samples, 1, 16, 16}, std::move(values), false);
      ds.norm_scale = 1.0;
      break;
    }
  }

  // Deterministic shuffle, last 10% (at least 1) held out for validation.
  std::vector<std::int64_t> perm(static_cast<std::size_t>(spec.n_samples));
  for (std::int64_t i = 0; i < spec.n_samples; ++i) perm[static_cast<std::size_t>(i)] = i;
  Rng split_rng(derive_stream_seed(spec.seed, 0x5917ULL));
  for (std::int64_t i = spec.n_samples - 1; i > 0; --i) {
    const std::int64_t j = split_rng.below(i + 1);
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  std::int64_t n_val = spec.n_samples / 10;
  if (n_val < 1) n_val = 1;
  ds.train_idx.assign(perm.begin(), perm.end() - n_val);
  ds.val_idx.assign(perm.end() - n_val, perm.end());
  return ds;
}

Tensor sample_batch(const Dataset& dataset, Rng& rng, std::int64_t batch_size) {
  if (batch_size < 1 || batch_size > dataset.train_size()) {
    throw std::invalid_argument("sample_batch: batch size " + std::to_string(batch_size) +
                                " exceeds train split of " + std::to_string(dataset.train_size()));
  }
  std::vector<std::int64_t> rows(static_cast<std::size_t>(batch_size));
  for (auto& r : rows) r = dataset.train_idx[static_cast<std::size_t>(rng.below(dataset.train_size()))];
  return dataset.gather(rows);
}

const std::vector<RegimePreset>& regime_presets() {
  static const std::vector<RegimePreset> presets = {
      {"limited-tiny", 64},
      {"limited", 1024},
      {"sufficient", 65536},
  };
  return presets;
}

std::int64_t regime_samples(const std::string& name) {
  for (const auto& p : regime_presets()) {
    if (p.name == name) return p.n_samples;
  }
  throw std::invalid_argument("unknown regime preset: " + name);
}

}  // namespace dyncap
