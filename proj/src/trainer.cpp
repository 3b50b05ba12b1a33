#include "dyncap/trainer.hpp"

#include <algorithm>
#include <cmath>

#include "dyncap/checkpoint.hpp"

namespace dyncap {

namespace {

constexpr std::uint64_t kLatentStream = 1;
constexpr std::uint64_t kMaskStream = 2;
constexpr std::uint64_t kDataStream = 3;
constexpr std::uint64_t kEvalStreamBase = 0xe7a10000ULL;

// Architectures per dataset kind (the generator side is never modified by
// capacity events; the discriminator trunk must match schedule.base_widths).
constexpr std::int64_t kPointLatent = 16;
const std::vector<std::int64_t> kPointGenHidden = {64, 64, 64};
const std::vector<std::int64_t> kPointDiscWidths = {64, 64, 64};
constexpr std::int64_t kSpriteLatent = 32;
const std::vector<std::int64_t> kSpriteDiscChannels = {16, 32, 64, 128};
constexpr double kLeakySlope = 0.2;

constexpr std::int64_t kGapProbeCap = 2048;

bool is_point_kind(DatasetKind kind) { return kind != DatasetKind::kSprites16; }

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be positive");
  if (total_iters < 1) throw std::invalid_argument("TrainConfig: total_iters must be positive");
  if (lr_g <= 0.0 || lr_d <= 0.0) throw std::invalid_argument("TrainConfig: learning rates must be positive");
  if (adam_eps <= 0.0) throw std::invalid_argument("TrainConfig: adam_eps must be positive");
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0) {
    throw std::invalid_argument("TrainConfig: adam betas must lie in [0,1)");
  }
  if (dataset.n_samples < 2 * batch_size) {
    throw std::invalid_argument("TrainConfig: dataset needs at least 2*batch_size = " +
                                std::to_string(2 * batch_size) + " samples, has " +
                                std::to_string(dataset.n_samples));
  }
  if (eval_cadence < 1) throw std::invalid_argument("TrainConfig: eval_cadence must be positive");
  if (eval_samples < 1024) throw std::invalid_argument("TrainConfig: eval_samples must be at least 1024");
  schedule.validate();
}

// ---------------------------------------------------------------------------
// Losses

Tensor d_loss(const Tensor& logits_real, const Tensor& logits_fake) {
  if (logits_real.numel() != logits_fake.numel()) {
    throw TensorError("d_loss: real and fake batches differ: " + shape_str(logits_real.shape()) +
                      " vs " + shape_str(logits_fake.shape()));
  }
  Tensor real_term = mean(softplus(scale(logits_real, -1.0)));
  Tensor fake_term = mean(softplus(logits_fake));
  return add(real_term, fake_term);
}

Tensor g_loss(const Tensor& logits_fake) {
  if (logits_fake.numel() == 0) throw TensorError("g_loss: empty batch");
  return mean(softplus(scale(logits_fake, -1.0)));
}

// ---------------------------------------------------------------------------
// Optimizer

void adam_update(Tensor& param, AdamState& state, const AdamHyper& hyper,
                 const std::vector<std::uint8_t>& active, std::int64_t step_for_error) {
  auto& values = param.mutable_data();
  const std::size_t n = values.size();
  if (state.m.size() != n) state.resize(n);
  if (!active.empty() && active.size() != n) {
    throw TensorError("adam_update: activity mask size mismatch");
  }
  if (!param.has_grad()) {
    throw TensorError("adam_update: parameter has no gradient");
  }
  const auto& grads = param.grad();

  for (std::size_t i = 0; i < n; ++i) {
    if (!active.empty() && !active[i]) continue;
    const double g = grads[i];
    if (!std::isfinite(g)) {
      throw TrainingDiverged(step_for_error, "non-finite gradient in parameter update");
    }
    state.age[i] += 1;
    const double t = static_cast<double>(state.age[i]);
    state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
    state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
    const double m_hat = state.m[i] / (1.0 - std::pow(hyper.beta1, t));
    const double v_hat = state.v[i] / (1.0 - std::pow(hyper.beta2, t));
    values[i] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
  }
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(TrainConfig config)
    : cfg_(std::move(config)),
      data_(generate(cfg_.dataset)),
      g_(is_point_kind(cfg_.dataset.kind)
             ? Generator::make_point(kPointLatent, kPointGenHidden, 2, kLeakySlope,
                                     derive_stream_seed(cfg_.seed, 10))
             : Generator::make_sprite(kSpriteLatent, kLeakySlope, derive_stream_seed(cfg_.seed, 10))),
      d_(is_point_kind(cfg_.dataset.kind)
             ? Discriminator::make_point(2, kPointDiscWidths, kLeakySlope,
                                         derive_stream_seed(cfg_.seed, 11))
             : Discriminator::make_sprite(1, 16, kSpriteDiscChannels, kLeakySlope,
                                          derive_stream_seed(cfg_.seed, 11))),
      latent_rng_(derive_stream_seed(cfg_.seed, kLatentStream)),
      mask_rng_(derive_stream_seed(cfg_.seed, kMaskStream)),
      data_rng_(derive_stream_seed(cfg_.seed, kDataStream)) {
  cfg_.validate();
  if (cfg_.schedule.base_widths != d_.base_widths()) {
    throw std::invalid_argument("Trainer: schedule base widths do not match the discriminator trunk");
  }

  auto g_params = g_.parameters();
  g_opt_.resize(g_params.size());
  for (std::size_t i = 0; i < g_params.size(); ++i) {
    g_opt_[i].resize(static_cast<std::size_t>(g_params[i]->numel()));
  }
  auto d_params = d_.parameters();
  d_opt_.resize(d_params.size());
  for (std::size_t i = 0; i < d_params.size(); ++i) {
    d_opt_[i].resize(static_cast<std::size_t>(d_params[i]->numel()));
  }

  hyper_g_ = AdamHyper{cfg_.lr_g, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps};
  hyper_d_ = AdamHyper{cfg_.lr_d, cfg_.adam_beta1, cfg_.adam_beta2, cfg_.adam_eps};

  widths_ = widths_at(cfg_.schedule, 0);
  d_.set_active_widths(widths_);
}

double Trainer::current_coeff() const { return coefficient_at(cfg_.schedule, step_); }

std::int64_t Trainer::active_params() const {
  if (mask_) return d_.param_count_masked(*mask_);
  return d_.param_count_for(widths_);
}

std::int64_t Trainer::active_flops() const {
  if (mask_) return d_.flops_masked(*mask_);
  return d_.flops_for(widths_);
}

Tensor Trainer::d_forward(const Tensor& x) const {
  if (mask_) return d_.forward_masked(x, *mask_);
  return d_.forward_sliced(x, widths_);
}

Tensor Trainer::latent_batch(std::int64_t n) {
  const std::int64_t latent = g_.latent_dim();
  std::vector<double> z(static_cast<std::size_t>(n * latent));
  for (auto& v : z) v = latent_rng_.gaussian();
  return Tensor::from_data(Shape{n, latent}, std::move(z), false);
}

Tensor Trainer::eval_latents(Rng& rng, std::int64_t n) const {
  const std::int64_t latent = g_.latent_dim();
  std::vector<double> z(static_cast<std::size_t>(n * latent));
  for (auto& v : z) v = rng.gaussian();
  return Tensor::from_data(Shape{n, latent}, std::move(z), false);
}

void Trainer::zero_param_grads(std::vector<Tensor*> params) {
  for (auto* p : params) p->zero_grad();
}

void Trainer::apply_capacity_event() {
  const CapacityEvent event = capacity_event_at(cfg_.schedule, step_);
  switch (event.kind) {
    case CapacityEvent::Kind::kNone:
      break;
    case CapacityEvent::Kind::kGrow: {
      GrowthInit init;
      init.seed = mask_rng_.next_u64();
      d_.grow_to(event.widths, init);
      widths_ = event.widths;
      break;
    }
    case CapacityEvent::Kind::kResampleMask:
      mask_ = sample_mask(d_, event.beta, cfg_.schedule.excluded_layers, mask_rng_);
      break;
  }
}

double Trainer::d_update(double* d_real_mean, double* d_fake_mean) {
  zero_param_grads(d_.parameters());

  Tensor real = sample_batch(data_, data_rng_, cfg_.batch_size);
  Tensor z = latent_batch(cfg_.batch_size);
  Tensor fake = g_.forward(z).detach();

  Tensor logits_real = d_forward(real);
  Tensor logits_fake = d_forward(fake);
  if (d_real_mean) *d_real_mean = mean(logits_real).item();
  if (d_fake_mean) *d_fake_mean = mean(logits_fake).item();

  Tensor loss = d_loss(logits_real, logits_fake);
  const double loss_value = loss.item();
  if (!std::isfinite(loss_value)) {
    throw TrainingDiverged(step_, "discriminator loss is not finite");
  }
  backward(loss);

  auto params = d_.parameters();
  auto activity = mask_ ? d_.activity_masked(*mask_) : d_.activity_sliced(widths_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_update(*params[i], d_opt_[i], hyper_d_, activity[i], step_);
  }
  return loss_value;
}

double Trainer::g_update() {
  zero_param_grads(g_.parameters());
  zero_param_grads(d_.parameters());

  Tensor z = latent_batch(cfg_.batch_size);
  Tensor fake = g_.forward(z);
  Tensor logits = cfg_.g_sees_masked_d ? d_forward(fake) : d_.forward_full(fake);

  Tensor loss = g_loss(logits);
  const double loss_value = loss.item();
  if (!std::isfinite(loss_value)) {
    throw TrainingDiverged(step_, "generator loss is not finite");
  }
  backward(loss);

  auto params = g_.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_update(*params[i], g_opt_[i], hyper_g_, {}, step_);
  }
  return loss_value;
}

IterationRecord Trainer::step() {
  IterationRecord rec;
  rec.step = step_;
  apply_capacity_event();
  rec.coeff = current_coeff();
  rec.loss_d = d_update(&rec.d_real_mean, &rec.d_fake_mean);
  rec.loss_g = g_update();
  rec.active_params = active_params();
  rec.active_flops = active_flops();
  ++step_;
  return rec;
}

MetricReport Trainer::evaluate(std::int64_t n_samples) {
  MetricReport report;
  report.step = step_;
  report.n_samples = n_samples;

  // A throwaway stream keyed on (seed, step): deterministic, and the
  // training streams are left untouched.
  Rng rng(derive_stream_seed(cfg_.seed, kEvalStreamBase + static_cast<std::uint64_t>(step_)));

  const Shape per_sample = data_.sample_shape();
  const std::int64_t flat = shape_numel(per_sample);
  std::vector<double> fake_rows;
  fake_rows.reserve(static_cast<std::size_t>(n_samples * flat));
  std::int64_t remaining = n_samples;
  while (remaining > 0) {
    const std::int64_t chunk = std::min<std::int64_t>(remaining, 4096);
    Tensor fakes = g_.forward(eval_latents(rng, chunk));
    const auto& vals = fakes.data();
    fake_rows.insert(fake_rows.end(), vals.begin(), vals.end());
    remaining -= chunk;
  }

  const bool sprites = cfg_.dataset.kind == DatasetKind::kSprites16;
  if (sprites) {
    if (!pca_) {
      Tensor train_flat = reshape(data_.train_split(), Shape{data_.train_size(), flat});
      pca_ = fit_pca(train_flat, 16);
      auto projected = pca_->project_rows(train_flat.data(), data_.train_size());
      real_fit_ = fit_gaussian(projected, data_.train_size(), 16);
    }
    auto fake_proj = pca_->project_rows(fake_rows, n_samples);
    GaussianFit fake_fit = fit_gaussian(fake_proj, n_samples, 16);
    report.toy_frechet = frechet_distance(*real_fit_, fake_fit);
  } else {
    if (!real_fit_) real_fit_ = fit_gaussian(data_.train_split());
    GaussianFit fake_fit = fit_gaussian(fake_rows, n_samples, flat);
    report.toy_frechet = frechet_distance(*real_fit_, fake_fit);
  }

  // Memorization probe at full capacity, masks disabled.
  const std::int64_t train_take = std::min<std::int64_t>(data_.train_size(), kGapProbeCap);
  const std::int64_t val_take = std::min<std::int64_t>(data_.val_size(), kGapProbeCap);
  std::vector<std::int64_t> train_rows(data_.train_idx.begin(), data_.train_idx.begin() + train_take);
  std::vector<std::int64_t> val_rows(data_.val_idx.begin(), data_.val_idx.begin() + val_take);
  report.overfit_gap = overfit_gap(d_, data_.gather(train_rows), data_.gather(val_rows));

  if (!data_.mode_centers.empty()) {
    Tensor fake_pts = Tensor::from_data(Shape{n_samples, flat}, fake_rows, false);
    const double radius = 3.0 * cfg_.dataset.noise / data_.norm_scale;
    report.modes_covered = mode_coverage(fake_pts, data_.mode_centers,
                                         radius > 0.0 ? radius : 0.05);
  }
  return report;
}

RunResult Trainer::run(const std::function<void(const IterationRecord&)>& on_iter,
                       const std::function<void(const MetricReport&)>& on_eval) {
  RunResult result;
  result.records.reserve(static_cast<std::size_t>(cfg_.total_iters));
  while (step_ < cfg_.total_iters) {
    IterationRecord rec;
    try {
      rec = step();
    } catch (const TrainingDiverged& e) {
      result.diverged = true;
      result.diagnostic = e.what();
      break;
    }
    result.records.push_back(rec);
    if (on_iter) on_iter(rec);
    if (step_ % cfg_.eval_cadence == 0 || step_ == cfg_.total_iters) {
      MetricReport report = evaluate(cfg_.eval_samples);
      result.evals.push_back(report);
      if (on_eval) on_eval(report);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpointing

namespace {

void append_param_arrays(std::vector<NamedArray>& arrays, const std::string& prefix,
                         std::vector<Tensor*> params, const std::vector<AdamState>& opt) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string base = prefix + std::to_string(i);
    arrays.push_back({base, params[i]->shape(), params[i]->data()});
    const Shape flat{params[i]->numel()};
    arrays.push_back({base + ".m", flat, opt[i].m});
    arrays.push_back({base + ".v", flat, opt[i].v});
    std::vector<double> age(opt[i].age.size());
    for (std::size_t k = 0; k < age.size(); ++k) age[k] = static_cast<double>(opt[i].age[k]);
    arrays.push_back({base + ".age", flat, std::move(age)});
  }
}

void restore_param_arrays(const Checkpoint& ckpt, const std::string& prefix,
                          std::vector<Tensor*> params, std::vector<AdamState>& opt) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string base = prefix + std::to_string(i);
    const NamedArray* w = ckpt.find(base);
    const NamedArray* m = ckpt.find(base + ".m");
    const NamedArray* v = ckpt.find(base + ".v");
    const NamedArray* age = ckpt.find(base + ".age");
    if (!w || !m || !v || !age) throw std::runtime_error("checkpoint: missing arrays for " + base);
    if (w->shape != params[i]->shape()) {
      throw std::runtime_error("checkpoint: shape mismatch for " + base + ": stored " +
                               shape_str(w->shape) + ", expected " + shape_str(params[i]->shape()));
    }
    params[i]->mutable_data() = w->data;
    opt[i].m = m->data;
    opt[i].v = v->data;
    opt[i].age.resize(age->data.size());
    for (std::size_t k = 0; k < age->data.size(); ++k) {
      opt[i].age[k] = static_cast<std::uint64_t>(age->data[k]);
    }
  }
}

}  // namespace

void Trainer::save(const std::string& path) const {
  Checkpoint ckpt;
  ckpt.header.step = static_cast<std::uint64_t>(step_);
  for (auto w : widths_) ckpt.header.active_widths.push_back(static_cast<std::uint32_t>(w));
  for (const Rng* rng : {&latent_rng_, &mask_rng_, &data_rng_}) {
    for (auto word : rng->state_words()) ckpt.header.rng_words.push_back(word);
  }
  auto& self = const_cast<Trainer&>(*this);
  append_param_arrays(ckpt.arrays, "g.param", self.g_.parameters(), g_opt_);
  append_param_arrays(ckpt.arrays, "d.param", self.d_.parameters(), d_opt_);
  save_checkpoint(path, ckpt);
}

void Trainer::restore(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.header.active_widths.size() != widths_.size()) {
    throw std::runtime_error("checkpoint: trunk layout mismatch");
  }
  if (ckpt.header.rng_words.size() != 3 * Rng::kStateWords) {
    throw std::runtime_error("checkpoint: unexpected RNG state size");
  }

  step_ = static_cast<std::int64_t>(ckpt.header.step);
  for (std::size_t i = 0; i < widths_.size(); ++i) {
    widths_[i] = static_cast<std::int64_t>(ckpt.header.active_widths[i]);
  }
  d_.set_active_widths(widths_);

  std::array<std::uint64_t, Rng::kStateWords> words{};
  Rng* streams[3] = {&latent_rng_, &mask_rng_, &data_rng_};
  for (int s = 0; s < 3; ++s) {
    for (int k = 0; k < Rng::kStateWords; ++k) {
      words[static_cast<std::size_t>(k)] =
          ckpt.header.rng_words[static_cast<std::size_t>(s * Rng::kStateWords + k)];
    }
    streams[s]->restore(words);
  }

  restore_param_arrays(ckpt, "g.param", g_.parameters(), g_opt_);
  restore_param_arrays(ckpt, "d.param", d_.parameters(), d_opt_);
  mask_.reset();  // decrease mode resamples at the next step's event
}

}  // namespace dyncap
