#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyncap/datasets.hpp"
#include "dyncap/metrics.hpp"
#include "dyncap/networks.hpp"
#include "dyncap/rng.hpp"
#include "dyncap/schedule.hpp"
#include "dyncap/tensor.hpp"

namespace dyncap {

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::int64_t step, const std::string& what)
      : std::runtime_error("step " + std::to_string(step) + ": " + what), step_(step) {}
  std::int64_t step() const { return step_; }

 private:
  std::int64_t step_;
};

struct AdamHyper {
  double lr = 2e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;
  double eps = 1e-8;
};

// Moments aligned with a full-capacity parameter store. `age` counts the
// updates each entry has actually received, so a freshly grown filter gets
// first-step bias correction as if its optimizer just started.
struct AdamState {
  std::vector<double> m, v;
  std::vector<std::uint64_t> age;
  void resize(std::size_t n) {
    m.assign(n, 0.0);
    v.assign(n, 0.0);
    age.assign(n, 0);
  }
};

// Updates entries flagged in `active` (empty = all) from param.grad().
// Throws TrainingDiverged on a non-finite active gradient.
void adam_update(Tensor& param, AdamState& state, const AdamHyper& hyper,
                 const std::vector<std::uint8_t>& active, std::int64_t step_for_error = -1);

// -mean(log sigmoid(real)) - mean(log(1 - sigmoid(fake))), evaluated through
// the stable identities log sigmoid(t) = -softplus(-t),
// log(1 - sigmoid(t)) = -softplus(t).
Tensor d_loss(const Tensor& logits_real, const Tensor& logits_fake);
// Non-saturating generator loss -mean(log sigmoid(fake)).
Tensor g_loss(const Tensor& logits_fake);

struct TrainConfig {
  std::int64_t batch_size = 32;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-8;
  std::int64_t total_iters = 3000;
  CapacitySchedule schedule;
  DatasetSpec dataset;
  std::uint64_t seed = 1;
  std::int64_t eval_cadence = 500;
  std::int64_t eval_samples = 8192;
  // Whether the generator update sees the same masked discriminator as the
  // preceding D update (default) or the full-capacity one.
  bool g_sees_masked_d = true;

  void validate() const;
};

struct IterationRecord {
  std::int64_t step = 0;
  double loss_d = 0.0;
  double loss_g = 0.0;
  double d_real_mean = 0.0;
  double d_fake_mean = 0.0;
  double coeff = 0.0;
  std::int64_t active_params = 0;
  std::int64_t active_flops = 0;
};

struct RunResult {
  std::vector<IterationRecord> records;
  std::vector<MetricReport> evals;
  bool diverged = false;
  std::string diagnostic;
};

// Adversarial loop: one discriminator update and one generator update per
// iteration, both under the capacity view installed by that iteration's
// schedule event. Fully deterministic given the config seed.
//
// Stream use per iteration, in order: the mask stream feeds the capacity
// event (mask seed or growth seed), the data stream draws the real batch,
// the latent stream draws z for the D update and then z for the G update.
class Trainer {
 public:
  explicit Trainer(TrainConfig config);

  IterationRecord step();
  RunResult run(const std::function<void(const IterationRecord&)>& on_iter = {},
                const std::function<void(const MetricReport&)>& on_eval = {});

  // Sub-steps, exposed so tests can probe between them.
  void apply_capacity_event();
  double d_update(double* d_real_mean = nullptr, double* d_fake_mean = nullptr);
  double g_update();
  MetricReport evaluate(std::int64_t n_samples);

  std::int64_t current_step() const { return step_; }
  double current_coeff() const;
  std::vector<std::int64_t> current_widths() const { return widths_; }
  const FilterMask* current_mask() const { return mask_ ? &*mask_ : nullptr; }
  std::int64_t active_params() const;
  std::int64_t active_flops() const;

  Generator& generator() { return g_; }
  Discriminator& discriminator() { return d_; }
  const Discriminator& discriminator() const { return d_; }
  const Dataset& dataset() const { return data_; }
  const TrainConfig& config() const { return cfg_; }

  void save(const std::string& path) const;
  void restore(const std::string& path);

 private:
  Tensor d_forward(const Tensor& x) const;
  Tensor latent_batch(std::int64_t n);
  Tensor eval_latents(Rng& rng, std::int64_t n) const;
  void zero_param_grads(std::vector<Tensor*> params);

  TrainConfig cfg_;
  AdamHyper hyper_g_, hyper_d_;
  Dataset data_;
  Generator g_;
  Discriminator d_;
  std::vector<AdamState> g_opt_, d_opt_;
  Rng latent_rng_, mask_rng_, data_rng_;
  std::int64_t step_ = 0;
  std::vector<std::int64_t> widths_;
  std::optional<FilterMask> mask_;
  std::optional<PcaProjector> pca_;
  std::optional<GaussianFit> real_fit_;
};

}  // namespace dyncap
