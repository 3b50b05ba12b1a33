#include "dyncap/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "dyncap/checkpoint.hpp"

namespace dyncap {

namespace fs = std::filesystem;

std::string fmt_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string run_dir_name(const ExperimentConfig& cfg) {
  return cfg.preset + "-" + cfg.regime + "-seed" + std::to_string(cfg.seed);
}

namespace {

double wall_now() {
  return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os << text;
}

const char* kMetricsHeader =
    "step,loss_d,loss_g,d_real_mean,d_fake_mean,coeff,active_params,active_flops,"
    "toy_frechet,overfit_gap,modes_covered,eval_samples\n";

void write_iteration_row(std::ostream& os, const IterationRecord& r) {
  os << r.step << ',' << fmt_real(r.loss_d) << ',' << fmt_real(r.loss_g) << ','
     << fmt_real(r.d_real_mean) << ',' << fmt_real(r.d_fake_mean) << ',' << fmt_real(r.coeff)
     << ',' << r.active_params << ',' << r.active_flops << ",,,,\n";
}

void write_eval_row(std::ostream& os, const MetricReport& m) {
  os << m.step << ",,,,,,,," << fmt_real(m.toy_frechet) << ',' << fmt_real(m.overfit_gap) << ','
     << m.modes_covered << ',' << m.n_samples << "\n";
}

}  // namespace

void dump_dataset(const Dataset& dataset, const std::string& path) {
  Checkpoint ckpt;
  ckpt.arrays.push_back({"samples", dataset.samples.shape(), dataset.samples.data()});
  auto idx_array = [](const char* name, const std::vector<std::int64_t>& idx) {
    std::vector<double> vals(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) vals[i] = static_cast<double>(idx[i]);
    return NamedArray{name, Shape{static_cast<std::int64_t>(idx.size())}, std::move(vals)};
  };
  ckpt.arrays.push_back(idx_array("train_idx", dataset.train_idx));
  ckpt.arrays.push_back(idx_array("val_idx", dataset.val_idx));
  save_checkpoint(path, ckpt);
}

RunArtifacts run_experiment(const ExperimentConfig& cfg) {
  RunArtifacts artifacts;
  const fs::path run_dir = fs::path(cfg.out_dir) / run_dir_name(cfg);
  fs::create_directories(run_dir);
  artifacts.run_dir = run_dir.string();

  // The config is echoed verbatim when it came from a file; the resolved
  // key set is written alongside either way.
  if (!cfg.source_text.empty()) {
    write_text_file((run_dir / "config.txt").string(), cfg.source_text);
  }
  write_text_file((run_dir / "config_resolved.txt").string(), resolved_config_text(cfg));

  TrainConfig tc = to_train_config(cfg);
  Trainer trainer(tc);

  std::ofstream csv((run_dir / "metrics.csv").string(), std::ios::binary | std::ios::trunc);
  csv << kMetricsHeader;

  const double t0 = wall_now();
  RunResult result = trainer.run(
      [&](const IterationRecord& r) { write_iteration_row(csv, r); },
      [&](const MetricReport& m) { write_eval_row(csv, m); });
  artifacts.wall_seconds = wall_now() - t0;
  csv.close();

  trainer.save((run_dir / "checkpoint.bin").string());
  if (cfg.dump_dataset) dump_dataset(trainer.dataset(), (run_dir / "dataset.bin").string());

  if (!result.evals.empty()) {
    artifacts.has_final_eval = true;
    artifacts.final_eval = result.evals.back();
  }

  std::ostringstream summary;
  summary << "preset,regime,dataset,seed,iters,final_toy_frechet,final_overfit_gap,"
             "final_modes_covered,diverged,wall_seconds\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  summary << cfg.preset << ',' << cfg.regime << ',' << cfg.dataset << ',' << cfg.seed << ','
          << cfg.iters << ','
          << fmt_real(artifacts.has_final_eval ? artifacts.final_eval.toy_frechet : nan) << ','
          << fmt_real(artifacts.has_final_eval ? artifacts.final_eval.overfit_gap : nan) << ','
          << (artifacts.has_final_eval ? artifacts.final_eval.modes_covered : -1) << ','
          << (result.diverged ? "true" : "false") << ',' << fmt_real(artifacts.wall_seconds) << "\n";
  write_text_file((run_dir / "summary.csv").string(), summary.str());
  if (result.diverged) {
    write_text_file((run_dir / "diverged.txt").string(), result.diagnostic + "\n");
  }

  artifacts.result = std::move(result);
  return artifacts;
}

// ---------------------------------------------------------------------------
// Grid

GridSummary run_grid(const ExperimentConfig& base, const std::vector<std::string>& presets,
                     const std::vector<std::string>& regimes,
                     const std::vector<std::uint64_t>& seeds, int threads) {
  struct Job {
    std::size_t cell;
    std::size_t slot;
    ExperimentConfig cfg;
  };

  GridSummary grid;
  std::vector<Job> jobs;
  for (const auto& preset : presets) {
    for (const auto& regime : regimes) {
      GridCell cell;
      cell.preset = preset;
      cell.regime = regime;
      cell.seeds = seeds;
      cell.final_frechet.assign(seeds.size(), std::numeric_limits<double>::quiet_NaN());
      cell.final_gap.assign(seeds.size(), std::numeric_limits<double>::quiet_NaN());
      const std::size_t cell_at = grid.cells.size();
      grid.cells.push_back(std::move(cell));
      for (std::size_t s = 0; s < seeds.size(); ++s) {
        ExperimentConfig cfg = base;
        cfg.preset = preset;
        cfg.regime = regime;
        cfg.seed = seeds[s];
        cfg.source_text.clear();
        jobs.push_back({cell_at, s, std::move(cfg)});
      }
    }
  }

  const double t0 = wall_now();
  std::atomic<std::size_t> next{0};
  std::mutex grid_mutex;
  auto worker = [&]() {
    for (;;) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      const Job& job = jobs[j];
      double frechet = std::numeric_limits<double>::quiet_NaN();
      double gap = std::numeric_limits<double>::quiet_NaN();
      double secs = 0.0;
      bool failed = false;
      try {
        RunArtifacts art = run_experiment(job.cfg);
        secs = art.wall_seconds;
        if (art.has_final_eval && !art.result.diverged) {
          frechet = art.final_eval.toy_frechet;
          gap = art.final_eval.overfit_gap;
        } else {
          failed = true;
        }
      } catch (const std::exception&) {
        failed = true;
      }
      std::lock_guard<std::mutex> lock(grid_mutex);
      GridCell& cell = grid.cells[job.cell];
      cell.final_frechet[job.slot] = frechet;
      cell.final_gap[job.slot] = gap;
      cell.wall_seconds += secs;
      if (failed) ++cell.failures;
    }
  };

  const int n_workers = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_workers));
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (auto& cell : grid.cells) {
    double sum = 0.0;
    int n = 0;
    for (double v : cell.final_frechet) {
      if (std::isfinite(v)) {
        sum += v;
        ++n;
      }
    }
    cell.mean_frechet = n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
    double sq = 0.0;
    for (double v : cell.final_frechet) {
      if (std::isfinite(v)) sq += (v - cell.mean_frechet) * (v - cell.mean_frechet);
    }
    cell.std_frechet = n > 1 ? std::sqrt(sq / (n - 1)) : 0.0;
  }
  grid.wall_seconds = wall_now() - t0;
  return grid;
}

void write_grid_summary(const GridSummary& grid, const std::string& out_dir) {
  fs::create_directories(out_dir);

  std::ostringstream csv;
  csv << "preset,regime,n_seeds,seeds,mean_final_toy_frechet,std_final_toy_frechet,"
         "mean_final_overfit_gap,failures,wall_seconds\n";
  for (const auto& cell : grid.cells) {
    std::string seed_list;
    for (std::size_t i = 0; i < cell.seeds.size(); ++i) {
      if (i) seed_list += ';';
      seed_list += std::to_string(cell.seeds[i]);
    }
    double gap_sum = 0.0;
    int gap_n = 0;
    for (double v : cell.final_gap) {
      if (std::isfinite(v)) {
        gap_sum += v;
        ++gap_n;
      }
    }
    csv << cell.preset << ',' << cell.regime << ',' << cell.seeds.size() << ',' << seed_list << ','
        << fmt_real(cell.mean_frechet) << ',' << fmt_real(cell.std_frechet) << ','
        << fmt_real(gap_n ? gap_sum / gap_n : std::numeric_limits<double>::quiet_NaN()) << ','
        << cell.failures << ',' << fmt_real(cell.wall_seconds) << "\n";
  }
  write_text_file((fs::path(out_dir) / "grid_summary.csv").string(), csv.str());

  std::ostringstream txt;
  txt << "grid summary (final toy-Frechet, mean over seeds; lower is better)\n";
  txt << "----------------------------------------------------------------\n";
  for (const auto& cell : grid.cells) {
    char line[256];
    std::snprintf(line, sizeof(line), "%-18s %-13s mean %-12.6g std %-12.6g fail %d  %.1fs\n",
                  cell.preset.c_str(), cell.regime.c_str(), cell.mean_frechet, cell.std_frechet,
                  cell.failures, cell.wall_seconds);
    txt << line;
  }
  txt << "total wall clock: " << fmt_real(grid.wall_seconds) << " s\n";
  write_text_file((fs::path(out_dir) / "grid_summary.txt").string(), txt.str());
}

// ---------------------------------------------------------------------------
// Gradient self-check

namespace {

Tensor rand_tensor(Shape shape, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = -2.0 + 4.0 * rng.uniform();
  return Tensor::from_data(std::move(shape), std::move(v), false);
}

using CheckFn = std::function<double(Rng&, bool fault)>;

// Standard harness for an op expressed as scalar(f(x)) with a fixed
// co-input; the fault path wraps the checked output in scale_grad(.,2).
double check_fn(const std::function<Tensor(const Tensor&)>& f, Shape point_shape, Rng& rng,
                bool fault) {
  Tensor point = rand_tensor(std::move(point_shape), rng);
  auto wrapped = [&](const Tensor& x) {
    Tensor y = f(x);
    if (fault) y = scale_grad(y, 2.0);
    return mean(y);
  };
  return finite_diff_check(wrapped, point, 1e-6);
}

// Finite differences directly over a layer's stores and input: the layer
// forward path (take_block/take_index feeding matmul or conv2d) is driven
// exactly as the trainer drives it.
template <typename Layer, typename Forward>
double check_layer(Layer& layer, const Tensor& input, Forward forward, bool fault) {
  Tensor out = mean(forward(input));
  backward(out);
  const double base_eps = 1e-6;

  double worst = 0.0;
  auto probe_store = [&](Tensor& store) {
    const std::vector<double> analytic =
        store.has_grad() ? store.grad() : std::vector<double>(store.data().size(), 0.0);
    auto& values = store.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + base_eps;
      const double up = mean(forward(input)).item();
      values[i] = saved - base_eps;
      const double down = mean(forward(input)).item();
      values[i] = saved;
      const double fd = (up - down) / (2.0 * base_eps);
      double g = analytic[i];
      if (fault) g *= 2.0;
      const double denom = std::max({std::fabs(g), std::fabs(fd), 1e-8});
      worst = std::max(worst, std::fabs(g - fd) / denom);
    }
  };
  probe_store(layer.weight());
  probe_store(layer.bias());
  layer.weight().zero_grad();
  layer.bias().zero_grad();
  return worst;
}

}  // namespace

std::vector<GradCheckEntry> gradcheck_suite(int n_seeds, const std::string& fault_op) {
  std::vector<std::pair<std::string, CheckFn>> checks;

  auto add_check = [&](const std::string& name, CheckFn fn) {
    checks.emplace_back(name, std::move(fn));
  };

  add_check("add", [](Rng& rng, bool fault) {
    Tensor b = rand_tensor({3, 4}, rng);
    return check_fn([&](const Tensor& x) { return add(x, b); }, {3, 4}, rng, fault);
  });
  add_check("sub", [](Rng& rng, bool fault) {
    Tensor b = rand_tensor({3, 4}, rng);
    return check_fn([&](const Tensor& x) { return sub(b, x); }, {3, 4}, rng, fault);
  });
  add_check("mul", [](Rng& rng, bool fault) {
    Tensor b = rand_tensor({3, 4}, rng);
    return check_fn([&](const Tensor& x) { return mul(x, b); }, {3, 4}, rng, fault);
  });
  add_check("mul_broadcast", [](Rng& rng, bool fault) {
    Tensor batch = rand_tensor({5, 4}, rng);
    return check_fn([&](const Tensor& x) { return mul(batch, x); }, {4}, rng, fault);
  });
  add_check("scale", [](Rng& rng, bool fault) {
    return check_fn([](const Tensor& x) { return scale(x, -1.7); }, {2, 6}, rng, fault);
  });
  add_check("matmul_lhs", [](Rng& rng, bool fault) {
    Tensor b = rand_tensor({4, 3}, rng);
    return check_fn([&](const Tensor& x) { return matmul(x, b); }, {2, 4}, rng, fault);
  });
  add_check("matmul_rhs", [](Rng& rng, bool fault) {
    Tensor a = rand_tensor({2, 4}, rng);
    return check_fn([&](const Tensor& x) { return matmul(a, x); }, {4, 3}, rng, fault);
  });
  add_check("transpose", [](Rng& rng, bool fault) {
    Tensor b = rand_tensor({4, 3}, rng);
    return check_fn([&](const Tensor& x) { return mul(transpose(x), b); }, {3, 4}, rng, fault);
  });
  add_check("reshape", [](Rng& rng, bool fault) {
    Tensor b = rand_tensor({12}, rng);
    return check_fn([&](const Tensor& x) { return mul(reshape(x, {12}), b); }, {3, 4}, rng, fault);
  });
  add_check("conv2d_input", [](Rng& rng, bool fault) {
    Tensor k = rand_tensor({2, 3, 3, 3}, rng);
    Tensor b = rand_tensor({2}, rng);
    return check_fn([&](const Tensor& x) { return conv2d(x, k, b, 1, 1); }, {2, 3, 4, 4}, rng, fault);
  });
  add_check("conv2d_kernel", [](Rng& rng, bool fault) {
    Tensor in = rand_tensor({2, 3, 4, 4}, rng);
    Tensor b = rand_tensor({2}, rng);
    return check_fn([&](const Tensor& x) { return conv2d(in, x, b, 1, 0); }, {2, 3, 3, 3}, rng, fault);
  });
  add_check("conv2d_bias", [](Rng& rng, bool fault) {
    Tensor in = rand_tensor({2, 3, 4, 4}, rng);
    Tensor k = rand_tensor({2, 3, 3, 3}, rng);
    return check_fn([&](const Tensor& x) { return conv2d(in, k, x, 1, 1); }, {2}, rng, fault);
  });
  add_check("conv2d_stride2", [](Rng& rng, bool fault) {
    Tensor k = rand_tensor({2, 2, 3, 3}, rng);
    Tensor b = rand_tensor({2}, rng);
    return check_fn([&](const Tensor& x) { return conv2d(x, k, b, 2, 1); }, {1, 2, 5, 5}, rng, fault);
  });
  add_check("conv_transpose2d_input", [](Rng& rng, bool fault) {
    Tensor k = rand_tensor({3, 2, 4, 4}, rng);
    Tensor b = rand_tensor({2}, rng);
    return check_fn([&](const Tensor& x) { return conv_transpose2d(x, k, b, 2, 1); }, {1, 3, 3, 3}, rng, fault);
  });
  add_check("conv_transpose2d_kernel", [](Rng& rng, bool fault) {
    Tensor in = rand_tensor({1, 3, 3, 3}, rng);
    Tensor b = rand_tensor({2}, rng);
    return check_fn([&](const Tensor& x) { return conv_transpose2d(in, x, b, 2, 1); }, {3, 2, 4, 4}, rng, fault);
  });
  add_check("leaky_relu", [](Rng& rng, bool fault) {
    return check_fn([](const Tensor& x) { return leaky_relu(x, 0.2); }, {4, 5}, rng, fault);
  });
  add_check("sigmoid", [](Rng& rng, bool fault) {
    return check_fn([](const Tensor& x) { return sigmoid(x); }, {4, 5}, rng, fault);
  });
  add_check("softplus", [](Rng& rng, bool fault) {
    return check_fn([](const Tensor& x) { return softplus(x); }, {4, 5}, rng, fault);
  });
  add_check("tanh", [](Rng& rng, bool fault) {
    return check_fn([](const Tensor& x) { return dyncap::tanh(x); }, {4, 5}, rng, fault);
  });
  add_check("mean", [](Rng& rng, bool fault) {
    return check_fn([](const Tensor& x) { return mul(mean(x), mean(x)); }, {7}, rng, fault);
  });
  add_check("sum", [](Rng& rng, bool fault) {
    return check_fn([](const Tensor& x) { return mul(sum(x), sum(x)); }, {7}, rng, fault);
  });
  add_check("take_block", [](Rng& rng, bool fault) {
    Tensor b = rand_tensor({2, 3}, rng);
    return check_fn([&](const Tensor& x) { return mul(take_block(x, 2, 3), b); }, {4, 5}, rng, fault);
  });
  add_check("take_index", [](Rng& rng, bool fault) {
    Tensor b = rand_tensor({2, 2}, rng);
    return check_fn([&](const Tensor& x) { return mul(take_index(x, {0, 3}, {1, 4}), b); }, {4, 5},
                    rng, fault);
  });
  add_check("dense_sliced", [](Rng& rng, bool fault) {
    DynDenseLayer layer(5, 4, 0, false, 0.2, rng.next_u64());
    Tensor in = rand_tensor({3, 3}, rng);
    return check_layer(layer, in,
                       [&](const Tensor& x) { return layer.forward_sliced(x, 4, 3); }, fault);
  });
  add_check("dense_masked", [](Rng& rng, bool fault) {
    DynDenseLayer layer(5, 4, 0, false, 0.2, rng.next_u64());
    std::vector<std::int64_t> out_idx{0, 2, 4};
    std::vector<std::int64_t> in_idx{1, 3};
    Tensor in = rand_tensor({3, 2}, rng);
    return check_layer(layer, in,
                       [&](const Tensor& x) { return layer.forward_masked(x, out_idx, in_idx); },
                       fault);
  });
  add_check("conv_sliced", [](Rng& rng, bool fault) {
    DynConvLayer layer(4, 3, 3, 2, 1, 0, false, 0.2, rng.next_u64());
    Tensor in = rand_tensor({2, 2, 5, 5}, rng);
    return check_layer(layer, in,
                       [&](const Tensor& x) { return layer.forward_sliced(x, 3, 2); }, fault);
  });
  add_check("conv_masked", [](Rng& rng, bool fault) {
    DynConvLayer layer(4, 3, 3, 1, 1, 0, false, 0.2, rng.next_u64());
    std::vector<std::int64_t> out_idx{1, 3};
    std::vector<std::int64_t> in_idx{0, 2};
    Tensor in = rand_tensor({2, 2, 4, 4}, rng);
    return check_layer(layer, in,
                       [&](const Tensor& x) { return layer.forward_masked(x, out_idx, in_idx); },
                       fault);
  });
  add_check("d_loss", [](Rng& rng, bool fault) {
    Tensor fake = rand_tensor({6, 1}, rng);
    return check_fn([&](const Tensor& x) { return d_loss(x, fake); }, {6, 1}, rng, fault);
  });
  add_check("g_loss", [](Rng& rng, bool fault) {
    return check_fn([](const Tensor& x) { return g_loss(x); }, {6, 1}, rng, fault);
  });

  std::vector<GradCheckEntry> results;
  results.reserve(checks.size());
  for (const auto& [name, fn] : checks) {
    GradCheckEntry entry;
    entry.op = name;
    for (int s = 0; s < n_seeds; ++s) {
      Rng rng(derive_stream_seed(0x6c4dULL, static_cast<std::uint64_t>(s)));
      entry.worst_rel_err = std::max(entry.worst_rel_err, fn(rng, name == fault_op));
    }
    entry.pass = entry.worst_rel_err < kGradCheckTolerance;
    results.push_back(std::move(entry));
  }
  return results;
}

bool gradcheck_passed(const std::vector<GradCheckEntry>& entries) {
  for (const auto& e : entries) {
    if (!e.pass) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Compute accounting

FlopsTable flops_table(const ExperimentConfig& cfg, int n_buckets) {
  TrainConfig tc = to_train_config(cfg);
  // A throwaway discriminator provides the per-width accounting.
  const bool conv = tc.dataset.kind == DatasetKind::kSprites16;
  Discriminator d = conv ? Discriminator::make_sprite(1, 16, tc.schedule.base_widths, 0.2, 0)
                         : Discriminator::make_point(2, tc.schedule.base_widths, 0.2, 0);

  const std::int64_t full = d.flops_for(d.base_widths());
  const std::int64_t full_params = d.param_count_for(d.base_widths());
  (void)full_params;

  FlopsTable table;
  table.total_full = full * tc.total_iters;

  const std::int64_t bucket_len = std::max<std::int64_t>(1, tc.total_iters / n_buckets);
  for (std::int64_t step = 0; step < tc.total_iters; ++step) {
    const auto widths = widths_at(tc.schedule, step);
    const std::int64_t flops = d.flops_for(widths);
    table.total_active += flops;
    if (flops > full) table.per_step_bounded = false;
    if (step % bucket_len == 0) {
      FlopsBucket bucket;
      bucket.first_step = step;
      bucket.last_step = std::min(step + bucket_len, tc.total_iters) - 1;
      bucket.coeff = coefficient_at(tc.schedule, step);
      bucket.active_params = d.param_count_for(widths);
      bucket.active_flops = flops;
      bucket.full_flops = full;
      table.buckets.push_back(bucket);
    }
  }
  table.ratio = static_cast<double>(table.total_active) / static_cast<double>(table.total_full);
  return table;
}

std::string render_flops_table(const FlopsTable& table) {
  std::ostringstream os;
  os << "steps           coeff      active_params  active_flops   full_flops\n";
  for (const auto& b : table.buckets) {
    char line[160];
    std::snprintf(line, sizeof(line), "%7lld-%-7lld %-10.4g %-14lld %-14lld %lld\n",
                  static_cast<long long>(b.first_step), static_cast<long long>(b.last_step),
                  b.coeff, static_cast<long long>(b.active_params),
                  static_cast<long long>(b.active_flops), static_cast<long long>(b.full_flops));
    os << line;
  }
  os << "total active/full flops over the run: " << table.total_active << " / " << table.total_full
     << "  ratio " << fmt_real(table.ratio) << "\n";
  os << "per-step active <= full: " << (table.per_step_bounded ? "yes" : "NO") << "\n";
  return os.str();
}

}  // namespace dyncap
