#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dyncap/config.hpp"
#include "dyncap/trainer.hpp"

namespace dyncap {

// 17-significant-digit decimal rendering used for every real written to a
// CSV, so replayed runs produce byte-identical artifacts.
std::string fmt_real(double v);

struct RunArtifacts {
  std::string run_dir;
  RunResult result;
  bool has_final_eval = false;
  MetricReport final_eval;
  double wall_seconds = 0.0;
};

// Trains one experiment and writes its artifacts (metrics.csv, summary.csv,
// config.txt echo, config_resolved.txt, checkpoint.bin) under
// <out_dir>/<preset>-<regime>-seed<seed>/.
RunArtifacts run_experiment(const ExperimentConfig& cfg);

std::string run_dir_name(const ExperimentConfig& cfg);

// Dataset inspection dump into the binary array container: arrays
// `samples`, `train_idx`, `val_idx`.
void dump_dataset(const Dataset& dataset, const std::string& path);

struct GridCell {
  std::string preset;
  std::string regime;
  std::vector<std::uint64_t> seeds;
  std::vector<double> final_frechet;   // NaN for failed cells' runs
  std::vector<double> final_gap;
  double mean_frechet = 0.0;
  double std_frechet = 0.0;
  double wall_seconds = 0.0;
  int failures = 0;
};

struct GridSummary {
  std::vector<GridCell> cells;
  double wall_seconds = 0.0;
};

// Cross product of presets x regimes x seeds; cells that fail are recorded
// and the grid continues. Runs execute on `threads` workers (each run owns
// its state), results aggregate deterministically in input order.
GridSummary run_grid(const ExperimentConfig& base, const std::vector<std::string>& presets,
                     const std::vector<std::string>& regimes,
                     const std::vector<std::uint64_t>& seeds, int threads);

void write_grid_summary(const GridSummary& grid, const std::string& out_dir);

// ---------------------------------------------------------------------------
// Gradient self-check

struct GradCheckEntry {
  std::string op;
  double worst_rel_err = 0.0;
  bool pass = false;
};

constexpr double kGradCheckTolerance = 1e-4;

// Central-difference verification of every differentiable primitive and of
// both dynamic layer kinds (sliced and masked paths), over n_seeds random
// draws each. `fault_op` doubles that entry's analytic gradient so the
// detector itself can be exercised.
std::vector<GradCheckEntry> gradcheck_suite(int n_seeds, const std::string& fault_op = "");
bool gradcheck_passed(const std::vector<GradCheckEntry>& entries);

// ---------------------------------------------------------------------------
// Compute accounting

struct FlopsBucket {
  std::int64_t first_step = 0;
  std::int64_t last_step = 0;
  double coeff = 0.0;
  std::int64_t active_params = 0;
  std::int64_t active_flops = 0;  // per-sample forward at that step
  std::int64_t full_flops = 0;
};

struct FlopsTable {
  std::vector<FlopsBucket> buckets;
  std::int64_t total_active = 0;  // summed over every step of the run
  std::int64_t total_full = 0;
  double ratio = 1.0;
  bool per_step_bounded = true;  // active <= full at every step
};

// Exact integer accounting of the schedule's per-step discriminator
// forward cost against the fixed-full baseline. Decrease-mode widths are
// the deterministic mask sizes, so no sampling is involved.
FlopsTable flops_table(const ExperimentConfig& cfg, int n_buckets = 10);
std::string render_flops_table(const FlopsTable& table);

}  // namespace dyncap
