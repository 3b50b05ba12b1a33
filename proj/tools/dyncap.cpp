// Command-line front end: train single experiments, sweep the preset x
// regime grid, run the gradient self-check, and account schedule FLOPs.
//
// Exit codes: 0 ok, 1 check failure, 2 config error, 3 training divergence.

#include <cstdio>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "dyncap/config.hpp"
#include "dyncap/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailure = 1;
constexpr int kExitConfigError = 2;
constexpr int kExitDivergence = 3;

// Leftover arguments are treated as --key=value overrides onto the config.
void apply_extra_overrides(dyncap::ExperimentConfig& cfg, const std::vector<std::string>& extras) {
  for (const auto& raw : extras) {
    std::string arg = raw;
    if (arg.rfind("--", 0) != 0) {
      throw dyncap::ConfigError("unrecognized argument: " + arg);
    }
    arg = arg.substr(2);
    const std::size_t eq = arg.find('=');
    if (eq == std::string::npos) {
      throw dyncap::ConfigError("override must look like --key=value, got --" + arg);
    }
    dyncap::apply_override(cfg, arg.substr(0, eq), arg.substr(eq + 1));
  }
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t comma = s.find(',', start);
    if (comma == std::string::npos) comma = s.size();
    if (comma > start) out.push_back(s.substr(start, comma - start));
    start = comma + 1;
  }
  return out;
}

int grid_threads() {
  if (const char* env = std::getenv("DYNCAP_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string preset;
  std::string regime;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool fast = false;
  bool out_set = false;
};

dyncap::ExperimentConfig build_config(const CommonFlags& flags, const std::vector<std::string>& extras) {
  dyncap::ExperimentConfig cfg;
  if (!flags.config_path.empty()) cfg = dyncap::parse_config_file(flags.config_path);
  if (!flags.preset.empty()) dyncap::apply_override(cfg, "preset", flags.preset);
  if (!flags.regime.empty()) dyncap::apply_override(cfg, "regime", flags.regime);
  if (flags.seed_set) cfg.seed = flags.seed;
  if (flags.fast) cfg.fast = true;
  if (flags.out_set) cfg.out_dir = flags.out_dir;
  apply_extra_overrides(cfg, extras);
  return cfg;
}

void add_common_flags(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "experiment config file (key = value lines)");
  cmd->add_option("--seed", flags.seed, "master seed")->each([&](const std::string&) { flags.seed_set = true; });
  cmd->add_flag("--fast", flags.fast, "fast-test mode (smaller evaluation sample counts)");
  cmd->add_option("--out", flags.out_dir, "output directory")->each([&](const std::string&) { flags.out_set = true; });
  cmd->add_option("--preset", flags.preset, "schedule preset");
  cmd->add_option("--regime", flags.regime, "dataset regime preset");
  cmd->allow_extras();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dynamic-capacity GAN training laboratory"};
  app.require_subcommand(1);

  CommonFlags train_flags;
  CLI::App* train_cmd = app.add_subcommand("train", "run one experiment");
  add_common_flags(train_cmd, train_flags);

  CommonFlags grid_flags;
  std::string grid_presets = "fixed-full,fixed-half,dynamic-increase,dynamic-decrease";
  std::string grid_regimes = "limited-tiny,limited,sufficient";
  std::string grid_seeds;
  CLI::App* grid_cmd = app.add_subcommand("grid", "run the preset x regime grid");
  add_common_flags(grid_cmd, grid_flags);
  grid_cmd->add_option("--presets", grid_presets, "comma list of schedule presets");
  grid_cmd->add_option("--regimes", grid_regimes, "comma list of regime presets");
  grid_cmd->add_option("--seeds", grid_seeds, "comma list of seeds (default 1..5, fast: 1..2)");

  int gradcheck_seeds = 20;
  std::string inject_fault;
  CLI::App* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference gradient self-check");
  gradcheck_cmd->add_option("--seeds", gradcheck_seeds, "random draws per op (default 20)");
  gradcheck_cmd->add_option("--inject-fault", inject_fault,
                            "double the analytic gradient of one op (detector test)");

  CommonFlags flops_flags;
  CLI::App* flops_cmd = app.add_subcommand("flops", "schedule compute accounting vs fixed-full");
  add_common_flags(flops_cmd, flops_flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train_cmd->parsed()) {
      dyncap::ExperimentConfig cfg = build_config(train_flags, train_cmd->remaining());
      dyncap::RunArtifacts art = dyncap::run_experiment(cfg);
      if (art.result.diverged) {
        std::fprintf(stderr, "training diverged: %s\n", art.result.diagnostic.c_str());
        std::printf("run dir: %s\n", art.run_dir.c_str());
        return kExitDivergence;
      }
      std::printf("run dir: %s\n", art.run_dir.c_str());
      if (art.has_final_eval) {
        std::printf("final toy-frechet %.6g  overfit-gap %.6g  modes %d\n",
                    art.final_eval.toy_frechet, art.final_eval.overfit_gap,
                    art.final_eval.modes_covered);
      }
      std::printf("wall %.1fs\n", art.wall_seconds);
      return kExitOk;
    }

    if (grid_cmd->parsed()) {
      dyncap::ExperimentConfig cfg = build_config(grid_flags, grid_cmd->remaining());
      std::vector<std::uint64_t> seeds;
      if (!grid_seeds.empty()) {
        for (const auto& s : split_csv(grid_seeds)) seeds.push_back(std::stoull(s));
      } else {
        const int n = cfg.fast ? 2 : 5;
        for (int i = 1; i <= n; ++i) seeds.push_back(static_cast<std::uint64_t>(i));
      }
      dyncap::GridSummary grid = dyncap::run_grid(cfg, split_csv(grid_presets),
                                                  split_csv(grid_regimes), seeds, grid_threads());
      dyncap::write_grid_summary(grid, cfg.out_dir);
      std::printf("grid finished in %.1fs; summary under %s\n", grid.wall_seconds,
                  cfg.out_dir.c_str());
      return kExitOk;
    }

    if (gradcheck_cmd->parsed()) {
      const auto entries = dyncap::gradcheck_suite(gradcheck_seeds, inject_fault);
      std::printf("%-26s %-14s %s\n", "op", "worst_rel_err", "status");
      for (const auto& e : entries) {
        std::printf("%-26s %-14.3e %s\n", e.op.c_str(), e.worst_rel_err, e.pass ? "ok" : "FAIL");
      }
      if (!dyncap::gradcheck_passed(entries)) {
        for (const auto& e : entries) {
          if (!e.pass) {
            std::fprintf(stderr, "gradient check failed for op '%s' (worst rel err %.3e)\n",
                         e.op.c_str(), e.worst_rel_err);
          }
        }
        return kExitCheckFailure;
      }
      return kExitOk;
    }

    if (flops_cmd->parsed()) {
      dyncap::ExperimentConfig cfg = build_config(flops_flags, flops_cmd->remaining());
      dyncap::FlopsTable table = dyncap::flops_table(cfg);
      std::fputs(dyncap::render_flops_table(table).c_str(), stdout);
      return kExitOk;
    }
  } catch (const dyncap::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfigError;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfigError;
  } catch (const dyncap::TrainingDiverged& e) {
    std::fprintf(stderr, "training diverged: %s\n", e.what());
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitCheckFailure;
  }
  return kExitOk;
}
