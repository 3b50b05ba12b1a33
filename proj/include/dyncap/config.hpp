#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dyncap/trainer.hpp"

namespace dyncap {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Experiment description: a schedule preset crossed with a dataset regime
// plus overrides. Serializes to/from flat `key = value` text with `#`
// comments; unknown keys are rejected by name.
struct ExperimentConfig {
  std::string preset = "fixed-full";  // fixed-full | fixed-half | dynamic-increase | dynamic-decrease
  std::string regime = "limited";     // limited-tiny | limited | sufficient
  std::string dataset = "ring8";      // ring8 | two_moons | sprites16
  std::int64_t n_samples = -1;        // -1: take the regime preset
  double noise = 0.15;
  std::uint64_t seed = 1;
  std::int64_t iters = 3000;
  std::int64_t batch_size = 32;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double adam_beta1 = 0.0;
  double adam_beta2 = 0.99;
  double adam_eps = 1e-8;
  std::int64_t schedule_interval = 1;
  double coeff_start = kUnsetCoeff;   // override the preset's endpoints
  double coeff_end = kUnsetCoeff;
  std::string mask_excluded = "auto"; // "auto" or comma list of trunk layer indices
  bool g_sees_masked_d = true;
  std::int64_t eval_cadence = 500;
  std::int64_t eval_samples = -1;     // -1: 8192 in fast mode, 50000 otherwise
  bool fast = false;
  bool dump_dataset = false;          // write dataset.bin next to the run artifacts
  std::string out_dir = "runs";

  static constexpr double kUnsetCoeff = -1e300;

  // Raw bytes of the config file this came from (echoed into the run
  // directory); empty when built from flags alone.
  std::string source_text;
};

const std::vector<std::string>& schedule_preset_names();

// Parses `key = value` lines; throws ConfigError naming any unknown key.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config_file(const std::string& path);

// Applies one override; key names match the config file keys.
void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// Full resolved key set, one `key = value` per line.
std::string resolved_config_text(const ExperimentConfig& cfg);

std::int64_t effective_eval_samples(const ExperimentConfig& cfg);

// Assembles the trainer config: dataset spec from regime/kind, schedule
// from the preset (base widths match the discriminator trunk for the
// dataset kind), endpoints/exclusions from the overrides.
TrainConfig to_train_config(const ExperimentConfig& cfg);

}  // namespace dyncap
