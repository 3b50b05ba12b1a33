#include "dyncap/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dyncap {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::int64_t parse_int(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const std::int64_t v = std::stoll(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected integer, got '" + value + "'");
  }
}

std::uint64_t parse_uint(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const std::uint64_t v = std::stoull(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected unsigned integer, got '" + value + "'");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected number, got '" + value + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("config key '" + key + "': expected boolean, got '" + value + "'");
}

std::vector<std::int64_t> parse_index_list(const std::string& key, const std::string& value) {
  std::vector<std::int64_t> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(parse_int(key, item));
  }
  return out;
}

}  // namespace

const std::vector<std::string>& schedule_preset_names() {
  static const std::vector<std::string> names = {
      "fixed-full", "fixed-half", "dynamic-increase", "dynamic-decrease"};
  return names;
}

void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "preset") {
    const auto& names = schedule_preset_names();
    if (std::find(names.begin(), names.end(), value) == names.end()) {
      throw ConfigError("config key 'preset': unknown preset '" + value + "'");
    }
    cfg.preset = value;
  } else if (key == "regime") {
    try {
      regime_samples(value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config key 'regime': ") + e.what());
    }
    cfg.regime = value;
  } else if (key == "dataset") {
    try {
      dataset_kind_from_string(value);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config key 'dataset': ") + e.what());
    }
    cfg.dataset = value;
  } else if (key == "n_samples") {
    cfg.n_samples = parse_int(key, value);
  } else if (key == "noise") {
    cfg.noise = parse_double(key, value);
  } else if (key == "seed") {
    cfg.seed = parse_uint(key, value);
  } else if (key == "iters") {
    cfg.iters = parse_int(key, value);
  } else if (key == "batch_size") {
    cfg.batch_size = parse_int(key, value);
  } else if (key == "lr_g") {
    cfg.lr_g = parse_double(key, value);
  } else if (key == "lr_d") {
    cfg.lr_d = parse_double(key, value);
  } else if (key == "adam_beta1") {
    cfg.adam_beta1 = parse_double(key, value);
  } else if (key == "adam_beta2") {
    cfg.adam_beta2 = parse_double(key, value);
  } else if (key == "adam_eps") {
    cfg.adam_eps = parse_double(key, value);
  } else if (key == "schedule_interval") {
    cfg.schedule_interval = parse_int(key, value);
  } else if (key == "coeff_start") {
    cfg.coeff_start = parse_double(key, value);
  } else if (key == "coeff_end") {
    cfg.coeff_end = parse_double(key, value);
  } else if (key == "mask_excluded") {
    if (value != "auto") parse_index_list(key, value);  // validates
    cfg.mask_excluded = value;
  } else if (key == "g_sees_masked_d") {
    cfg.g_sees_masked_d = parse_bool(key, value);
  } else if (key == "eval_cadence") {
    cfg.eval_cadence = parse_int(key, value);
  } else if (key == "eval_samples") {
    cfg.eval_samples = parse_int(key, value);
  } else if (key == "fast") {
    cfg.fast = parse_bool(key, value);
  } else if (key == "dump_dataset") {
    cfg.dump_dataset = parse_bool(key, value);
  } else if (key == "out_dir") {
    cfg.out_dir = value;
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  cfg.source_text = text;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(line_no) + ": missing key");
    }
    apply_override(cfg, key, value);
  }
  return cfg;
}

ExperimentConfig parse_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file: " + path);
  std::stringstream buffer;
  buffer << is.rdbuf();
  return parse_config_text(buffer.str());
}

std::string resolved_config_text(const ExperimentConfig& cfg) {
  std::ostringstream os;
  char num[64];
  auto put_double = [&](const char* key, double v) {
    std::snprintf(num, sizeof(num), "%.17g", v);
    os << key << " = " << num << "\n";
  };
  os << "preset = " << cfg.preset << "\n";
  os << "regime = " << cfg.regime << "\n";
  os << "dataset = " << cfg.dataset << "\n";
  os << "n_samples = " << cfg.n_samples << "\n";
  put_double("noise", cfg.noise);
  os << "seed = " << cfg.seed << "\n";
  os << "iters = " << cfg.iters << "\n";
  os << "batch_size = " << cfg.batch_size << "\n";
  put_double("lr_g", cfg.lr_g);
  put_double("lr_d", cfg.lr_d);
  put_double("adam_beta1", cfg.adam_beta1);
  put_double("adam_beta2", cfg.adam_beta2);
  put_double("adam_eps", cfg.adam_eps);
  os << "schedule_interval = " << cfg.schedule_interval << "\n";
  if (cfg.coeff_start != ExperimentConfig::kUnsetCoeff) put_double("coeff_start", cfg.coeff_start);
  if (cfg.coeff_end != ExperimentConfig::kUnsetCoeff) put_double("coeff_end", cfg.coeff_end);
  os << "mask_excluded = " << cfg.mask_excluded << "\n";
  os << "g_sees_masked_d = " << (cfg.g_sees_masked_d ? "true" : "false") << "\n";
  os << "eval_cadence = " << cfg.eval_cadence << "\n";
  os << "eval_samples = " << effective_eval_samples(cfg) << "\n";
  os << "fast = " << (cfg.fast ? "true" : "false") << "\n";
  os << "dump_dataset = " << (cfg.dump_dataset ? "true" : "false") << "\n";
  os << "out_dir = " << cfg.out_dir << "\n";
  return os.str();
}

std::int64_t effective_eval_samples(const ExperimentConfig& cfg) {
  if (cfg.eval_samples > 0) return cfg.eval_samples;
  return cfg.fast ? 8192 : 50000;
}

TrainConfig to_train_config(const ExperimentConfig& cfg) {
  TrainConfig tc;
  tc.batch_size = cfg.batch_size;
  tc.lr_g = cfg.lr_g;
  tc.lr_d = cfg.lr_d;
  tc.adam_beta1 = cfg.adam_beta1;
  tc.adam_beta2 = cfg.adam_beta2;
  tc.adam_eps = cfg.adam_eps;
  tc.total_iters = cfg.iters;
  tc.seed = cfg.seed;
  tc.eval_cadence = cfg.eval_cadence;
  tc.eval_samples = effective_eval_samples(cfg);
  tc.g_sees_masked_d = cfg.g_sees_masked_d;

  tc.dataset.kind = dataset_kind_from_string(cfg.dataset);
  tc.dataset.n_samples = cfg.n_samples > 0 ? cfg.n_samples : regime_samples(cfg.regime);
  tc.dataset.noise = cfg.noise;
  tc.dataset.seed = cfg.seed;

  const bool conv = tc.dataset.kind == DatasetKind::kSprites16;
  CapacitySchedule& s = tc.schedule;
  s.base_widths = conv ? std::vector<std::int64_t>{16, 32, 64, 128}
                       : std::vector<std::int64_t>{64, 64, 64};
  s.total_steps = cfg.iters;
  s.update_interval = cfg.schedule_interval;

  if (cfg.preset == "fixed-full") {
    s.mode = ScheduleMode::kFixed;
    s.coeff_start = s.coeff_end = 0.0;
  } else if (cfg.preset == "fixed-half") {
    s.mode = ScheduleMode::kFixed;
    s.coeff_start = s.coeff_end = -0.5;
  } else if (cfg.preset == "dynamic-increase") {
    s.mode = ScheduleMode::kIncrease;
    s.coeff_start = -0.5;
    s.coeff_end = 0.0;
  } else if (cfg.preset == "dynamic-decrease") {
    s.mode = ScheduleMode::kDecrease;
    s.coeff_start = 1.0;
    s.coeff_end = 0.5;
  } else {
    throw ConfigError("unknown preset: " + cfg.preset);
  }
  if (cfg.coeff_start != ExperimentConfig::kUnsetCoeff) s.coeff_start = cfg.coeff_start;
  if (cfg.coeff_end != ExperimentConfig::kUnsetCoeff) s.coeff_end = cfg.coeff_end;

  if (s.mode == ScheduleMode::kDecrease) {
    if (cfg.mask_excluded == "auto") {
      // Low-level layers are excluded from masking; deeper, wider layers
      // carry the decrease.
      s.excluded_layers = conv ? std::vector<std::int64_t>{0, 1} : std::vector<std::int64_t>{0};
    } else {
      std::stringstream ss(cfg.mask_excluded);
      std::string item;
      while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        s.excluded_layers.push_back(std::stoll(item));
      }
    }
  }

  return tc;
}

}  // namespace dyncap
