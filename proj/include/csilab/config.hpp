// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "csilab/channel.hpp"
#include "csilab/model.hpp"
#include "csilab/pipeline.hpp"

namespace csilab {

struct DataConfig {
  std::string dir;  ///< corpus directory; no default
  std::vector<std::string> presets{"indoor-los"};
  std::uint64_t seed = 7;
  SplitCounts counts;
  GridSpec coarse{64, 16, 0.5e-3, 360e3, 3.5e9};
  GridSpec fine{16, 48, 1e-3, 120e3, 3.5e9};
  ArrayGeometry geometry{4, 1, 0.5};
};

struct Phase1Config {
  std::size_t epochs = 60;
  std::size_t batch_size = 32;
  std::size_t steps_per_epoch = 0;  ///< 0: coarse training samples / batch size
  double lr = 5e-4;
  double min_lr = 3e-4;
  std::size_t warmup_epochs = 5;
  double weight_decay = 0.05;
  double load_weight = 0.03;
  double clip_norm = 1.0;
  double mask_ratio_min = 0.10;
  double mask_ratio_max = 0.25;
  double random_mask_ratio = 0.85;
  PilotPattern pilot_min{1.0 / 8.0, 1.0, 1.0 / 24.0};
  PilotPattern pilot_max{1.0 / 4.0, 1.0, 1.0 / 6.0};
  double snr_min_db = 10.0;
  double snr_max_db = 25.0;
  bool fixed_ratio = false;  ///< ablation: ratio 0.25, pilots (1/4, 1, 1/12)
  bool random_mask = true;   ///< ablation: drop task 1
  std::uint64_t seed = 7;

  std::size_t total_steps(std::size_t train_samples) const;
};

struct Phase2Config {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::size_t steps_per_epoch = 0;
  double lr = 1e-3;
  double min_lr = 1e-4;
  std::size_t warmup_epochs = 1;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
  std::uint64_t seed = 7;

  std::size_t total_steps(std::size_t train_samples) const;
};

struct EvalConfig {
  double snr_db = 20.0;
  std::string ratio = "low";  ///< low | high | numeric fraction
  std::vector<std::string> tasks{"CP-T", "CP-F", "CE"};
  std::string split = "test";
  std::string aggregation = "mean_db";  ///< mean_db | db_of_mean
  std::uint64_t seed = 11;
};

struct FinetuneConfig {
  std::string positive_preset = "pure-los";
  std::string negative_preset = "nlos-6path";
  std::size_t samples = 256;  ///< per class
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double lr = 1e-2;
  double snr_db = 20.0;
  bool shuffle_labels = false;  ///< random-label control
  std::uint64_t seed = 13;
};

struct RunConfig {
  ModelConfig model;
  DataConfig data;
  Phase1Config training;
  Phase2Config confidence;
  EvalConfig evaluation;
  FinetuneConfig finetune;

  /// Cross-field checks; throws ConfigError.
  void validate() const;
};

/// Parses `key = value` lines. `#` starts a comment; `[section]` lines
/// prefix following bare keys. Unknown keys and malformed values throw
/// ParseError with the line number.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::string& path);
/// Applies one `key=value` override on top of an existing config.
void apply_override(RunConfig& config, const std::string& assignment);
void set_value(RunConfig& config, const std::string& key, const std::string& value);
/// Every key with its current value, in a stable order; parse_config of
/// the result reproduces the config.
std::string to_text(const RunConfig& config);
std::vector<std::string> config_keys();

/// Model block only ("model.*" keys), used inside checkpoints.
std::string model_config_text(const ModelConfig& model);
ModelConfig parse_model_config(const std::string& text);

}  // namespace csilab
