#pragma once
// Run configuration: one JSON document, every key optional, unknown keys
// rejected at every nesting level.
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fzg/bilevel.hpp"
#include "fzg/diffusion.hpp"
#include "fzg/eval.hpp"
#include "fzg/training.hpp"

namespace fzg {

struct DataConfig {
  std::size_t num_classes = 4;
  double radius = 4.0;
  double std = 0.35;
  std::vector<int> illegal_classes{0, 1};
  std::vector<int> legal_classes{2, 3};
  // "legal": the pre-trained model never sees the illegal classes, which are
  // only acquired through fine-tuning. "all": pre-train on every class.
  std::string pretrain_on = "legal";
  std::size_t pretrain_per_class = 2000;
  std::size_t finetune_per_class = 1000;  // also the mask-learning split
  std::size_t attack_per_class = 1000;
  std::size_t holdout_per_class = 1000;
  std::uint64_t seed = 1;
};

struct ScheduleConfig {
  int num_steps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.2;
};

struct EvalConfig {
  std::size_t n_samples = 1000;
  std::size_t seeds = 5;
  std::uint64_t seed = 5;
  bool timing = true;  // false writes sec_per_step as 0 for byte-stable reports
};

struct RunConfig {
  DataConfig data;
  DenoiserSpec model;
  ScheduleConfig schedule;
  TrainConfig pretrain;
  TrainConfig finetune;
  BilevelConfig bilevel;
  AttackConfig attack;
  EvalConfig eval;
  std::vector<double> sweep_ratios{0.0, 0.1, 0.3, 0.5, 0.8};
  std::string run_dir;  // used when --run is not given
};

RunConfig default_config();
void validate(const RunConfig& cfg);

// Missing keys keep their defaults. Throws ConfigError naming the offending
// key path on unknown keys or wrong types.
RunConfig config_from_json(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
// Canonical form with every key present; parses back to an identical config.
std::string config_to_json(const RunConfig& cfg);

NoiseSchedule make_schedule(const ScheduleConfig& cfg);

struct DataSplits {
  Dataset pretrain;          // classes selected by data.pretrain_on
  ClassSplit finetune;       // mask learning and theta_ft
  Dataset attack_illegal;
  Dataset attack_legal;
  Dataset holdout;           // all classes
};

// Labels present in the pre-training split.
std::vector<int> pretrain_classes(const DataConfig& cfg);

// Each split is drawn from its own named stream of data.seed, so splits never
// share draws.
DataSplits make_splits(const DataConfig& cfg, std::size_t data_dim);

}  // namespace fzg
