#pragma once
// Pipeline stages over a run directory:
//   pretrain   -> pre.fzgd, pretrain_metrics.jsonl
//   finetune   -> ft.fzgd, finetune_metrics.jsonl
//   learn-mask -> mask.json, released.fzgd, metrics.jsonl (and ft.fzgd if absent)
//   attack     -> attacked.fzgd
//   eval       -> report.json
//   sweep      -> sweep.csv, sweep/<ratio>_<arm>_<seed>.json
// Every stage also writes config.json. Inputs are checked against the model
// spec before any compute.
#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fzg/config.hpp"
#include "fzg/eval.hpp"

namespace fzg {

namespace run_files {
inline constexpr const char* kConfig = "config.json";
inline constexpr const char* kPre = "pre.fzgd";
inline constexpr const char* kFt = "ft.fzgd";
inline constexpr const char* kReleased = "released.fzgd";
inline constexpr const char* kAttacked = "attacked.fzgd";
inline constexpr const char* kMask = "mask.json";
inline constexpr const char* kMetrics = "metrics.jsonl";
inline constexpr const char* kPretrainMetrics = "pretrain_metrics.jsonl";
inline constexpr const char* kFinetuneMetrics = "finetune_metrics.jsonl";
inline constexpr const char* kReport = "report.json";
inline constexpr const char* kSweep = "sweep.csv";
inline constexpr const char* kSweepDir = "sweep";
}  // namespace run_files

namespace fs = std::filesystem;

void cmd_pretrain(const RunConfig& cfg, const fs::path& run);
void cmd_finetune(const RunConfig& cfg, const fs::path& run);
void cmd_learn_mask(const RunConfig& cfg, const fs::path& run);
void cmd_attack(const RunConfig& cfg, const fs::path& run);
// Evaluates `checkpoint` (default attacked.fzgd) on the held-out split of every
// class, using mask.json for the parameter accounting.
void cmd_eval(const RunConfig& cfg, const fs::path& run,
              const std::optional<std::string>& checkpoint = std::nullopt);
void cmd_sweep(const RunConfig& cfg, const fs::path& run, std::size_t threads = 1);

// Loads a checkpoint and checks it against the model spec, naming the file on
// mismatch.
ParamSet load_model(const fs::path& path, const DenoiserSpec& spec);

Benchmark make_benchmark(const RunConfig& cfg, const DataSplits& splits, ParamSet pre,
                         ParamSet ft);

// FZG_THREADS, default 1.
std::size_t threads_from_env();

}  // namespace fzg
