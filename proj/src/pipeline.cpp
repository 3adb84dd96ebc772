#include "fzg/pipeline.hpp"

#include <cstdio>
#include <cstdlib>
#include <nlohmann/json.hpp>

#include "fzg/checkpoint.hpp"
#include "fzg/error.hpp"
#include "fzg/io.hpp"
#include "fzg/mask.hpp"

namespace fzg {

namespace {

void write_config(const RunConfig& cfg, const fs::path& run) {
  write_file_atomic(run / run_files::kConfig, config_to_json(cfg));
}

std::string loss_log(const char* phase, const std::vector<double>& losses) {
  std::string out;
  for (std::size_t i = 0; i < losses.size(); ++i) {
    nlohmann::ordered_json j;
    j["phase"] = phase;
    j["step"] = i;
    j["loss"] = losses[i];
    out += j.dump();
    out += '\n';
  }
  return out;
}

MaskFile load_mask_for(const fs::path& path, const ParamSet& model) {
  MaskFile f = load_mask(path);
  if (f.tensor_names.size() != model.size()) {
    throw CongruenceError(path.string() + ": mask covers " + std::to_string(f.tensor_names.size()) +
                          " tensors, model has " + std::to_string(model.size()));
  }
  for (std::size_t i = 0; i < model.size(); ++i) {
    if (f.tensor_names[i] != model.name(i)) {
      throw CongruenceError(path.string() + ": tensor " + std::to_string(i) + " is \"" +
                            f.tensor_names[i] + "\" in the mask but \"" + model.name(i) +
                            "\" in the model");
    }
  }
  return f;
}

ParamSet finetuned(const RunConfig& cfg, const fs::path& run, const ParamSet& pre,
                   const DataSplits& splits, const NoiseSchedule& schedule) {
  const fs::path path = run / run_files::kFt;
  if (fs::exists(path)) {
    ParamSet ft = load_model(path, cfg.model);
    pre.require_congruent(ft, path.string());
    return ft;
  }
  TrainResult r = train_diffusion(pre, concat(splits.finetune.illegal, splits.finetune.legal),
                                  cfg.finetune, schedule, cfg.model);
  save_checkpoint(r.params, path);
  write_file_atomic(run / run_files::kFinetuneMetrics, loss_log("finetune", r.losses));
  return std::move(r.params);
}

std::string ratio_tag(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", r);
  return buf;
}

}  // namespace

ParamSet load_model(const fs::path& path, const DenoiserSpec& spec) {
  if (!fs::exists(path)) throw IoError("missing artifact " + path.string());
  ParamSet p = load_checkpoint(path);
  try {
    check_params(p, spec);
  } catch (const CongruenceError& e) {
    throw CongruenceError(path.string() + ": " + e.what());
  }
  return p;
}

std::size_t threads_from_env() {
  const char* v = std::getenv("FZG_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError(std::string("FZG_THREADS must be a positive integer, got ") + v);
  return static_cast<std::size_t>(n);
}

void cmd_pretrain(const RunConfig& cfg, const fs::path& run) {
  validate(cfg);
  const auto schedule = make_schedule(cfg.schedule);
  const DataSplits splits = make_splits(cfg.data, cfg.model.data_dim);
  write_config(cfg, run);
  const ParamSet init = init_denoiser(cfg.model, cfg.pretrain.seed);
  const TrainResult r = train_diffusion(init, splits.pretrain, cfg.pretrain, schedule, cfg.model);
  save_checkpoint(r.params, run / run_files::kPre);
  write_file_atomic(run / run_files::kPretrainMetrics, loss_log("pretrain", r.losses));
}

void cmd_finetune(const RunConfig& cfg, const fs::path& run) {
  validate(cfg);
  const auto schedule = make_schedule(cfg.schedule);
  const ParamSet pre = load_model(run / run_files::kPre, cfg.model);
  const DataSplits splits = make_splits(cfg.data, cfg.model.data_dim);
  write_config(cfg, run);
  const TrainResult r = train_diffusion(
      pre, concat(splits.finetune.illegal, splits.finetune.legal), cfg.finetune, schedule, cfg.model);
  save_checkpoint(r.params, run / run_files::kFt);
  write_file_atomic(run / run_files::kFinetuneMetrics, loss_log("finetune", r.losses));
}

void cmd_learn_mask(const RunConfig& cfg, const fs::path& run) {
  validate(cfg);
  const auto schedule = make_schedule(cfg.schedule);
  const ParamSet pre = load_model(run / run_files::kPre, cfg.model);
  const DataSplits splits = make_splits(cfg.data, cfg.model.data_dim);
  write_config(cfg, run);
  const ParamSet ft = finetuned(cfg, run, pre, splits, schedule);

  const BilevelResult res = run_bilevel(cfg.bilevel, splits.finetune, pre, ft, schedule, cfg.model);
  MaskFile mf;
  mf.tensor_names = pre.names();
  mf.params = res.state.mask;
  mf.mask = res.mask;
  save_mask(mf, run / run_files::kMask);
  save_checkpoint(blend(pre, ft, res.mask.as_values()), run / run_files::kReleased);
  write_file_atomic(run / run_files::kMetrics, metrics_jsonl(res.log));
}

void cmd_attack(const RunConfig& cfg, const fs::path& run) {
  validate(cfg);
  const auto schedule = make_schedule(cfg.schedule);
  const ParamSet released = load_model(run / run_files::kReleased, cfg.model);
  const MaskFile mf = load_mask_for(run / run_files::kMask, released);
  const DataSplits splits = make_splits(cfg.data, cfg.model.data_dim);
  write_config(cfg, run);
  const ParamSet attacked =
      frozen_finetune(released, mf.mask, splits.attack_illegal, cfg.attack, schedule, cfg.model);
  save_checkpoint(attacked, run / run_files::kAttacked);
}

void cmd_eval(const RunConfig& cfg, const fs::path& run, const std::optional<std::string>& checkpoint) {
  validate(cfg);
  const auto schedule = make_schedule(cfg.schedule);
  const ParamSet theta = load_model(run / checkpoint.value_or(run_files::kAttacked), cfg.model);
  const MaskFile mf = load_mask_for(run / run_files::kMask, theta);
  const DataSplits splits = make_splits(cfg.data, cfg.model.data_dim);
  write_config(cfg, run);
  const EvalReport report =
      evaluate(theta, splits.holdout, schedule, cfg.model, mf.mask, cfg.eval.n_samples, cfg.eval.seed);
  write_file_atomic(run / run_files::kReport, report_to_json(report));
}

Benchmark make_benchmark(const RunConfig& cfg, const DataSplits& splits, ParamSet pre, ParamSet ft) {
  Benchmark b;
  b.theta_pre = std::move(pre);
  b.theta_ft = std::move(ft);
  b.mask_split = splits.finetune;
  b.attack_illegal = splits.attack_illegal;
  b.attack_legal = splits.attack_legal;
  b.holdout = splits.holdout;
  b.illegal_classes = cfg.data.illegal_classes;
  b.legal_classes = cfg.data.legal_classes;
  b.schedule = make_schedule(cfg.schedule);
  b.spec = cfg.model;
  b.bilevel = cfg.bilevel;
  b.attack = cfg.attack;
  b.n_samples = cfg.eval.n_samples;
  b.eval_seed = cfg.eval.seed;
  b.seeds = cfg.eval.seeds;
  b.timing = cfg.eval.timing;
  return b;
}

void cmd_sweep(const RunConfig& cfg, const fs::path& run, std::size_t threads) {
  validate(cfg);
  const auto schedule = make_schedule(cfg.schedule);
  const ParamSet pre = load_model(run / run_files::kPre, cfg.model);
  const DataSplits splits = make_splits(cfg.data, cfg.model.data_dim);
  write_config(cfg, run);
  ParamSet ft = finetuned(cfg, run, pre, splits, schedule);
  const Benchmark b = make_benchmark(cfg, splits, pre, std::move(ft));

  const auto rows = sweep(b, cfg.sweep_ratios, threads);
  const fs::path arm_dir = run / run_files::kSweepDir;
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["ratio"] = r.ratio;
    j["arm"] = r.arm;
    j["seed"] = r.seed;
    j["bits"] = r.mask.bits;
    j["illegal"] = nlohmann::ordered_json::parse(report_to_json(r.illegal));
    j["legal"] = nlohmann::ordered_json::parse(report_to_json(r.legal));
    write_file_atomic(arm_dir / (ratio_tag(r.ratio) + "_" + r.arm + "_" + std::to_string(r.seed) + ".json"),
                      j.dump(2) + "\n");
  }
  write_file_atomic(run / run_files::kSweep,
                    sweep_csv(rows, cfg.data.illegal_classes, cfg.data.legal_classes));
}

}  // namespace fzg
