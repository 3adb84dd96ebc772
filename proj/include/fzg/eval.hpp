#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fzg/bilevel.hpp"
#include "fzg/diffusion.hpp"
#include "fzg/mask.hpp"
#include "fzg/matrix.hpp"
#include "fzg/param_set.hpp"
#include "fzg/training.hpp"

namespace fzg {

// Simulated user fine-tuning a released model.
struct AttackConfig {
  double lr = 1e-3;
  long steps = 2000;
  std::size_t batch_size = 4;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::uint64_t seed = 0;

  TrainConfig train_config() const;
};

void validate(const AttackConfig& cfg);

// Fine-tunes every tensor whose bit is 0; bit-1 tensors are returned
// byte-identical to `released`.
ParamSet frozen_finetune(const ParamSet& released, const BinaryMask& mask, const Dataset& data,
                         const AttackConfig& cfg, const NoiseSchedule& schedule,
                         const DenoiserSpec& spec, double* seconds_per_step = nullptr);

struct RandomMaskSpec {
  double rho = 0.0;
  std::uint64_t seed = 0;
};

// Exactly round(rho * n) bits set, positions uniform without replacement.
BinaryMask random_mask(const RandomMaskSpec& spec, std::size_t n);

// Frechet (2-Wasserstein) distance between Gaussians fitted to the two sample
// sets, using unbiased covariances:
//   d^2 = |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^{1/2} S_b S_a^{1/2})^{1/2})
double frechet_distance(const Matrix& a, const Matrix& b);

struct ClassEval {
  int label = 0;
  double heldout_loss = 0.0;
  double frechet = 0.0;
};

struct EvalReport {
  std::vector<ClassEval> classes;
  double achieved_ratio = 0.0;
  std::size_t total_params = 0;
  std::size_t frozen_params = 0;
  std::size_t trainable_params = 0;
  double sec_per_step = 0.0;

  // Mean over the listed labels.
  double mean_loss(std::span<const int> labels) const;
  double mean_frechet(std::span<const int> labels) const;
};

// Frozen/trainable element counts implied by `mask` over `params`.
void fill_accounting(EvalReport& r, const ParamSet& params, const BinaryMask& mask);

// Held-out loss and Frechet distance (n_samples generated vs. held-out rows)
// for every class present in `holdout`, in ascending label order.
EvalReport evaluate(const ParamSet& theta, const Dataset& holdout, const NoiseSchedule& schedule,
                    const DenoiserSpec& spec, const BinaryMask& mask, std::size_t n_samples,
                    std::uint64_t seed);

std::string report_to_json(const EvalReport& r);

// ---- Freezing-ratio sweep -------------------------------------------------

struct Benchmark {
  ParamSet theta_pre;
  ParamSet theta_ft;
  ClassSplit mask_split;  // data used for mask learning
  Dataset attack_illegal; // disjoint from mask_split
  Dataset attack_legal;
  Dataset holdout;
  std::vector<int> illegal_classes;
  std::vector<int> legal_classes;
  NoiseSchedule schedule;
  DenoiserSpec spec;
  BilevelConfig bilevel;
  AttackConfig attack;
  std::size_t n_samples = 1000;
  std::uint64_t eval_seed = 0;
  std::size_t seeds = 5;
  bool timing = true;  // false reports sec_per_step as 0
};

inline constexpr const char* kArmLearned = "fg";
inline constexpr const char* kArmRandom = "random";
inline constexpr const char* kArmFullFt = "full_ft";

struct SweepRow {
  double ratio = 0.0;
  std::string arm;
  std::size_t seed = 0;
  BinaryMask mask;
  EvalReport illegal;  // after fine-tuning the released model on illegal data
  EvalReport legal;    // after fine-tuning the released model on legal data
};

// Released model for a mask: frozen tensors take pre-trained values, the rest
// the fine-tuned ones.
ParamSet release(const Benchmark& b, const BinaryMask& mask);

// One arm/seed cell: attack with illegal data, fine-tune with legal data, evaluate both.
SweepRow evaluate_arm(const Benchmark& b, double ratio, const std::string& arm, std::size_t seed,
                      const BinaryMask& mask);

// For each ratio: learn a mask, then evaluate the learned, random and full
// fine-tuning arms for b.seeds seeds each. Cells run on up to `threads` workers;
// the row order is fixed regardless of scheduling.
std::vector<SweepRow> sweep(const Benchmark& b, std::span<const double> ratios,
                            std::size_t threads = 1,
                            const std::function<void(const SweepRow&)>& on_row = {});

std::string sweep_csv(const std::vector<SweepRow>& rows, std::span<const int> illegal,
                      std::span<const int> legal);

}  // namespace fzg
