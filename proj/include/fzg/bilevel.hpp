#pragma once

// Alternating mask learning over the compact representation: only theta(m)
// and theta_d = theta_pre - theta_ft are stored. Lower steps fine-tune the
// unfrozen share of theta(m); upper steps move the freezing logits along the
// first-order hypergradient taken through the masked blend.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fzg/diffusion.hpp"
#include "fzg/mask.hpp"
#include "fzg/param_set.hpp"
#include "fzg/rng.hpp"
#include "fzg/training.hpp"

namespace fzg {

struct BilevelConfig {
  long outer_steps = 1000;  // K
  long inner_steps = 10;   // L
  double eta1 = 10.0;      // mask step size
  double eta2 = 1e-3;      // simulated-user step size
  double rho = 0.3;
  std::optional<double> lambda1;  // nullopt = derive from sample counts
  std::optional<double> lambda2;
  double sparsity_weight = 1000.0;
  double temperature = 0.2;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
};

void validate(const BilevelConfig& cfg);

struct ClassSplit {
  Dataset illegal;
  Dataset legal;
};

// Throws ConfigError if either side is empty or the label sets overlap.
void validate(const ClassSplit& split);

struct Lambdas {
  double illegal = 1.0;
  double legal = 1.0;
};

// Inverse-proportional to sample counts, normalized to sum to 2.
Lambdas auto_lambdas(std::size_t n_illegal, std::size_t n_legal);

struct BatchPair {
  Batch illegal;
  Batch legal;
};

BatchPair draw_pair(const ClassSplit& split, std::size_t batch_size,
                    const NoiseSchedule& schedule, Rng& rng);

// -l1 * L(illegal) + l2 * L(legal) + lambda_s * sparsity_loss(m, rho)
double upper_loss(const ParamSet& theta_m, const BatchPair& batches, const Lambdas& lambdas,
                  const MaskParams& mask, const NoiseSchedule& schedule,
                  const DenoiserSpec& spec);

// L(illegal) + L(legal)
double lower_loss(const ParamSet& theta_m, const BatchPair& batches,
                  const NoiseSchedule& schedule, const DenoiserSpec& spec);

struct BilevelState {
  ParamSet theta_m;
  ParamDelta theta_d;
  MaskParams mask;
  long outer_step = 0;
  long inner_step = 0;
};

// theta_d = pre - ft, theta(m) = ft, logits from init_logits.
BilevelState init_state(const ParamSet& theta_pre, const ParamSet& theta_ft,
                        const BilevelConfig& cfg);

// Per tensor, with m the current relaxed mask and g the lower gradient:
//   theta_d_i  += eta2 * (1 - m_i)   * g_i
//   theta(m)_i -= eta2 * (1 - m_i)^2 * g_i
// Both updates read the same (m, g) snapshot.
void lower_step(BilevelState& state, const ParamSet& grad, double eta2);
void lower_step(ParamSet& theta_m, ParamDelta& theta_d, std::span<const double> m,
                const ParamSet& grad, double eta2);

// Replaces the logits and moves theta(m) to the blend under the new mask:
//   theta(m)_i += (m'_i - m_i) * theta_d_i
void set_mask(BilevelState& state, MaskParams next);

struct MetricsEntry {
  std::string phase;  // "lower" or "upper"
  long outer = 0;
  long inner = 0;
  double loss = 0.0;
  double illegal_loss = 0.0;
  double legal_loss = 0.0;
  double mask_mean = 0.0;
  double achieved_ratio = 0.0;
};

std::string metrics_jsonl(const std::vector<MetricsEntry>& log);

struct BilevelResult {
  BinaryMask mask;
  std::vector<MetricsEntry> log;
  BilevelState state;
};

// K outer iterations of L lower steps followed by one upper step; returns the
// rounded mask. A non-finite loss throws NumericalError.
BilevelResult run_bilevel(const BilevelConfig& cfg, const ClassSplit& split,
                          const ParamSet& theta_pre, const ParamSet& theta_ft,
                          const NoiseSchedule& schedule, const DenoiserSpec& spec);

// Unmasked fine-tuning; all tensors trainable.
ParamSet full_finetune(const ParamSet& theta_init, const Dataset& data, const TrainConfig& cfg,
                       const NoiseSchedule& schedule, const DenoiserSpec& spec);

}  // namespace fzg
