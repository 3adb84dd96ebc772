#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "fzg/diffusion.hpp"
#include "fzg/kernels.hpp"
#include "fzg/param_set.hpp"

namespace fzg {

enum class OptimizerKind { kSgd, kAdam };

OptimizerKind parse_optimizer(std::string_view name);
std::string_view optimizer_name(OptimizerKind k);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Plain SGD or Adam over a ParamSet. Tensors flagged in `frozen` are skipped
// entirely: neither the parameters nor the moment buffers are touched.
class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, const ParamSet& like);

  void step(ParamSet& params, const ParamSet& grad, std::span<const std::uint8_t> frozen = {});
  long steps_taken() const { return t_; }

 private:
  OptimizerConfig cfg_;
  ParamSet m_;
  ParamSet v_;
  long t_ = 0;
};

struct TrainConfig {
  OptimizerConfig optimizer;
  long steps = 0;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
};

struct TrainResult {
  ParamSet params;
  std::vector<double> losses;  // one per step
  double seconds = 0.0;
};

// Minibatch training on the diffusion loss. Batches come from
// Rng::named(seed, "train"). A non-finite loss throws NumericalError.
TrainResult train_diffusion(ParamSet init, const Dataset& data, const TrainConfig& cfg,
                            const NoiseSchedule& schedule, const DenoiserSpec& spec,
                            std::span<const std::uint8_t> frozen = {});

// Mean diffusion loss over every row of `data`, each evaluated at `draws`
// seeded (t, eps) pairs. Identical seeds give identical noise across models.
double heldout_loss(const ParamSet& params, const Dataset& data, const NoiseSchedule& schedule,
                    const DenoiserSpec& spec, std::uint64_t seed, std::size_t draws = 4);

}  // namespace fzg
