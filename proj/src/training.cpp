#include "fzg/training.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "fzg/error.hpp"

namespace fzg {

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

std::string_view optimizer_name(OptimizerKind k) {
  return k == OptimizerKind::kSgd ? "sgd" : "adam";
}

Optimizer::Optimizer(const OptimizerConfig& cfg, const ParamSet& like) : cfg_(cfg) {
  if (!(cfg.lr >= 0.0)) throw ConfigError("learning rate must be nonnegative");
  if (cfg.kind == OptimizerKind::kAdam) {
    m_ = zeros_like(like);
    v_ = zeros_like(like);
  }
}

void Optimizer::step(ParamSet& params, const ParamSet& grad, std::span<const std::uint8_t> frozen) {
  params.require_congruent(grad, "optimizer step");
  if (!frozen.empty() && frozen.size() != params.size()) {
    throw DimensionError("optimizer: frozen mask has " + std::to_string(frozen.size()) +
                         " entries for " + std::to_string(params.size()) + " tensors");
  }
  ++t_;
  const auto& k = kernels::active();
  if (cfg_.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (!frozen.empty() && frozen[i]) continue;
      k.axpy(params[i].data(), -cfg_.lr, grad[i].data(), params[i].size());
    }
    return;
  }
  const kernels::AdamCoeffs c{cfg_.lr,
                              cfg_.beta1,
                              cfg_.beta2,
                              cfg_.eps,
                              1.0 - std::pow(cfg_.beta1, static_cast<double>(t_)),
                              1.0 - std::pow(cfg_.beta2, static_cast<double>(t_))};
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!frozen.empty() && frozen[i]) continue;
    k.adam(params[i].data(), m_[i].data(), v_[i].data(), grad[i].data(), params[i].size(), c);
  }
}

TrainResult train_diffusion(ParamSet init, const Dataset& data, const TrainConfig& cfg,
                            const NoiseSchedule& schedule, const DenoiserSpec& spec,
                            std::span<const std::uint8_t> frozen) {
  if (cfg.steps < 0) throw ConfigError("training steps must be >= 0");
  check_params(init, spec);
  TrainResult out{std::move(init), {}, 0.0};
  if (cfg.steps == 0) return out;
  if (cfg.batch_size == 0) throw ConfigError("batch size must be >= 1");
  Optimizer opt(cfg.optimizer, out.params);
  Rng rng = Rng::named(cfg.seed, "train");
  out.losses.reserve(static_cast<std::size_t>(cfg.steps));
  const auto start = std::chrono::steady_clock::now();
  for (long s = 0; s < cfg.steps; ++s) {
    const Batch b = draw_batch(data, cfg.batch_size, schedule, rng);
    LossGrad lg = diffusion_grad(out.params, b, schedule, spec);
    if (!std::isfinite(lg.loss)) {
      throw NumericalError("non-finite training loss at step " + std::to_string(s));
    }
    opt.step(out.params, lg.grad, frozen);
    out.losses.push_back(lg.loss);
  }
  out.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

double heldout_loss(const ParamSet& params, const Dataset& data, const NoiseSchedule& schedule,
                    const DenoiserSpec& spec, std::uint64_t seed, std::size_t draws) {
  if (data.size() == 0) throw ConfigError("held-out set is empty");
  Rng rng = Rng::named(seed, "heldout");
  Batch b;
  const std::size_t n = data.size() * draws;
  b.x0 = Matrix(n, data.x.cols);
  b.eps = Matrix(n, data.x.cols);
  b.labels.resize(n);
  b.t.resize(n);
  for (std::size_t r = 0; r < draws; ++r) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      const std::size_t row = r * data.size() + i;
      auto src = data.x.row(i);
      std::copy(src.begin(), src.end(), b.x0.row(row).begin());
      b.labels[row] = data.labels[i];
      b.t[row] = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.num_steps)));
      for (double& e : b.eps.row(row)) e = rng.normal();
    }
  }
  return diffusion_loss(params, b, schedule, spec);
}

}  // namespace fzg
