#include "fzg/bilevel.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>

#include "fzg/error.hpp"
#include "fzg/kernels.hpp"

namespace fzg {

namespace {

double mean_of(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Lambdas resolve_lambdas(const BilevelConfig& cfg, const ClassSplit& split) {
  const Lambdas a = auto_lambdas(split.illegal.size(), split.legal.size());
  return {cfg.lambda1.value_or(a.illegal), cfg.lambda2.value_or(a.legal)};
}

void require_finite(double v, const char* what, long outer, long inner) {
  if (!std::isfinite(v)) {
    throw NumericalError(std::string("non-finite ") + what + " at outer step " +
                         std::to_string(outer) + ", inner step " + std::to_string(inner));
  }
}

}  // namespace

void validate(const BilevelConfig& cfg) {
  if (cfg.outer_steps < 1 || cfg.inner_steps < 1) throw ConfigError("K and L must be >= 1");
  if (!(cfg.eta1 >= 0.0) || !(cfg.eta2 >= 0.0)) throw ConfigError("step sizes must be >= 0");
  if (!(cfg.rho >= 0.0 && cfg.rho <= 1.0)) throw ConfigError("rho must lie in [0, 1]");
  if (!(cfg.temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(cfg.sparsity_weight >= 0.0)) throw ConfigError("sparsity weight must be >= 0");
  if (cfg.batch_size == 0) throw ConfigError("batch size must be >= 1");
}

void validate(const ClassSplit& split) {
  if (split.illegal.size() == 0 || split.legal.size() == 0) {
    throw ConfigError("class split needs samples on both sides");
  }
  const std::set<int> ill(split.illegal.labels.begin(), split.illegal.labels.end());
  for (int lab : split.legal.labels) {
    if (ill.contains(lab)) {
      throw ConfigError("class " + std::to_string(lab) + " is both illegal and legal");
    }
  }
}

Lambdas auto_lambdas(std::size_t n_illegal, std::size_t n_legal) {
  if (n_illegal == 0 || n_legal == 0) throw ConfigError("auto_lambdas needs nonzero counts");
  const double inv_i = 1.0 / static_cast<double>(n_illegal);
  const double inv_l = 1.0 / static_cast<double>(n_legal);
  const double scale = 2.0 / (inv_i + inv_l);
  return {inv_i * scale, inv_l * scale};
}

BatchPair draw_pair(const ClassSplit& split, std::size_t batch_size,
                    const NoiseSchedule& schedule, Rng& rng) {
  BatchPair p;
  p.illegal = draw_batch(split.illegal, batch_size, schedule, rng);
  p.legal = draw_batch(split.legal, batch_size, schedule, rng);
  return p;
}

double upper_loss(const ParamSet& theta_m, const BatchPair& batches, const Lambdas& lambdas,
                  const MaskParams& mask, const NoiseSchedule& schedule,
                  const DenoiserSpec& spec) {
  const double li = diffusion_loss(theta_m, batches.illegal, schedule, spec);
  const double ll = diffusion_loss(theta_m, batches.legal, schedule, spec);
  const auto m = continuous_mask(mask);
  return -lambdas.illegal * li + lambdas.legal * ll +
         mask.sparsity_weight * sparsity_loss(m, mask.target_ratio);
}

double lower_loss(const ParamSet& theta_m, const BatchPair& batches,
                  const NoiseSchedule& schedule, const DenoiserSpec& spec) {
  return diffusion_loss(theta_m, batches.illegal, schedule, spec) +
         diffusion_loss(theta_m, batches.legal, schedule, spec);
}

BilevelState init_state(const ParamSet& theta_pre, const ParamSet& theta_ft,
                        const BilevelConfig& cfg) {
  validate(cfg);
  BilevelState s;
  s.theta_d = difference(theta_pre, theta_ft);
  s.theta_m = theta_ft;
  s.mask = init_logits(theta_pre.size(), cfg.temperature, Rng::named(cfg.seed, "mask").next_u64());
  s.mask.target_ratio = cfg.rho;
  s.mask.sparsity_weight = cfg.sparsity_weight;
  return s;
}

void lower_step(ParamSet& theta_m, ParamDelta& theta_d, std::span<const double> m,
                const ParamSet& grad, double eta2) {
  theta_m.require_congruent(grad, "lower_step");
  theta_m.require_congruent(theta_d, "lower_step");
  if (m.size() != theta_m.size()) throw DimensionError("lower_step: mask length mismatch");
  const auto& k = kernels::active();
  for (std::size_t i = 0; i < theta_m.size(); ++i) {
    const double keep = 1.0 - m[i];
    if (keep == 0.0) continue;
    const std::size_t n = grad[i].size();
    k.axpy(theta_d[i].data(), eta2 * keep, grad[i].data(), n);
    k.axpy(theta_m[i].data(), -eta2 * keep * keep, grad[i].data(), n);
  }
}

void lower_step(BilevelState& state, const ParamSet& grad, double eta2) {
  const auto m = continuous_mask(state.mask);
  lower_step(state.theta_m, state.theta_d, m, grad, eta2);
  ++state.inner_step;
}

void set_mask(BilevelState& state, MaskParams next) {
  if (next.size() != state.mask.size()) throw DimensionError("set_mask: logit count changed");
  const auto before = continuous_mask(state.mask);
  const auto after = continuous_mask(next);
  const auto& k = kernels::active();
  for (std::size_t i = 0; i < before.size(); ++i) {
    const double shift = after[i] - before[i];
    if (shift == 0.0) continue;
    k.axpy(state.theta_m[i].data(), shift, state.theta_d[i].data(), state.theta_m[i].size());
  }
  state.mask = std::move(next);
}

std::string metrics_jsonl(const std::vector<MetricsEntry>& log) {
  std::string out;
  for (const auto& e : log) {
    nlohmann::ordered_json j;
    j["phase"] = e.phase;
    j["outer"] = e.outer;
    j["inner"] = e.inner;
    j["loss"] = e.loss;
    j["illegal_loss"] = e.illegal_loss;
    j["legal_loss"] = e.legal_loss;
    j["mask_mean"] = e.mask_mean;
    j["achieved_ratio"] = e.achieved_ratio;
    out += j.dump();
    out += '\n';
  }
  return out;
}

BilevelResult run_bilevel(const BilevelConfig& cfg, const ClassSplit& split,
                          const ParamSet& theta_pre, const ParamSet& theta_ft,
                          const NoiseSchedule& schedule, const DenoiserSpec& spec) {
  validate(cfg);
  validate(split);
  check_params(theta_pre, spec);
  theta_pre.require_congruent(theta_ft, "bilevel inputs");
  const Lambdas lambdas = resolve_lambdas(cfg, split);

  BilevelResult res;
  res.state = init_state(theta_pre, theta_ft, cfg);
  BilevelState& st = res.state;
  Rng rng = Rng::named(cfg.seed, "bilevel-batches");
  res.log.reserve(static_cast<std::size_t>(cfg.outer_steps * (cfg.inner_steps + 1)));

  for (long k = 0; k < cfg.outer_steps; ++k) {
    st.outer_step = k;
    st.inner_step = 0;
    for (long l = 0; l < cfg.inner_steps; ++l) {
      const BatchPair b = draw_pair(split, cfg.batch_size, schedule, rng);
      LossGrad gi = diffusion_grad(st.theta_m, b.illegal, schedule, spec);
      const LossGrad gl = diffusion_grad(st.theta_m, b.legal, schedule, spec);
      require_finite(gi.loss + gl.loss, "lower loss", k, l);
      axpy_all(gi.grad, 1.0, gl.grad);
      const auto m = continuous_mask(st.mask);
      lower_step(st, gi.grad, cfg.eta2);
      res.log.push_back({"lower", k, l, gi.loss + gl.loss, gi.loss, gl.loss, mean_of(m),
                         round_mask(st.mask).achieved_ratio});
    }

    const BatchPair b = draw_pair(split, cfg.batch_size, schedule, rng);
    LossGrad gi = diffusion_grad(st.theta_m, b.illegal, schedule, spec);
    const LossGrad gl = diffusion_grad(st.theta_m, b.legal, schedule, spec);
    const auto m = continuous_mask(st.mask);
    const double upper = -lambdas.illegal * gi.loss + lambdas.legal * gl.loss +
                         st.mask.sparsity_weight * sparsity_loss(m, st.mask.target_ratio);
    require_finite(upper, "upper loss", k, cfg.inner_steps);
    // dL_upper/dtheta(m) = -l1 * dL_illegal + l2 * dL_legal
    ParamSet upper_grad = zeros_like(st.theta_m);
    axpy_all(upper_grad, -lambdas.illegal, gi.grad);
    axpy_all(upper_grad, lambdas.legal, gl.grad);
    set_mask(st, upper_logit_step(st.mask, upper_grad, st.theta_d, cfg.eta1));
    const auto m_after = continuous_mask(st.mask);
    res.log.push_back({"upper", k, cfg.inner_steps, upper, gi.loss, gl.loss, mean_of(m_after),
                       round_mask(st.mask).achieved_ratio});
  }
  if (!st.theta_m.all_finite()) throw NumericalError("bilevel run produced non-finite weights");
  res.mask = round_mask(st.mask);
  return res;
}

ParamSet full_finetune(const ParamSet& theta_init, const Dataset& data, const TrainConfig& cfg,
                       const NoiseSchedule& schedule, const DenoiserSpec& spec) {
  return train_diffusion(theta_init, data, cfg, schedule, spec).params;
}

}  // namespace fzg
