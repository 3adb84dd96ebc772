#include "fzg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "fzg/bilevel.hpp"
#include "fzg/mask.hpp"
#include "fzg/rng.hpp"

namespace fzg {

namespace {

double rel_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

double central(const std::function<double()>& f, double& x, double h) {
  const double x0 = x;
  x = x0 + h;
  const double up = f();
  x = x0 - h;
  const double down = f();
  x = x0;
  return (up - down) / (2.0 * h);
}

void note(GradCheckResult& r, double err, const std::string& where) {
  ++r.checked;
  if (r.worst.empty() || err > r.max_rel_error) {
    r.max_rel_error = err;
    r.worst = where;
  }
}

Batch random_batch(const DenoiserSpec& spec, const NoiseSchedule& schedule, std::size_t n,
                   Rng& rng) {
  Batch b;
  b.x0 = Matrix(n, spec.data_dim);
  b.eps = Matrix(n, spec.data_dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t d = 0; d < spec.data_dim; ++d) {
      b.x0(i, d) = 2.0 * rng.normal();
      b.eps(i, d) = rng.normal();
    }
    // Leave the last class unused so its embedding row has a zero gradient.
    b.labels.push_back(static_cast<int>(rng.below(spec.num_classes - 1)));
    b.t.push_back(1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.num_steps))));
  }
  return b;
}

GradCheckResult check_diffusion(const GradCheckConfig& cfg) {
  const auto schedule = make_schedule(cfg.num_steps, 1e-3, 0.2);
  Rng rng = Rng::named(cfg.seed, "gradcheck-diffusion");
  ParamSet params = init_denoiser(cfg.spec, rng.next_u64());
  const Batch batch = random_batch(cfg.spec, schedule, cfg.batch_size, rng);
  const LossGrad lg = diffusion_grad(params, batch, schedule, cfg.spec);

  GradCheckResult r{"diffusion_grad", "", 0, 0.0, false};
  auto loss = [&] { return diffusion_loss(params, batch, schedule, cfg.spec); };
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto data = params[i].values();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double fd = central(loss, data[j], cfg.h);
      note(r, rel_error(lg.grad[i][j], fd, cfg.floor),
           params.name(i) + "[" + std::to_string(j) + "]");
    }
  }
  r.pass = r.max_rel_error < cfg.tolerance;
  return r;
}

GradCheckResult check_sparsity(const GradCheckConfig& cfg) {
  Rng rng = Rng::named(cfg.seed, "gradcheck-sparsity");
  GradCheckResult r{"sparsity_grad", "", 0, 0.0, false};
  for (double rho : {0.0, 0.1, 0.3, 0.5, 0.7, 1.0}) {
    MaskParams mp;
    mp.temperature = 0.2;
    mp.target_ratio = rho;
    for (int i = 0; i < 17; ++i) mp.logits.push_back(rng.uniform(-0.6, 0.6));
    const auto g = sparsity_grad(continuous_mask(mp), rho, mp);
    auto f = [&] { return sparsity_loss(continuous_mask(mp), rho); };
    for (std::size_t i = 0; i < mp.size(); ++i) {
      const double fd = central(f, mp.logits[i], cfg.h);
      note(r, rel_error(g[i], fd, cfg.floor), "w[" + std::to_string(i) + "] rho=" + std::to_string(rho));
    }
  }
  r.pass = r.max_rel_error < cfg.tolerance;
  return r;
}

// Full upper objective as a function of the logits with theta_pre and theta_ft
// held fixed: theta(m) = theta_ft + m * theta_d.
GradCheckResult check_upper(const GradCheckConfig& cfg) {
  const auto schedule = make_schedule(cfg.num_steps, 1e-3, 0.2);
  Rng rng = Rng::named(cfg.seed, "gradcheck-upper");
  const ParamSet pre = init_denoiser(cfg.spec, rng.next_u64());
  const ParamSet ft = init_denoiser(cfg.spec, rng.next_u64());
  const ParamDelta theta_d = difference(pre, ft);
  BatchPair batches;
  batches.illegal = random_batch(cfg.spec, schedule, cfg.batch_size, rng);
  batches.legal = random_batch(cfg.spec, schedule, cfg.batch_size, rng);
  const Lambdas lambdas{1.3, 0.7};

  MaskParams mp;
  mp.temperature = 0.2;
  mp.target_ratio = 0.3;
  mp.sparsity_weight = 2.0;
  for (std::size_t i = 0; i < pre.size(); ++i) mp.logits.push_back(rng.uniform(-0.4, 0.4));

  auto theta_of = [&](const MaskParams& p) { return blend(pre, ft, continuous_mask(p)); };
  auto objective = [&] { return upper_loss(theta_of(mp), batches, lambdas, mp, schedule, cfg.spec); };

  const ParamSet theta = theta_of(mp);
  const LossGrad gi = diffusion_grad(theta, batches.illegal, schedule, cfg.spec);
  const LossGrad gl = diffusion_grad(theta, batches.legal, schedule, cfg.spec);
  ParamSet upper_grad = zeros_like(theta);
  axpy_all(upper_grad, -lambdas.illegal, gi.grad);
  axpy_all(upper_grad, lambdas.legal, gl.grad);
  const auto g = logit_gradient(mp, upper_grad, theta_d);

  GradCheckResult r{"upper_logit_grad", "", 0, 0.0, false};
  for (std::size_t i = 0; i < mp.size(); ++i) {
    const double fd = central(objective, mp.logits[i], cfg.h);
    note(r, rel_error(g[i], fd, cfg.floor), pre.name(i));
  }
  r.pass = r.max_rel_error < cfg.tolerance;
  return r;
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck(const GradCheckConfig& cfg) {
  return {check_diffusion(cfg), check_sparsity(cfg), check_upper(cfg)};
}

}  // namespace fzg
