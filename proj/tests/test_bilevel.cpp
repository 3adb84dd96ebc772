#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "fzg/bilevel.hpp"
#include "fzg/error.hpp"

using namespace fzg;

namespace {

const DenoiserSpec kTiny{2, 8, 2, 4, 4};

NoiseSchedule tiny_schedule() { return make_schedule(20, 1e-4, 0.2); }

ClassSplit tiny_split(std::size_t n_illegal = 40, std::size_t n_legal = 40) {
  const auto classes = circle_layout(4, 4.0, 0.35);
  const Dataset all_i = gen_class_data(classes, n_illegal, 3);
  const Dataset all_l = gen_class_data(classes, n_legal, 4);
  const std::vector<int> ill{0, 1}, leg{2, 3};
  return {select_classes(all_i, ill), select_classes(all_l, leg)};
}

ParamSet scalar_set(double v) {
  ParamSet p;
  p.add("s", Tensor::scalar(v));
  return p;
}

double naive_sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Explicit (pre, ft) pair implied by a compact state:
//   pre = theta(m) + (1 - m) theta_d,  ft = theta(m) - m theta_d
std::pair<ParamSet, ParamSet> implied_pair(const BilevelState& st) {
  const auto m = continuous_mask(st.mask);
  ParamSet pre = st.theta_m, ft = st.theta_m;
  for (std::size_t i = 0; i < pre.size(); ++i) {
    for (std::size_t j = 0; j < pre[i].size(); ++j) {
      pre[i][j] += (1.0 - m[i]) * st.theta_d[i][j];
      ft[i][j] -= m[i] * st.theta_d[i][j];
    }
  }
  return {pre, ft};
}

}  // namespace

TEST(AutoLambdas, InverseToCountsAndSumToTwo) {
  const Lambdas l = auto_lambdas(100, 300);
  EXPECT_DOUBLE_EQ(l.illegal, 1.5);
  EXPECT_DOUBLE_EQ(l.legal, 0.5);
  const Lambdas eq = auto_lambdas(7, 7);
  EXPECT_DOUBLE_EQ(eq.illegal, 1.0);
  EXPECT_DOUBLE_EQ(eq.legal, 1.0);
  const Lambdas sw = auto_lambdas(300, 100);
  EXPECT_DOUBLE_EQ(sw.illegal, l.legal);
  EXPECT_DOUBLE_EQ(sw.legal, l.illegal);
  for (auto [a, b] : {std::pair{1, 2}, {5, 1000}, {999, 3}}) {
    const Lambdas x = auto_lambdas(a, b);
    EXPECT_NEAR(x.illegal + x.legal, 2.0, 1e-15);
    EXPECT_NEAR(x.illegal * a, x.legal * b, 1e-12);
  }
  EXPECT_THROW(auto_lambdas(0, 5), ConfigError);
  EXPECT_THROW(auto_lambdas(5, 0), ConfigError);
}

TEST(BilevelConfig, Validation) {
  BilevelConfig c;
  EXPECT_NO_THROW(validate(c));
  auto bad = [&](auto mutate) {
    BilevelConfig b;
    mutate(b);
    EXPECT_THROW(validate(b), ConfigError);
  };
  bad([](BilevelConfig& b) { b.outer_steps = 0; });
  bad([](BilevelConfig& b) { b.inner_steps = 0; });
  bad([](BilevelConfig& b) { b.eta1 = -1; });
  bad([](BilevelConfig& b) { b.eta2 = std::nan(""); });
  bad([](BilevelConfig& b) { b.rho = 1.5; });
  bad([](BilevelConfig& b) { b.temperature = 0; });
  bad([](BilevelConfig& b) { b.batch_size = 0; });

  ClassSplit s = tiny_split();
  EXPECT_NO_THROW(validate(s));
  s.legal = s.illegal;
  EXPECT_THROW(validate(s), ConfigError);
  s.legal = Dataset{};
  EXPECT_THROW(validate(s), ConfigError);
}

TEST(Objectives, ComponentSums) {
  const ParamSet theta = init_denoiser(kTiny, 5);
  const NoiseSchedule sch = tiny_schedule();
  const ClassSplit split = tiny_split();
  Rng rng(6);
  const BatchPair b = draw_pair(split, 8, sch, rng);
  const double li = diffusion_loss(theta, b.illegal, sch, kTiny);
  const double ll = diffusion_loss(theta, b.legal, sch, kTiny);

  MaskParams mp;
  mp.temperature = 0.5;
  mp.target_ratio = 0.25;
  mp.sparsity_weight = 3.0;
  for (std::size_t i = 0; i < theta.size(); ++i) mp.logits.push_back(0.1 * static_cast<double>(i) - 0.8);
  double mean = 0;
  for (double w : mp.logits) mean += naive_sigmoid(w / 0.5);
  mean /= static_cast<double>(mp.size());
  const double expect = -1.5 * li + 0.5 * ll + 3.0 * (mean - 0.25) * (mean - 0.25);

  EXPECT_NEAR(upper_loss(theta, b, {1.5, 0.5}, mp, sch, kTiny), expect, 1e-12 * (1 + std::abs(expect)));
  EXPECT_DOUBLE_EQ(lower_loss(theta, b, sch, kTiny), li + ll);
  for (const Batch* x : {&b.illegal, &b.legal}) EXPECT_EQ(x->size(), 8u);
  for (int lab : b.illegal.labels) EXPECT_TRUE(lab == 0 || lab == 1);
  for (int lab : b.legal.labels) EXPECT_TRUE(lab == 2 || lab == 3);
}

TEST(LowerStep, ScalarExample) {
  ParamSet tm = scalar_set(1.0);
  ParamDelta td(scalar_set(0.5));
  const std::vector<double> m{0.5};
  lower_step(tm, td, m, scalar_set(2.0), 0.1);
  EXPECT_DOUBLE_EQ(td[0][0], 0.6);
  EXPECT_DOUBLE_EQ(tm[0][0], 0.95);
}

TEST(LowerStep, FrozenTensorUntouched) {
  ParamSet tm;
  tm.add("a", Tensor({2}, {1, -0.0}));
  tm.add("b", Tensor({2}, {3, 4}));
  ParamDelta td(tm);
  ParamSet g;
  g.add("a", Tensor({2}, {5, 6}));
  g.add("b", Tensor({2}, {7, 8}));
  const ParamSet tm0 = tm;
  const ParamDelta td0 = td;
  const std::vector<double> m{1.0, 0.0};
  lower_step(tm, td, m, g, 0.5);
  EXPECT_TRUE(tm[0].bit_equal(tm0[0]));
  EXPECT_TRUE(td[0].bit_equal(td0[0]));
  EXPECT_EQ(tm[1][0], 3 - 0.5 * 7);
  EXPECT_EQ(td[1][1], 4 + 0.5 * 8);

  // A logit far above zero saturates the relaxed mask to exactly 1.
  BilevelState st;
  st.theta_m = tm0;
  st.theta_d = td0;
  st.mask.logits = {1e3, 1e3};
  lower_step(st, g, 0.5);
  EXPECT_TRUE(st.theta_m.bit_equal(tm0));
  EXPECT_TRUE(st.theta_d.bit_equal(td0));
  EXPECT_EQ(st.inner_step, 1);

  const std::vector<double> short_m{0.5};
  EXPECT_THROW(lower_step(tm, td, short_m, g, 0.1), DimensionError);
}

// The compact state (theta(m), theta_d) must track an explicit simulation that
// keeps theta_pre fixed and fine-tunes a full copy of the fine-tuned weights
// through the blend.
TEST(LowerStep, MatchesExplicitRepresentation) {
  const NoiseSchedule sch = tiny_schedule();
  const ClassSplit split = tiny_split();
  BilevelConfig cfg;
  cfg.seed = 3;
  BilevelState st = init_state(init_denoiser(kTiny, 1), init_denoiser(kTiny, 2), cfg);
  auto [pre, ft] = implied_pair(st);
  Rng rng(4), mrng(5);
  const double eta2 = 0.05;

  for (int step = 0; step < 100; ++step) {
    if (step % 10 == 5) {
      MaskParams next = st.mask;
      for (double& w : next.logits) w = mrng.uniform(-0.6, 0.6);
      set_mask(st, next);
    }
    const auto m = continuous_mask(st.mask);
    const ParamSet explicit_blend = blend(pre, ft, m);
    ASSERT_LT(max_abs_diff(explicit_blend, st.theta_m), 1e-9) << "step " << step;

    const BatchPair b = draw_pair(split, 6, sch, rng);
    LossGrad gi = diffusion_grad(explicit_blend, b.illegal, sch, kTiny);
    const LossGrad gl = diffusion_grad(explicit_blend, b.legal, sch, kTiny);
    axpy_all(gi.grad, 1.0, gl.grad);

    // chain rule through theta(m) = m pre + (1 - m) ft
    for (std::size_t i = 0; i < ft.size(); ++i) {
      for (std::size_t j = 0; j < ft[i].size(); ++j) ft[i][j] -= eta2 * (1.0 - m[i]) * gi.grad[i][j];
    }
    lower_step(st, gi.grad, eta2);
  }
  const auto m = continuous_mask(st.mask);
  EXPECT_LT(max_abs_diff(blend(pre, ft, m), st.theta_m), 1e-9);
  EXPECT_LT(max_abs_diff(difference(pre, ft), st.theta_d), 1e-9);
  EXPECT_GT(max_abs_diff(ft, init_denoiser(kTiny, 2)), 1e-3);
}

TEST(SetMask, MovesToNewBlend) {
  const ParamSet pre = init_denoiser(kTiny, 1);
  const ParamSet ft = init_denoiser(kTiny, 2);
  BilevelConfig cfg;
  BilevelState st = init_state(pre, ft, cfg);
  EXPECT_TRUE(st.theta_m.bit_equal(ft));
  EXPECT_LT(max_abs_diff(difference(pre, ft), st.theta_d), 1e-300);

  // the initial relaxed mask is below 1e-4, so the implied pre-trained weights
  // sit within 1e-4 |theta_d| of the real ones
  const auto [pre0, ft0] = implied_pair(st);
  EXPECT_TRUE(ft0.congruent(ft));
  EXPECT_LT(max_abs_diff(pre0, pre), 1e-4 * max_abs_diff(pre, ft));

  MaskParams next = st.mask;
  for (std::size_t i = 0; i < next.size(); ++i) next.logits[i] = (i % 2 == 0) ? 1e3 : -1e3;
  set_mask(st, next);
  const auto m = continuous_mask(st.mask);
  EXPECT_LT(max_abs_diff(blend(pre0, ft0, m), st.theta_m), 1e-12);
  const auto [pre1, ft1] = implied_pair(st);
  EXPECT_LT(max_abs_diff(pre1, pre0), 1e-12);
  EXPECT_LT(max_abs_diff(ft1, ft0), 1e-12);
  MaskParams wrong;
  wrong.logits = {0.0};
  EXPECT_THROW(set_mask(st, wrong), DimensionError);
}

// One scalar tensor, upper objective U(theta) = (theta - a)^2.
TEST(Hypergradient, OneDimensionalFixture) {
  const double pre = 2.0, ft = -1.0, a = 0.5, T = 0.2;
  const ParamDelta d(scalar_set(pre - ft));
  for (double w : {-0.3, -0.05, 0.0, 0.1, 0.4}) {
    MaskParams mp;
    mp.logits = {w};
    mp.temperature = T;
    mp.sparsity_weight = 0.0;
    const auto u = [&](double wl) {
      const double s = naive_sigmoid(wl / T);
      const double th = s * pre + (1 - s) * ft;
      return (th - a) * (th - a);
    };
    const double s = naive_sigmoid(w / T);
    const double th = s * pre + (1 - s) * ft;
    const auto g = logit_gradient(mp, scalar_set(2 * (th - a)), d);
    const double h = 1e-6;
    const double fd = (u(w + h) - u(w - h)) / (2 * h);
    EXPECT_NEAR(g[0], fd, 1e-6 * std::max(1.0, std::abs(fd))) << w;
    // freezing more moves theta toward pre; it pays off only while theta < a
    EXPECT_EQ(g[0] < 0, th < a) << w;
  }
}

TEST(RunBilevel, ZeroStepSizesKeepInitialMask) {
  const ParamSet pre = init_denoiser(kTiny, 1);
  const ParamSet ft = init_denoiser(kTiny, 2);
  BilevelConfig cfg;
  cfg.outer_steps = 1;
  cfg.inner_steps = 1;
  cfg.eta1 = 0.0;
  cfg.eta2 = 0.0;
  cfg.batch_size = 4;
  const auto r = run_bilevel(cfg, tiny_split(), pre, ft, tiny_schedule(), kTiny);
  EXPECT_EQ(r.mask.bits, std::vector<std::uint8_t>(kTiny.tensor_count(), 0));
  EXPECT_EQ(r.mask.achieved_ratio, 0.0);
  EXPECT_TRUE(r.state.theta_m.bit_equal(ft));
  EXPECT_EQ(r.state.mask.logits, init_state(pre, ft, cfg).mask.logits);
}

TEST(RunBilevel, LogShapeAndDeterminism) {
  const ParamSet pre = init_denoiser(kTiny, 1);
  const ParamSet ft = init_denoiser(kTiny, 2);
  BilevelConfig cfg;
  cfg.outer_steps = 4;
  cfg.inner_steps = 3;
  cfg.batch_size = 4;
  cfg.seed = 9;
  const ClassSplit split = tiny_split();
  const auto a = run_bilevel(cfg, split, pre, ft, tiny_schedule(), kTiny);
  const auto b = run_bilevel(cfg, split, pre, ft, tiny_schedule(), kTiny);

  std::size_t lower = 0, upper = 0;
  for (const auto& e : a.log) (e.phase == "lower" ? lower : upper) += 1;
  EXPECT_EQ(lower, 12u);
  EXPECT_EQ(upper, 4u);
  EXPECT_EQ(a.log.back().phase, "upper");
  EXPECT_EQ(metrics_jsonl(a.log), metrics_jsonl(b.log));
  EXPECT_EQ(a.state.mask.logits, b.state.mask.logits);
  EXPECT_TRUE(a.state.theta_m.bit_equal(b.state.theta_m));

  const std::string text = metrics_jsonl(a.log);
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), a.log.size());

  cfg.seed = 10;
  const auto c = run_bilevel(cfg, split, pre, ft, tiny_schedule(), kTiny);
  EXPECT_NE(c.state.mask.logits, a.state.mask.logits);
}

TEST(RunBilevel, RejectsMismatchedModels) {
  const ParamSet pre = init_denoiser(kTiny, 1);
  DenoiserSpec other = kTiny;
  other.hidden_dim = 6;
  BilevelConfig cfg;
  cfg.outer_steps = 1;
  cfg.inner_steps = 1;
  EXPECT_THROW(run_bilevel(cfg, tiny_split(), pre, init_denoiser(other, 2), tiny_schedule(), kTiny),
               CongruenceError);
}

TEST(FullFinetune, ZeroStepsAndDeterminism) {
  const ParamSet init = init_denoiser(kTiny, 1);
  const ClassSplit split = tiny_split();
  TrainConfig tc;
  tc.steps = 0;
  EXPECT_TRUE(full_finetune(init, split.illegal, tc, tiny_schedule(), kTiny).bit_equal(init));
  tc.steps = 20;
  tc.batch_size = 4;
  tc.seed = 2;
  const ParamSet a = full_finetune(init, split.illegal, tc, tiny_schedule(), kTiny);
  const ParamSet b = full_finetune(init, split.illegal, tc, tiny_schedule(), kTiny);
  EXPECT_TRUE(a.bit_equal(b));
  EXPECT_GT(max_abs_diff(a, init), 0.0);

  tc.steps = 500;
  const NoiseSchedule sch = tiny_schedule();
  Rng rng(8);
  const Batch held = draw_batch(tiny_split(200, 200).illegal, 256, sch, rng);
  const ParamSet trained = full_finetune(init, split.illegal, tc, sch, kTiny);
  EXPECT_LT(diffusion_loss(trained, held, sch, kTiny), diffusion_loss(init, held, sch, kTiny));
}
