#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <unistd.h>

#include "fzg/error.hpp"
#include "fzg/io.hpp"
#include "fzg/mask.hpp"
#include "fzg/rng.hpp"

using namespace fzg;

namespace {

MaskParams with_logits(std::vector<double> w, double T = 0.2, double rho = 0.3, double ls = 0.0) {
  MaskParams mp;
  mp.logits = std::move(w);
  mp.temperature = T;
  mp.target_ratio = rho;
  mp.sparsity_weight = ls;
  return mp;
}

ParamSet scalar_set(double v) {
  ParamSet p;
  p.add("s", Tensor::scalar(v));
  return p;
}

}  // namespace

TEST(ContinuousMask, KnownValues) {
  const auto m = continuous_mask(with_logits({0.0, -2.0, -0.2}));
  EXPECT_EQ(m[0], 0.5);
  EXPECT_NEAR(m[1], 4.5398e-5, 1e-9);
  EXPECT_NEAR(m[2], 0.268941, 1e-6);
}

TEST(ContinuousMask, OverflowSafeAndMonotone) {
  const auto m = continuous_mask(with_logits({-1e6, 1e6, -800, 800}));
  EXPECT_EQ(m[0], 0.0);
  EXPECT_EQ(m[1], 1.0);
  for (double v : m) EXPECT_TRUE(std::isfinite(v));
  double prev = -1;
  for (double w = -5; w <= 5; w += 0.01) {
    const double s = continuous_mask(with_logits({w}))[0];
    EXPECT_GT(s, prev);
    prev = s;
  }
  EXPECT_THROW(continuous_mask(with_logits({0.0}, 0.0)), ConfigError);
}

TEST(Sparsity, LossExamples) {
  const std::vector<double> at_rho(5, 0.3);
  EXPECT_NEAR(sparsity_loss(at_rho, 0.3), 0.0, 1e-30);
  const std::vector<double> m{1, 0, 0, 0};
  EXPECT_DOUBLE_EQ(sparsity_loss(m, 0.5), 0.0625);
  const std::vector<double> z(4, 0.0);
  EXPECT_EQ(sparsity_loss(z, 0.0), 0.0);
}

TEST(Sparsity, GradExamples) {
  MaskParams one = with_logits({0.0}, 0.2, 0.0);
  const auto g = sparsity_grad(continuous_mask(one), 0.0, one);
  EXPECT_DOUBLE_EQ(g[0], 1.25);

  // Logits chosen so mean(m) equals rho exactly: +w and -w average to 0.5.
  MaskParams sym = with_logits({0.7, -0.7}, 0.2, 0.5);
  for (double v : sparsity_grad(continuous_mask(sym), 0.5, sym)) EXPECT_NEAR(v, 0.0, 1e-16);
}

TEST(Sparsity, GradMatchesFiniteDifferences) {
  Rng rng(3);
  for (double rho : {0.1, 0.3, 0.5, 0.7}) {
    MaskParams mp = with_logits({}, 0.2, rho);
    for (int i = 0; i < 9; ++i) mp.logits.push_back(rng.uniform(-0.8, 0.8));
    const auto g = sparsity_grad(continuous_mask(mp), rho, mp);
    for (std::size_t i = 0; i < mp.size(); ++i) {
      const double h = 1e-5, w = mp.logits[i];
      mp.logits[i] = w + h;
      const double up = sparsity_loss(continuous_mask(mp), rho);
      mp.logits[i] = w - h;
      const double dn = sparsity_loss(continuous_mask(mp), rho);
      mp.logits[i] = w;
      const double fd = (up - dn) / (2 * h);
      EXPECT_LT(std::abs(g[i] - fd), 1e-6 * std::max(std::abs(fd), 1e-8)) << i;
    }
  }
}

TEST(UpperLogitStep, VanishingHypergradient) {
  MaskParams mp = with_logits({-0.3, 0.4});
  ParamSet grad;
  grad.add("a", Tensor({2}, {1, 2}));
  grad.add("b", Tensor({1}, {3}));
  ParamDelta zero(zeros_like(grad));
  EXPECT_EQ(upper_logit_step(mp, grad, zero, 10.0).logits, mp.logits);
}

TEST(UpperLogitStep, ScalarExample) {
  MaskParams mp = with_logits({0.0});
  const ParamDelta d(scalar_set(2.0));
  const MaskParams out = upper_logit_step(mp, scalar_set(1.0), d, 0.1);
  EXPECT_DOUBLE_EQ(out.logits[0], -0.25);
}

TEST(UpperLogitStep, ZeroStepIsIdentityAndCongruenceChecked) {
  MaskParams mp = with_logits({-2.5}, 0.2, 0.3, 1000.0);
  const ParamDelta d(scalar_set(2.0));
  EXPECT_EQ(upper_logit_step(mp, scalar_set(1.0), d, 0.0).logits, mp.logits);
  ParamSet other;
  other.add("t", Tensor::scalar(1.0));
  EXPECT_THROW(upper_logit_step(mp, other, d, 0.1), CongruenceError);
  MaskParams two = with_logits({0.0, 0.0});
  EXPECT_THROW(upper_logit_step(two, scalar_set(1.0), d, 0.1), CongruenceError);
}

TEST(RoundMask, ThresholdAtZero) {
  const BinaryMask b = round_mask(with_logits({-1, 0, 1}));
  EXPECT_EQ(b.bits, (std::vector<std::uint8_t>{0, 1, 1}));
  EXPECT_DOUBLE_EQ(b.achieved_ratio, 2.0 / 3.0);
  for (double T : {0.01, 0.2, 5.0}) {
    EXPECT_EQ(round_mask(with_logits({-1e-9, 0, 3}, T)).bits, (std::vector<std::uint8_t>{0, 1, 1}));
  }
  EXPECT_EQ(round_mask(with_logits({-3, -2, -1e-300})).achieved_ratio, 0.0);
}

TEST(RoundMask, AchievedRatioIsPopcountOverN) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    MaskParams mp = with_logits({});
    const int n = 1 + static_cast<int>(rng.below(60));
    for (int i = 0; i < n; ++i) mp.logits.push_back(rng.normal());
    const BinaryMask b = round_mask(mp);
    std::size_t ones = 0;
    for (auto v : b.bits) ones += v;
    EXPECT_EQ(b.achieved_ratio, static_cast<double>(ones) / n);
  }
}

TEST(InitLogits, RangeAndDeterminism) {
  const MaskParams a = init_logits(41, 0.2, 9);
  const MaskParams b = init_logits(41, 0.2, 9);
  EXPECT_EQ(a.logits, b.logits);
  EXPECT_NE(a.logits, init_logits(41, 0.2, 10).logits);
  for (double w : a.logits) {
    EXPECT_GE(w, -3.0);
    EXPECT_LT(w, -2.0);
  }
  for (double m : continuous_mask(a)) EXPECT_LT(m, 1e-4);
  EXPECT_EQ(round_mask(a).achieved_ratio, 0.0);
  EXPECT_THROW(init_logits(0, 0.2, 1), ConfigError);
}

TEST(SparsityOnly, ConvergesToTargetRatio) {
  for (double rho : {0.1, 0.3, 0.5, 0.7}) {
    MaskParams mp = init_logits(41, 0.2, 21);
    mp.target_ratio = rho;
    ParamSet zero;
    for (int i = 0; i < 41; ++i) zero.add("t" + std::to_string(i), Tensor::scalar(0.0));
    const ParamDelta d(zero);
    double gap = 1.0;
    for (int k = 0; k < 2000 && gap >= 0.02; ++k) {
      mp = upper_logit_step(mp, zero, d, 10.0);
      const auto m = continuous_mask(mp);
      double mean = 0;
      for (double v : m) mean += v;
      gap = std::abs(mean / m.size() - rho);
    }
    EXPECT_LT(gap, 0.02) << "rho=" << rho;
  }
}

TEST(MaskFile, RoundTripAndStrictness) {
  MaskFile f;
  f.tensor_names = {"a.weight", "a.bias", "b"};
  f.params = with_logits({-0.123456789012345678, 0.0, 2.5e-300}, 0.2, 0.3);
  f.mask = round_mask(f.params);
  const std::string text = mask_to_json(f);
  const MaskFile back = mask_from_json(text);
  EXPECT_EQ(back.tensor_names, f.tensor_names);
  EXPECT_EQ(back.params.logits, f.params.logits);
  EXPECT_EQ(back.mask.bits, f.mask.bits);
  EXPECT_EQ(mask_to_json(back), text);
  EXPECT_EQ(text.find("\"version\""), 4u);

  auto j = nlohmann::json::parse(text);
  j["extra"] = 1;
  EXPECT_THROW(mask_from_json(j.dump()), FormatError);
  j = nlohmann::json::parse(text);
  j["version"] = 2;
  EXPECT_THROW(mask_from_json(j.dump()), VersionError);
  j = nlohmann::json::parse(text);
  j["bits"] = {0, 1};
  EXPECT_THROW(mask_from_json(j.dump()), FormatError);
  j = nlohmann::json::parse(text);
  j.erase("logits");
  EXPECT_THROW(mask_from_json(j.dump()), FormatError);
  EXPECT_THROW(mask_from_json("{"), FormatError);

  const auto path = std::filesystem::temp_directory_path() / ("fzg_mask_" + std::to_string(::getpid()) + ".json");
  save_mask(f, path);
  EXPECT_EQ(read_file(path), text);
  EXPECT_EQ(load_mask(path).params.logits, f.params.logits);
}
