#include <gtest/gtest.h>

#include <cstring>

#include "fzg/error.hpp"
#include "fzg/param_set.hpp"
#include "fzg/rng.hpp"

using namespace fzg;

namespace {

ParamSet two_tensors(double a, double b) {
  ParamSet p;
  p.add("layer.weight", Tensor({2, 3}, {a, a + 1, a + 2, a + 3, a + 4, a + 5}));
  p.add("layer.bias", Tensor({4}, {b, b - 1, b * 2, b / 2}));
  return p;
}

ParamSet random_like(const ParamSet& shape, Rng& rng) {
  ParamSet p = zeros_like(shape);
  for (std::size_t i = 0; i < p.size(); ++i) {
    for (auto& v : p[i].values()) v = rng.normal();
  }
  return p;
}

double naive_dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  const std::size_t rows = a.rank() == 2 ? a.shape()[0] : 1;
  const std::size_t cols = a.size() / rows;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) s += a[r * cols + c] * b[r * cols + c];
  }
  return s;
}

}  // namespace

TEST(Tensor, ShapeAndDataLengthMustAgree) {
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  EXPECT_THROW(Tensor({0, 3}), DimensionError);
  Tensor s = Tensor::scalar(2.5);
  EXPECT_EQ(s.size(), 1u);
  EXPECT_EQ(s.rank(), 0u);
}

TEST(ParamSet, RejectsDuplicateAndEmptyNames) {
  ParamSet p;
  p.add("a", Tensor::scalar(1));
  EXPECT_THROW(p.add("a", Tensor::scalar(2)), ConfigError);
  EXPECT_THROW(p.add("", Tensor::scalar(2)), ConfigError);
  EXPECT_EQ(p.index_of("a"), 0u);
  EXPECT_THROW(p.index_of("b"), RangeError);
}

TEST(ParamSet, CongruenceNamesFirstMismatch) {
  ParamSet a = two_tensors(1, 2);
  ParamSet b;
  b.add("layer.weight", Tensor({2, 3}));
  b.add("layer.bias", Tensor({5}));
  try {
    a.require_congruent(b, "test");
    FAIL() << "expected CongruenceError";
  } catch (const CongruenceError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.bias"), std::string::npos);
  }
  ParamSet c;
  c.add("layer.bias", Tensor({4}));
  c.add("layer.weight", Tensor({2, 3}));
  EXPECT_FALSE(a.congruent(c));
}

TEST(Blend, IdentityCasesAreBitExact) {
  ParamSet pre = two_tensors(0.1, 0.7);
  ParamSet ft = two_tensors(-3.3, 1e-300);
  std::vector<double> ones(2, 1.0), zeros(2, 0.0);
  EXPECT_TRUE(blend(pre, ft, ones).bit_equal(pre));
  EXPECT_TRUE(blend(pre, ft, zeros).bit_equal(ft));
  std::vector<double> mixed{1.0, 0.0};
  ParamSet out = blend(pre, ft, mixed);
  EXPECT_TRUE(out[0].bit_equal(pre[0]));
  EXPECT_TRUE(out[1].bit_equal(ft[1]));
}

TEST(Blend, ScalarHalfway) {
  ParamSet pre, ft;
  pre.add("s", Tensor::scalar(2.0));
  ft.add("s", Tensor::scalar(4.0));
  std::vector<double> m{0.5};
  EXPECT_DOUBLE_EQ(blend(pre, ft, m)[0][0], 3.0);
}

TEST(Blend, Errors) {
  ParamSet pre = two_tensors(1, 2);
  ParamSet other;
  other.add("x", Tensor({2, 3}));
  other.add("layer.bias", Tensor({4}));
  std::vector<double> m{0.5, 0.5};
  EXPECT_THROW(blend(pre, other, m), CongruenceError);
  std::vector<double> short_m{0.5};
  EXPECT_THROW(blend(pre, pre, short_m), DimensionError);
}

TEST(Blend, AffineSymmetry) {
  Rng rng(11);
  ParamSet shape = two_tensors(0, 0);
  for (int trial = 0; trial < 20; ++trial) {
    ParamSet a = random_like(shape, rng);
    ParamSet b = random_like(shape, rng);
    std::vector<double> m{rng.uniform(), rng.uniform()};
    ParamSet x = blend(a, b, m);
    ParamSet y = blend(b, a, m);
    for (std::size_t i = 0; i < x.size(); ++i) {
      for (std::size_t j = 0; j < x[i].size(); ++j) {
        EXPECT_NEAR(x[i][j] + y[i][j], a[i][j] + b[i][j], 1e-14);
      }
    }
  }
}

TEST(TensorDot, KnownValueAndZero) {
  ParamSet a, b, z;
  a.add("t", Tensor({2}, {1, 2}));
  b.add("t", Tensor({2}, {3, 4}));
  z.add("t", Tensor({2}, {0, 0}));
  EXPECT_DOUBLE_EQ(tensor_dot(a, b, 0), 11.0);
  EXPECT_DOUBLE_EQ(tensor_dot(a, z, 0), 0.0);
  EXPECT_THROW(tensor_dot(a, b, 1), RangeError);
}

TEST(TensorDot, SymmetricBilinearAgainstNaiveLoop) {
  Rng rng(5);
  ParamSet shape;
  shape.add("w", Tensor({13, 7}));
  shape.add("b", Tensor({29}));
  for (int trial = 0; trial < 25; ++trial) {
    ParamSet a = random_like(shape, rng);
    ParamSet b = random_like(shape, rng);
    ParamSet c = random_like(shape, rng);
    const double alpha = rng.normal();
    for (std::size_t i = 0; i < shape.size(); ++i) {
      const double ab = tensor_dot(a, b, i);
      EXPECT_NEAR(ab, naive_dot(a[i], b[i]), 1e-12);
      EXPECT_NEAR(ab, tensor_dot(b, a, i), 1e-12);
      EXPECT_GE(tensor_dot(a, a, i), 0.0);
      ParamSet comb = a;
      axpy_all(comb, alpha, c);
      EXPECT_NEAR(tensor_dot(comb, b, i), ab + alpha * tensor_dot(c, b, i), 1e-11);
    }
  }
}

TEST(AxpyTensor, KnownValue) {
  ParamSet p;
  p.add("s", Tensor::scalar(1.0));
  p.add("u", Tensor::scalar(9.0));
  axpy_tensor(p, 0, 0.1, Tensor::scalar(0.5));
  EXPECT_DOUBLE_EQ(p[0][0], 1.05);
  EXPECT_EQ(p[1][0], 9.0);
}

TEST(AxpyTensor, ZeroCoeffAndExactInverse) {
  ParamSet p = two_tensors(0.25, 0.5);
  const ParamSet orig = p;
  Tensor g({4}, {0.5, -0.25, 0.125, 2.0});
  axpy_tensor(p, 1, 0.0, g);
  EXPECT_TRUE(p.bit_equal(orig));
  axpy_tensor(p, 1, 0.375, g);
  axpy_tensor(p, 1, -0.375, g);
  EXPECT_TRUE(p.bit_equal(orig));
  EXPECT_THROW(axpy_tensor(p, 1, 1.0, Tensor({3})), DimensionError);
  EXPECT_THROW(axpy_tensor(p, 2, 1.0, g), RangeError);
}

TEST(ParamCounts, Examples) {
  EXPECT_EQ(param_counts(ParamSet{}).total, 0u);
  const ParamCounts c = param_counts(two_tensors(0, 0));
  ASSERT_EQ(c.per_tensor.size(), 2u);
  EXPECT_EQ(c.per_tensor[0], 6u);
  EXPECT_EQ(c.per_tensor[1], 4u);
  EXPECT_EQ(c.total, 10u);
}

TEST(ParamSet, DifferenceIsPreMinusFt) {
  ParamSet a = two_tensors(5, 1);
  ParamSet b = two_tensors(2, 3);
  ParamDelta d = difference(a, b);
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (std::size_t j = 0; j < d[i].size(); ++j) EXPECT_EQ(d[i][j], a[i][j] - b[i][j]);
  }
  // largest gap is the third bias entry, 2 * 1 vs 2 * 3
  EXPECT_DOUBLE_EQ(max_abs_diff(a, b), 4.0);
}
