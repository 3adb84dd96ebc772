#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fzg/param_set.hpp"

namespace fzg {

// Per-tensor freezing logits. The relaxed mask is m_i = sigmoid(w_i / T);
// index i follows ParamSet order.
struct MaskParams {
  std::vector<double> logits;
  double temperature = 0.2;
  double target_ratio = 0.3;
  double sparsity_weight = 1000.0;

  std::size_t size() const { return logits.size(); }
};

void validate(const MaskParams& mp);

// Bit 1 = tensor frozen.
struct BinaryMask {
  std::vector<std::uint8_t> bits;
  double achieved_ratio = 0.0;

  static BinaryMask from_bits(std::vector<std::uint8_t> bits);
  static BinaryMask zeros(std::size_t n) { return from_bits(std::vector<std::uint8_t>(n, 0)); }
  static BinaryMask ones(std::size_t n) { return from_bits(std::vector<std::uint8_t>(n, 1)); }

  std::size_t size() const { return bits.size(); }
  std::size_t count() const;
  bool frozen(std::size_t i) const { return bits.at(i) != 0; }
  std::vector<double> as_values() const;
};

// Overflow-safe logistic function.
double sigmoid(double x);

std::vector<double> continuous_mask(const MaskParams& mp);

// (mean(m) - rho)^2
double sparsity_loss(std::span<const double> m, double rho);

// d sparsity_loss(sigmoid(w / T)) / d w_i, evaluated at mp.logits.
std::vector<double> sparsity_grad(std::span<const double> m, double rho, const MaskParams& mp);

// First-order gradient of the upper objective with respect to each logit:
//   <dL/dtheta(m)_i, theta_d_i> * (1/T) s_i (1 - s_i) + lambda_s * sparsity_grad_i
// where s_i = sigmoid(w_i / T) and theta_d = theta_pre - theta_ft.
std::vector<double> logit_gradient(const MaskParams& mp, const ParamSet& upper_grad,
                                   const ParamDelta& theta_d);

// w <- w - eta1 * logit_gradient(...). eta1 = 0 is the identity.
MaskParams upper_logit_step(const MaskParams& mp, const ParamSet& upper_grad,
                            const ParamDelta& theta_d, double eta1);

// bit_i = 1 iff w_i >= 0; independent of temperature.
BinaryMask round_mask(const MaskParams& mp);

// w_i ~ Uniform(-3, -2), so every relaxed entry starts below 5e-5 at T = 0.2.
MaskParams init_logits(std::size_t n, double temperature, std::uint64_t seed);

struct MaskFile {
  std::vector<std::string> tensor_names;
  MaskParams params;
  BinaryMask mask;
};

std::string mask_to_json(const MaskFile& f);
// Throws FormatError on schema violations, VersionError on unknown versions.
MaskFile mask_from_json(std::string_view text);
void save_mask(const MaskFile& f, const std::filesystem::path& path);
MaskFile load_mask(const std::filesystem::path& path);

}  // namespace fzg
