#pragma once
// Central finite-difference checks for every analytic gradient in the library.
#include <cstdint>
#include <string>
#include <vector>

#include "fzg/diffusion.hpp"

namespace fzg {

struct GradCheckConfig {
  DenoiserSpec spec{2, 8, 2, 4, 16};
  int num_steps = 20;
  std::size_t batch_size = 6;
  double h = 1e-5;
  double tolerance = 1e-4;
  // Elementwise relative error is |a - b| / max(|a|, |b|, floor).
  double floor = 1e-6;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  std::string suite;  // diffusion_grad, sparsity_grad, upper_logit_grad
  std::string worst;  // tensor or index with the largest error
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  bool pass = false;
};

std::vector<GradCheckResult> run_gradcheck(const GradCheckConfig& cfg);

}  // namespace fzg
