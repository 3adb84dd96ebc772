#pragma once

// Class-conditional denoising diffusion model on low-dimensional points.
//
// Denoiser architecture (all tensors named, in this order):
//   time_embed.lin1.{weight,bias}  sinusoidal(t) -> E -> SiLU
//   time_embed.lin2.{weight,bias}  E -> E
//   class_embed.weight             [num_classes, E] lookup table
//   input.{weight,bias}            concat[x_t, t_emb, class_emb] -> H
//   block{k}.lin1.{weight,bias}    H -> H, SiLU
//   block{k}.lin2.{weight,bias}    H -> H, added to the residual stream
//   head.{weight,bias}             H -> data_dim
// giving 9 + 4 * num_blocks tensors.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fzg/matrix.hpp"
#include "fzg/param_set.hpp"
#include "fzg/rng.hpp"

namespace fzg {

struct NoiseSchedule {
  int num_steps = 0;
  std::vector<double> beta;       // beta[t - 1] for t in [1, num_steps]
  std::vector<double> alpha;      // 1 - beta
  std::vector<double> alpha_bar;  // running product of alpha

  double alpha_bar_at(int t) const { return alpha_bar.at(static_cast<std::size_t>(t - 1)); }
};

// Linear beta schedule, endpoints inclusive.
NoiseSchedule make_schedule(int num_steps, double beta_start, double beta_end);

struct DenoiserSpec {
  std::size_t data_dim = 2;
  std::size_t hidden_dim = 64;
  std::size_t num_blocks = 8;
  std::size_t num_classes = 4;
  std::size_t embed_dim = 16;

  std::size_t input_dim() const { return data_dim + 2 * embed_dim; }
  std::size_t tensor_count() const { return 9 + 4 * num_blocks; }
};

void validate(const DenoiserSpec& spec);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for linear layers, N(0, 1) for the
// class embedding table.
ParamSet init_denoiser(const DenoiserSpec& spec, std::uint64_t seed);

// Throws CongruenceError if `params` was not instantiated from `spec`.
void check_params(const ParamSet& params, const DenoiserSpec& spec);

struct Batch {
  Matrix x0;
  std::vector<int> labels;
  std::vector<int> t;  // in [1, num_steps]
  Matrix eps;

  std::size_t size() const { return labels.size(); }
};

struct Dataset {
  Matrix x;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

struct MixtureComponent {
  std::vector<double> mean;
  double std = 1.0;
  double weight = 1.0;
};

struct ClassSpec {
  std::vector<MixtureComponent> components;
};

void validate(const ClassSpec& c, std::size_t data_dim);

// Four single-Gaussian classes evenly spaced on a circle.
std::vector<ClassSpec> circle_layout(std::size_t num_classes, double radius, double std,
                                     double phase_rad = 0.0);

// n_per_class draws per class, class-major order, from Rng::named(seed, "data").
Dataset gen_class_data(std::span<const ClassSpec> classes, std::size_t n_per_class,
                       std::uint64_t seed);

// Rows whose label is in `keep`, original order preserved.
Dataset select_classes(const Dataset& d, std::span<const int> keep);
Dataset concat(const Dataset& a, const Dataset& b);

// Uniform draws with replacement; t uniform on [1, T]; eps standard normal.
Batch draw_batch(const Dataset& data, std::size_t batch_size, const NoiseSchedule& schedule,
                 Rng& rng);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, per row.
Matrix forward_noise(const Matrix& x0, const Matrix& eps, std::span<const int> t,
                     const NoiseSchedule& schedule);

Matrix denoiser_forward(const ParamSet& params, const Matrix& x_t, std::span<const int> t,
                        std::span<const int> labels, const DenoiserSpec& spec);

// Mean over the batch of ||eps - eps_hat||^2.
double diffusion_loss(const ParamSet& params, const Batch& batch, const NoiseSchedule& schedule,
                      const DenoiserSpec& spec);

struct LossGrad {
  double loss = 0.0;
  ParamSet grad;
};

// Reverse-mode gradient of diffusion_loss with respect to every tensor.
LossGrad diffusion_grad(const ParamSet& params, const Batch& batch,
                        const NoiseSchedule& schedule, const DenoiserSpec& spec);

// Ancestral DDPM sampling from x_T ~ N(0, I), one row per label.
Matrix sample(const ParamSet& params, std::span<const int> labels,
              const NoiseSchedule& schedule, const DenoiserSpec& spec, std::uint64_t seed);

Matrix sample_class(const ParamSet& params, int label, std::size_t n,
                    const NoiseSchedule& schedule, const DenoiserSpec& spec, std::uint64_t seed);

// CSV with header x0_0,...,x0_{d-1},label (labels omitted when empty).
std::string to_csv(const Matrix& x, std::span<const int> labels = {});

}  // namespace fzg
