#include "fzg/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "fzg/error.hpp"
#include "fzg/kernels.hpp"

namespace fzg {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double silu(double x) { return x * sigmoid(x); }

double silu_grad(double x) {
  const double s = sigmoid(x);
  return s * (1.0 + x * (1.0 - s));
}

// Fixed tensor positions within a denoiser ParamSet.
struct Layout {
  static constexpr std::size_t kTime1W = 0, kTime1B = 1, kTime2W = 2, kTime2B = 3;
  static constexpr std::size_t kClass = 4, kInW = 5, kInB = 6, kFirstBlock = 7;
  std::size_t blocks;
  std::size_t lin1w(std::size_t k) const { return kFirstBlock + 4 * k; }
  std::size_t lin1b(std::size_t k) const { return kFirstBlock + 4 * k + 1; }
  std::size_t lin2w(std::size_t k) const { return kFirstBlock + 4 * k + 2; }
  std::size_t lin2b(std::size_t k) const { return kFirstBlock + 4 * k + 3; }
  std::size_t head_w() const { return kFirstBlock + 4 * blocks; }
  std::size_t head_b() const { return kFirstBlock + 4 * blocks + 1; }
};

struct NamedShape {
  std::string name;
  std::vector<std::size_t> shape;
};

std::vector<NamedShape> denoiser_shapes(const DenoiserSpec& s) {
  const std::size_t E = s.embed_dim, H = s.hidden_dim;
  std::vector<NamedShape> out = {
      {"time_embed.lin1.weight", {E, E}}, {"time_embed.lin1.bias", {E}},
      {"time_embed.lin2.weight", {E, E}}, {"time_embed.lin2.bias", {E}},
      {"class_embed.weight", {s.num_classes, E}},
      {"input.weight", {H, s.input_dim()}}, {"input.bias", {H}},
  };
  for (std::size_t k = 0; k < s.num_blocks; ++k) {
    const std::string p = "block" + std::to_string(k);
    out.push_back({p + ".lin1.weight", {H, H}});
    out.push_back({p + ".lin1.bias", {H}});
    out.push_back({p + ".lin2.weight", {H, H}});
    out.push_back({p + ".lin2.bias", {H}});
  }
  out.push_back({"head.weight", {s.data_dim, H}});
  out.push_back({"head.bias", {s.data_dim}});
  return out;
}

void sinusoidal(int t, std::span<double> out) {
  const std::size_t half = out.size() / 2;
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t k = 0; k < half; ++k) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
    out[k] = std::sin(t * freq);
    out[half + k] = std::cos(t * freq);
  }
}

// Activations of one forward pass, kept for the backward pass.
struct Trace {
  std::vector<double> sin_t, u_t, a_t, z, out;
  std::vector<std::vector<double>> h, u, a;  // h has num_blocks + 1 entries

  explicit Trace(const DenoiserSpec& s)
      : sin_t(s.embed_dim), u_t(s.embed_dim), a_t(s.embed_dim), z(s.input_dim()),
        out(s.data_dim), h(s.num_blocks + 1, std::vector<double>(s.hidden_dim)),
        u(s.num_blocks, std::vector<double>(s.hidden_dim)),
        a(s.num_blocks, std::vector<double>(s.hidden_dim)) {}
};

void forward_one(const ParamSet& p, const DenoiserSpec& s, const Layout& L,
                 std::span<const double> x, int t, int label, Trace& tr) {
  const auto& k = kernels::active();
  const std::size_t D = s.data_dim, E = s.embed_dim, H = s.hidden_dim;

  sinusoidal(t, tr.sin_t);
  k.matvec(tr.u_t.data(), p[L.kTime1W].data(), tr.sin_t.data(), p[L.kTime1B].data(), E, E);
  for (std::size_t i = 0; i < E; ++i) tr.a_t[i] = silu(tr.u_t[i]);

  std::copy(x.begin(), x.end(), tr.z.begin());
  k.matvec(tr.z.data() + D, p[L.kTime2W].data(), tr.a_t.data(), p[L.kTime2B].data(), E, E);
  const double* emb = p[L.kClass].data() + static_cast<std::size_t>(label) * E;
  std::copy(emb, emb + E, tr.z.begin() + static_cast<std::ptrdiff_t>(D + E));

  k.matvec(tr.h[0].data(), p[L.kInW].data(), tr.z.data(), p[L.kInB].data(), H, s.input_dim());
  for (std::size_t b = 0; b < s.num_blocks; ++b) {
    k.matvec(tr.u[b].data(), p[L.lin1w(b)].data(), tr.h[b].data(), p[L.lin1b(b)].data(), H, H);
    for (std::size_t i = 0; i < H; ++i) tr.a[b][i] = silu(tr.u[b][i]);
    auto& next = tr.h[b + 1];
    k.matvec(next.data(), p[L.lin2w(b)].data(), tr.a[b].data(), p[L.lin2b(b)].data(), H, H);
    for (std::size_t i = 0; i < H; ++i) next[i] += tr.h[b][i];
  }
  k.matvec(tr.out.data(), p[L.head_w()].data(), tr.h[s.num_blocks].data(),
           p[L.head_b()].data(), D, H);
}

// Accumulates d(loss)/d(params) into g given d(loss)/d(out) for one sample.
void backward_one(const ParamSet& p, const DenoiserSpec& s, const Layout& L, const Trace& tr,
                  int label, std::span<const double> dout, ParamSet& g,
                  std::vector<double>& dh, std::vector<double>& du, std::vector<double>& dz,
                  std::vector<double>& dtemb) {
  const auto& k = kernels::active();
  const std::size_t D = s.data_dim, E = s.embed_dim, H = s.hidden_dim;

  k.outer_acc(g[L.head_w()].data(), dout.data(), tr.h[s.num_blocks].data(), D, H);
  k.axpy(g[L.head_b()].data(), 1.0, dout.data(), D);
  std::fill(dh.begin(), dh.end(), 0.0);
  k.matvec_t_acc(dh.data(), p[L.head_w()].data(), dout.data(), D, H);

  for (std::size_t b = s.num_blocks; b-- > 0;) {
    // Residual: dh passes through unchanged and also feeds lin2.
    k.outer_acc(g[L.lin2w(b)].data(), dh.data(), tr.a[b].data(), H, H);
    k.axpy(g[L.lin2b(b)].data(), 1.0, dh.data(), H);
    std::fill(du.begin(), du.end(), 0.0);
    k.matvec_t_acc(du.data(), p[L.lin2w(b)].data(), dh.data(), H, H);
    for (std::size_t i = 0; i < H; ++i) du[i] *= silu_grad(tr.u[b][i]);
    k.outer_acc(g[L.lin1w(b)].data(), du.data(), tr.h[b].data(), H, H);
    k.axpy(g[L.lin1b(b)].data(), 1.0, du.data(), H);
    k.matvec_t_acc(dh.data(), p[L.lin1w(b)].data(), du.data(), H, H);
  }

  k.outer_acc(g[L.kInW].data(), dh.data(), tr.z.data(), H, s.input_dim());
  k.axpy(g[L.kInB].data(), 1.0, dh.data(), H);
  std::fill(dz.begin(), dz.end(), 0.0);
  k.matvec_t_acc(dz.data(), p[L.kInW].data(), dh.data(), H, s.input_dim());

  k.axpy(g[L.kClass].data() + static_cast<std::size_t>(label) * E, 1.0, dz.data() + D + E, E);

  const double* d_temb = dz.data() + D;
  k.outer_acc(g[L.kTime2W].data(), d_temb, tr.a_t.data(), E, E);
  k.axpy(g[L.kTime2B].data(), 1.0, d_temb, E);
  std::fill(dtemb.begin(), dtemb.end(), 0.0);
  k.matvec_t_acc(dtemb.data(), p[L.kTime2W].data(), d_temb, E, E);
  for (std::size_t i = 0; i < E; ++i) dtemb[i] *= silu_grad(tr.u_t[i]);
  k.outer_acc(g[L.kTime1W].data(), dtemb.data(), tr.sin_t.data(), E, E);
  k.axpy(g[L.kTime1B].data(), 1.0, dtemb.data(), E);
}

void check_inputs(const Matrix& x, std::span<const int> t, std::span<const int> labels,
                  const DenoiserSpec& spec, int num_steps) {
  if (x.cols != spec.data_dim) {
    throw DimensionError("denoiser input has " + std::to_string(x.cols) + " columns, expected " +
                         std::to_string(spec.data_dim));
  }
  if (t.size() != x.rows || labels.size() != x.rows) {
    throw DimensionError("denoiser inputs disagree on batch size");
  }
  for (int lab : labels) {
    if (lab < 0 || static_cast<std::size_t>(lab) >= spec.num_classes) {
      throw RangeError("class label " + std::to_string(lab) + " out of range [0, " +
                       std::to_string(spec.num_classes) + ")");
    }
  }
  for (int step : t) {
    if (step < 1 || (num_steps > 0 && step > num_steps)) {
      throw RangeError("diffusion step " + std::to_string(step) + " out of range");
    }
  }
}

void check_batch(const Batch& b, const DenoiserSpec& spec) {
  if (b.x0.rows != b.size() || b.eps.rows != b.size() || b.t.size() != b.size() ||
      b.eps.cols != b.x0.cols || b.x0.cols != spec.data_dim) {
    throw DimensionError("inconsistent batch shapes");
  }
  if (b.size() == 0) throw DimensionError("empty batch");
}

}  // namespace

NoiseSchedule make_schedule(int num_steps, double beta_start, double beta_end) {
  if (num_steps < 1) throw ConfigError("num_steps must be >= 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ConfigError("schedule requires 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.num_steps = num_steps;
  s.beta.resize(num_steps);
  s.alpha.resize(num_steps);
  s.alpha_bar.resize(num_steps);
  double prod = 1.0;
  for (int i = 0; i < num_steps; ++i) {
    const double frac = num_steps == 1 ? 0.0 : static_cast<double>(i) / (num_steps - 1);
    s.beta[i] = i == num_steps - 1 && num_steps > 1 ? beta_end
                                                    : beta_start + (beta_end - beta_start) * frac;
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  return s;
}

void validate(const DenoiserSpec& s) {
  if (s.data_dim == 0 || s.hidden_dim == 0 || s.num_blocks == 0 || s.num_classes == 0 ||
      s.embed_dim == 0) {
    throw ConfigError("denoiser dimensions must be positive");
  }
}

ParamSet init_denoiser(const DenoiserSpec& spec, std::uint64_t seed) {
  validate(spec);
  Rng rng = Rng::named(seed, "denoiser-init");
  ParamSet p;
  for (auto& [name, shape] : denoiser_shapes(spec)) {
    Tensor t(shape);
    if (name == "class_embed.weight") {
      for (double& v : t.values()) v = rng.normal();
    } else {
      // Bias shares the fan-in of its weight, which is the last weight dim.
      const std::size_t fan_in =
          shape.size() == 2 ? shape[1] : p[p.size() - 1].shape().back();
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      for (double& v : t.values()) v = rng.uniform(-bound, bound);
    }
    p.add(name, std::move(t));
  }
  return p;
}

void check_params(const ParamSet& params, const DenoiserSpec& spec) {
  const auto expected = denoiser_shapes(spec);
  const std::size_t n = std::min(expected.size(), params.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (params.name(i) != expected[i].name || params[i].shape() != expected[i].shape) {
      throw CongruenceError("denoiser parameters: tensor " + std::to_string(i) + " is '" +
                            params.name(i) + "' " + shape_string(params[i].shape()) +
                            ", expected '" + expected[i].name + "' " +
                            shape_string(expected[i].shape));
    }
  }
  if (params.size() != expected.size()) {
    throw CongruenceError("denoiser parameters: " + std::to_string(params.size()) +
                          " tensors, expected " + std::to_string(expected.size()));
  }
}

void validate(const ClassSpec& c, std::size_t data_dim) {
  if (c.components.empty()) throw ConfigError("class has no mixture components");
  double total = 0.0;
  for (const auto& comp : c.components) {
    if (comp.mean.size() != data_dim) throw ConfigError("component mean has wrong dimension");
    if (!(comp.std > 0.0)) throw ConfigError("component std must be positive");
    if (!(comp.weight >= 0.0)) throw ConfigError("component weight must be nonnegative");
    total += comp.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("mixture weights must sum to 1");
}

std::vector<ClassSpec> circle_layout(std::size_t num_classes, double radius, double std,
                                     double phase_rad) {
  std::vector<ClassSpec> out;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double angle =
        phase_rad + 2.0 * std::numbers::pi * static_cast<double>(c) / num_classes;
    out.push_back({{{{radius * std::cos(angle), radius * std::sin(angle)}, std, 1.0}}});
  }
  return out;
}

Dataset gen_class_data(std::span<const ClassSpec> classes, std::size_t n_per_class,
                       std::uint64_t seed) {
  if (n_per_class == 0) throw ConfigError("n_per_class must be >= 1");
  if (classes.empty()) throw ConfigError("no classes to generate");
  const std::size_t dim = classes[0].components.at(0).mean.size();
  for (const auto& c : classes) validate(c, dim);
  Rng rng = Rng::named(seed, "data");
  Dataset d;
  d.x = Matrix(classes.size() * n_per_class, dim);
  d.labels.reserve(classes.size() * n_per_class);
  std::size_t row = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    const auto& comps = classes[c].components;
    for (std::size_t n = 0; n < n_per_class; ++n, ++row) {
      std::size_t pick = 0;
      if (comps.size() > 1) {
        double u = rng.uniform();
        while (pick + 1 < comps.size() && u >= comps[pick].weight) u -= comps[pick++].weight;
      }
      const auto& comp = comps[pick];
      for (std::size_t j = 0; j < dim; ++j) d.x(row, j) = comp.mean[j] + comp.std * rng.normal();
      d.labels.push_back(static_cast<int>(c));
    }
  }
  return d;
}

Dataset select_classes(const Dataset& d, std::span<const int> keep) {
  Dataset out;
  out.x.cols = d.x.cols;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (std::find(keep.begin(), keep.end(), d.labels[i]) == keep.end()) continue;
    auto r = d.x.row(i);
    out.x.data.insert(out.x.data.end(), r.begin(), r.end());
    out.labels.push_back(d.labels[i]);
  }
  out.x.rows = out.labels.size();
  return out;
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.size() && b.size() && a.x.cols != b.x.cols) throw DimensionError("concat: column mismatch");
  Dataset out = a;
  out.x.cols = a.size() ? a.x.cols : b.x.cols;
  out.x.data.insert(out.x.data.end(), b.x.data.begin(), b.x.data.end());
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  out.x.rows = out.labels.size();
  return out;
}

Batch draw_batch(const Dataset& data, std::size_t batch_size, const NoiseSchedule& schedule,
                 Rng& rng) {
  if (data.size() == 0) throw ConfigError("cannot draw a batch from an empty dataset");
  Batch b;
  b.x0 = Matrix(batch_size, data.x.cols);
  b.eps = Matrix(batch_size, data.x.cols);
  b.labels.resize(batch_size);
  b.t.resize(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const auto idx = static_cast<std::size_t>(rng.below(data.size()));
    auto src = data.x.row(idx);
    std::copy(src.begin(), src.end(), b.x0.row(i).begin());
    b.labels[i] = data.labels[idx];
    b.t[i] = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.num_steps)));
    for (double& e : b.eps.row(i)) e = rng.normal();
  }
  return b;
}

Matrix forward_noise(const Matrix& x0, const Matrix& eps, std::span<const int> t,
                     const NoiseSchedule& schedule) {
  if (x0.rows != eps.rows || x0.cols != eps.cols || t.size() != x0.rows) {
    throw DimensionError("forward_noise: inconsistent shapes");
  }
  Matrix out(x0.rows, x0.cols);
  for (std::size_t i = 0; i < x0.rows; ++i) {
    if (t[i] < 1 || t[i] > schedule.num_steps) {
      throw RangeError("forward_noise: step " + std::to_string(t[i]) + " out of range");
    }
    const double ab = schedule.alpha_bar_at(t[i]);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    for (std::size_t j = 0; j < x0.cols; ++j) out(i, j) = a * x0(i, j) + b * eps(i, j);
  }
  return out;
}

Matrix denoiser_forward(const ParamSet& params, const Matrix& x_t, std::span<const int> t,
                        std::span<const int> labels, const DenoiserSpec& spec) {
  check_params(params, spec);
  check_inputs(x_t, t, labels, spec, 0);
  const Layout L{spec.num_blocks};
  Trace tr(spec);
  Matrix out(x_t.rows, spec.data_dim);
  for (std::size_t i = 0; i < x_t.rows; ++i) {
    forward_one(params, spec, L, x_t.row(i), t[i], labels[i], tr);
    std::copy(tr.out.begin(), tr.out.end(), out.row(i).begin());
  }
  return out;
}

double diffusion_loss(const ParamSet& params, const Batch& batch, const NoiseSchedule& schedule,
                      const DenoiserSpec& spec) {
  check_batch(batch, spec);
  const Matrix xt = forward_noise(batch.x0, batch.eps, batch.t, schedule);
  const Matrix eps_hat = denoiser_forward(params, xt, batch.t, batch.labels, spec);
  const auto& k = kernels::active();
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    total += k.sq_dist(batch.eps.row(i).data(), eps_hat.row(i).data(), spec.data_dim);
  }
  return total / static_cast<double>(batch.size());
}

LossGrad diffusion_grad(const ParamSet& params, const Batch& batch,
                        const NoiseSchedule& schedule, const DenoiserSpec& spec) {
  check_batch(batch, spec);
  check_params(params, spec);
  check_inputs(batch.x0, batch.t, batch.labels, spec, schedule.num_steps);
  const Matrix xt = forward_noise(batch.x0, batch.eps, batch.t, schedule);
  const Layout L{spec.num_blocks};
  const auto& k = kernels::active();
  Trace tr(spec);
  LossGrad out{0.0, zeros_like(params)};
  std::vector<double> dout(spec.data_dim), dh(spec.hidden_dim), du(spec.hidden_dim),
      dz(spec.input_dim()), dtemb(spec.embed_dim);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    forward_one(params, spec, L, xt.row(i), batch.t[i], batch.labels[i], tr);
    const auto eps = batch.eps.row(i);
    out.loss += k.sq_dist(eps.data(), tr.out.data(), spec.data_dim);
    for (std::size_t j = 0; j < spec.data_dim; ++j) dout[j] = 2.0 * inv_n * (tr.out[j] - eps[j]);
    backward_one(params, spec, L, tr, batch.labels[i], dout, out.grad, dh, du, dz, dtemb);
  }
  out.loss *= inv_n;
  return out;
}

Matrix sample(const ParamSet& params, std::span<const int> labels,
              const NoiseSchedule& schedule, const DenoiserSpec& spec, std::uint64_t seed) {
  check_params(params, spec);
  const std::size_t n = labels.size();
  Matrix x(n, spec.data_dim);
  {
    std::vector<int> dummy_t(n, 1);
    check_inputs(x, dummy_t, labels, spec, 0);
  }
  Rng rng = Rng::named(seed, "sample");
  for (double& v : x.data) v = rng.normal();

  const Layout L{spec.num_blocks};
  Trace tr(spec);
  for (int t = schedule.num_steps; t >= 1; --t) {
    const std::size_t ti = static_cast<std::size_t>(t - 1);
    const double beta = schedule.beta[ti];
    const double ab = schedule.alpha_bar[ti];
    const double coef = beta / std::sqrt(1.0 - ab);
    const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha[ti]);
    // Posterior variance of q(x_{t-1} | x_t, x_0).
    const double sigma =
        t > 1 ? std::sqrt(beta * (1.0 - schedule.alpha_bar[ti - 1]) / (1.0 - ab)) : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      auto row = x.row(i);
      forward_one(params, spec, L, row, t, labels[i], tr);
      for (std::size_t j = 0; j < spec.data_dim; ++j) {
        row[j] = inv_sqrt_alpha * (row[j] - coef * tr.out[j]);
      }
    }
    if (t > 1) {
      for (double& v : x.data) v += sigma * rng.normal();
    }
  }
  return x;
}

Matrix sample_class(const ParamSet& params, int label, std::size_t n,
                    const NoiseSchedule& schedule, const DenoiserSpec& spec, std::uint64_t seed) {
  if (n == 0) throw ConfigError("sample count must be >= 1");
  std::vector<int> labels(n, label);
  return sample(params, labels, schedule, spec, seed);
}

std::string to_csv(const Matrix& x, std::span<const int> labels) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t j = 0; j < x.cols; ++j) os << (j ? "," : "") << "x0_" << j;
  if (!labels.empty()) os << ",label";
  os << '\n';
  for (std::size_t i = 0; i < x.rows; ++i) {
    for (std::size_t j = 0; j < x.cols; ++j) os << (j ? "," : "") << x(i, j);
    if (!labels.empty()) os << ',' << labels[i];
    os << '\n';
  }
  return os.str();
}

}  // namespace fzg
