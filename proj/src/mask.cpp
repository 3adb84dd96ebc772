#include "fzg/mask.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "fzg/error.hpp"
#include "fzg/io.hpp"
#include "fzg/kernels.hpp"
#include "fzg/rng.hpp"

namespace fzg {

using nlohmann::json;

void validate(const MaskParams& mp) {
  if (!(mp.temperature > 0.0)) throw ConfigError("mask temperature must be positive");
  if (!(mp.target_ratio >= 0.0 && mp.target_ratio <= 1.0)) {
    throw ConfigError("target ratio must lie in [0, 1]");
  }
  if (!(mp.sparsity_weight >= 0.0)) throw ConfigError("sparsity weight must be nonnegative");
}

BinaryMask BinaryMask::from_bits(std::vector<std::uint8_t> bits) {
  BinaryMask m;
  m.bits = std::move(bits);
  for (auto& b : m.bits) b = b ? 1 : 0;
  m.achieved_ratio =
      m.bits.empty() ? 0.0 : static_cast<double>(m.count()) / static_cast<double>(m.bits.size());
  return m;
}

std::size_t BinaryMask::count() const {
  std::size_t n = 0;
  for (auto b : bits) n += b;
  return n;
}

std::vector<double> BinaryMask::as_values() const {
  return std::vector<double>(bits.begin(), bits.end());
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> continuous_mask(const MaskParams& mp) {
  validate(mp);
  std::vector<double> m(mp.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = sigmoid(mp.logits[i] / mp.temperature);
  return m;
}

double sparsity_loss(std::span<const double> m, double rho) {
  if (m.empty()) return rho * rho;
  double sum = 0.0;
  for (double v : m) sum += v;
  const double r = sum / static_cast<double>(m.size()) - rho;
  return r * r;
}

std::vector<double> sparsity_grad(std::span<const double> m, double rho, const MaskParams& mp) {
  if (m.size() != mp.size()) throw DimensionError("sparsity_grad: mask/logit length mismatch");
  std::vector<double> g(m.size(), 0.0);
  if (m.empty()) return g;
  double sum = 0.0;
  for (double v : m) sum += v;
  const double n = static_cast<double>(m.size());
  const double outer = 2.0 * (sum / n - rho) / n / mp.temperature;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double s = sigmoid(mp.logits[i] / mp.temperature);
    g[i] = outer * s * (1.0 - s);
  }
  return g;
}

std::vector<double> logit_gradient(const MaskParams& mp, const ParamSet& upper_grad,
                                   const ParamDelta& theta_d) {
  validate(mp);
  upper_grad.require_congruent(theta_d, "upper_logit_step");
  if (mp.size() != upper_grad.size()) {
    throw CongruenceError("upper_logit_step: " + std::to_string(mp.size()) + " logits for " +
                          std::to_string(upper_grad.size()) + " tensors");
  }
  const std::vector<double> m = continuous_mask(mp);
  std::vector<double> g = sparsity_grad(m, mp.target_ratio, mp);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double s = m[i];
    const double dm_dw = s * (1.0 - s) / mp.temperature;
    g[i] = tensor_dot(upper_grad, theta_d, i) * dm_dw + mp.sparsity_weight * g[i];
  }
  return g;
}

MaskParams upper_logit_step(const MaskParams& mp, const ParamSet& upper_grad,
                            const ParamDelta& theta_d, double eta1) {
  if (!(eta1 >= 0.0)) throw ConfigError("mask step size must be nonnegative");
  const std::vector<double> g = logit_gradient(mp, upper_grad, theta_d);
  MaskParams out = mp;
  if (eta1 == 0.0) return out;
  for (std::size_t i = 0; i < g.size(); ++i) out.logits[i] -= eta1 * g[i];
  return out;
}

BinaryMask round_mask(const MaskParams& mp) {
  std::vector<std::uint8_t> bits(mp.size());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = mp.logits[i] >= 0.0 ? 1 : 0;
  return BinaryMask::from_bits(std::move(bits));
}

MaskParams init_logits(std::size_t n, double temperature, std::uint64_t seed) {
  if (n == 0) throw ConfigError("mask needs at least one tensor");
  MaskParams mp;
  mp.temperature = temperature;
  validate(mp);
  Rng rng = Rng::named(seed, "mask-init");
  mp.logits.resize(n);
  for (double& w : mp.logits) w = rng.uniform(-3.0, -2.0);
  return mp;
}

std::string mask_to_json(const MaskFile& f) {
  if (f.tensor_names.size() != f.params.size() || f.mask.size() != f.params.size()) {
    throw DimensionError("mask file fields disagree on tensor count");
  }
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["temperature"] = f.params.temperature;
  j["target_ratio"] = f.params.target_ratio;
  j["tensor_names"] = f.tensor_names;
  j["logits"] = f.params.logits;
  nlohmann::ordered_json bits = nlohmann::ordered_json::array();
  for (auto b : f.mask.bits) bits.push_back(static_cast<int>(b));
  j["bits"] = std::move(bits);
  j["achieved_ratio"] = f.mask.achieved_ratio;
  return j.dump(2) + "\n";
}

MaskFile mask_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("mask file is not valid JSON: ") + e.what());
  }
  try {
    if (!j.is_object()) throw FormatError("mask file must be a JSON object");
    static const char* kKeys[] = {"version", "temperature", "target_ratio", "tensor_names",
                                  "logits", "bits", "achieved_ratio"};
    for (const char* k : kKeys) {
      if (!j.contains(k)) throw FormatError(std::string("mask file missing '") + k + "'");
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (std::find(std::begin(kKeys), std::end(kKeys), it.key()) == std::end(kKeys)) {
        throw FormatError("mask file has unknown key '" + it.key() + "'");
      }
    }
    if (j.at("version").get<int>() != 1) {
      throw VersionError("unsupported mask file version " + j.at("version").dump());
    }
    MaskFile f;
    f.params.temperature = j.at("temperature").get<double>();
    f.params.target_ratio = j.at("target_ratio").get<double>();
    f.tensor_names = j.at("tensor_names").get<std::vector<std::string>>();
    f.params.logits = j.at("logits").get<std::vector<double>>();
    std::vector<std::uint8_t> bits;
    for (const auto& b : j.at("bits")) {
      const int v = b.get<int>();
      if (v != 0 && v != 1) throw FormatError("mask bits must be 0 or 1");
      bits.push_back(static_cast<std::uint8_t>(v));
    }
    f.mask = BinaryMask::from_bits(std::move(bits));
    if (f.tensor_names.size() != f.params.size() || f.mask.size() != f.params.size()) {
      throw FormatError("mask file fields disagree on tensor count");
    }
    const double stored = j.at("achieved_ratio").get<double>();
    if (stored != f.mask.achieved_ratio) {
      throw FormatError("mask file achieved_ratio does not match its bits");
    }
    validate(f.params);
    return f;
  } catch (const json::exception& e) {
    throw FormatError(std::string("mask file has a malformed field: ") + e.what());
  }
}

void save_mask(const MaskFile& f, const std::filesystem::path& path) {
  write_file_atomic(path, mask_to_json(f));
}

MaskFile load_mask(const std::filesystem::path& path) { return mask_from_json(read_file(path)); }

}  // namespace fzg
