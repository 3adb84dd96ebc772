#include "fzg/param_set.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "fzg/error.hpp"
#include "fzg/kernels.hpp"

namespace fzg {

std::size_t element_count(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(std::span<const std::size_t> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive");
  }
  data_.assign(element_count(shape_), 0.0);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive");
  }
  if (data_.size() != element_count(shape_)) {
    throw DimensionError("tensor payload has " + std::to_string(data_.size()) +
                         " elements, shape " + shape_string(shape_) + " needs " +
                         std::to_string(element_count(shape_)));
  }
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::bit_equal(const Tensor& other) const {
  return shape_ == other.shape_ &&
         std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

void ParamSet::add(std::string name, Tensor t) {
  if (name.empty()) throw ConfigError("tensor name must be non-empty");
  if (index_.contains(name)) throw ConfigError("duplicate tensor name '" + name + "'");
  index_.emplace(name, names_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(t));
}

std::size_t ParamSet::index_of(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw RangeError("no tensor named '" + std::string(name) + "'");
  return it->second;
}

bool ParamSet::contains(std::string_view name) const {
  return index_.contains(std::string(name));
}

bool ParamSet::congruent(const ParamSet& other) const {
  if (size() != other.size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (names_[i] != other.names_[i] || !tensors_[i].same_shape(other.tensors_[i])) return false;
  }
  return true;
}

void ParamSet::require_congruent(const ParamSet& other, std::string_view context) const {
  const std::size_t n = std::min(size(), other.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (names_[i] != other.names_[i]) {
      throw CongruenceError(std::string(context) + ": tensor " + std::to_string(i) +
                            " is '" + names_[i] + "' vs '" + other.names_[i] + "'");
    }
    if (!tensors_[i].same_shape(other.tensors_[i])) {
      throw CongruenceError(std::string(context) + ": tensor '" + names_[i] + "' has shape " +
                            shape_string(tensors_[i].shape()) + " vs " +
                            shape_string(other.tensors_[i].shape()));
    }
  }
  if (size() != other.size()) {
    throw CongruenceError(std::string(context) + ": tensor count " + std::to_string(size()) +
                          " vs " + std::to_string(other.size()));
  }
}

bool ParamSet::bit_equal(const ParamSet& other) const {
  if (!congruent(other)) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    if (!tensors_[i].bit_equal(other.tensors_[i])) return false;
  }
  return true;
}

bool ParamSet::all_finite() const {
  for (const Tensor& t : tensors_) {
    for (double v : t.values()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

ParamSet zeros_like(const ParamSet& p) {
  ParamSet out;
  for (std::size_t i = 0; i < p.size(); ++i) out.add(p.name(i), Tensor(p[i].shape()));
  return out;
}

ParamSet blend(const ParamSet& pre, const ParamSet& ft, std::span<const double> m) {
  pre.require_congruent(ft, "blend");
  if (m.size() != pre.size()) {
    throw DimensionError("blend: mask has " + std::to_string(m.size()) + " entries for " +
                         std::to_string(pre.size()) + " tensors");
  }
  const auto& k = kernels::active();
  ParamSet out;
  for (std::size_t i = 0; i < pre.size(); ++i) {
    if (m[i] == 1.0) {
      out.add(pre.name(i), pre[i]);
    } else if (m[i] == 0.0) {
      out.add(pre.name(i), ft[i]);
    } else {
      Tensor t(pre[i].shape());
      k.blend(t.data(), pre[i].data(), ft[i].data(), m[i], t.size());
      out.add(pre.name(i), std::move(t));
    }
  }
  return out;
}

ParamDelta difference(const ParamSet& a, const ParamSet& b) {
  a.require_congruent(b, "difference");
  ParamSet out = a;
  for (std::size_t i = 0; i < a.size(); ++i) {
    auto dst = out[i].values();
    auto src = b[i].values();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] -= src[j];
  }
  return ParamDelta(std::move(out));
}

double tensor_dot(const ParamSet& a, const ParamSet& b, std::size_t i) {
  if (i >= a.size() || i >= b.size()) {
    throw RangeError("tensor_dot: index " + std::to_string(i) + " out of range");
  }
  if (a.name(i) != b.name(i) || !a[i].same_shape(b[i])) {
    throw CongruenceError("tensor_dot: operands differ at tensor " + std::to_string(i));
  }
  return kernels::active().dot(a[i].data(), b[i].data(), a[i].size());
}

void axpy_tensor(ParamSet& target, std::size_t i, double coeff, const Tensor& g) {
  if (i >= target.size()) {
    throw RangeError("axpy_tensor: index " + std::to_string(i) + " out of range");
  }
  if (!target[i].same_shape(g)) {
    throw DimensionError("axpy_tensor: shape " + shape_string(g.shape()) + " does not match '" +
                         target.name(i) + "' " + shape_string(target[i].shape()));
  }
  if (coeff == 0.0) return;
  kernels::active().axpy(target[i].data(), coeff, g.data(), g.size());
}

void axpy_all(ParamSet& target, double coeff, const ParamSet& g) {
  target.require_congruent(g, "axpy_all");
  for (std::size_t i = 0; i < target.size(); ++i) axpy_tensor(target, i, coeff, g[i]);
}

ParamCounts param_counts(const ParamSet& p) {
  ParamCounts c;
  c.per_tensor.reserve(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) {
    c.per_tensor.push_back(p[i].size());
    c.total += p[i].size();
  }
  return c;
}

double max_abs_diff(const ParamSet& a, const ParamSet& b) {
  a.require_congruent(b, "max_abs_diff");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      worst = std::max(worst, std::abs(a[i][j] - b[i][j]));
    }
  }
  return worst;
}

}  // namespace fzg
