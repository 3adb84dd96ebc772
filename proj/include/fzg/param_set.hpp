#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace fzg {

// Dense row-major f64 tensor. A rank-0 tensor (empty shape) holds one element.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({}, {v}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  void fill(double v);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  // Byte-level equality of shape and payload (distinguishes -0.0 and NaN payloads).
  bool bit_equal(const Tensor& other) const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t element_count(std::span<const std::size_t> shape);
std::string shape_string(std::span<const std::size_t> shape);

// Ordered collection of named tensors. Order is construction order and defines
// the tensor index used by masks.
class ParamSet {
 public:
  ParamSet() = default;

  void add(std::string name, Tensor t);

  std::size_t size() const { return tensors_.size(); }
  bool empty() const { return tensors_.empty(); }
  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }
  Tensor& tensor(std::size_t i) { return tensors_.at(i); }
  const Tensor& tensor(std::size_t i) const { return tensors_.at(i); }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }

  // Index of the tensor named `name`; throws RangeError if absent.
  std::size_t index_of(std::string_view name) const;
  bool contains(std::string_view name) const;
  Tensor& at(std::string_view name) { return tensors_[index_of(name)]; }
  const Tensor& at(std::string_view name) const { return tensors_[index_of(name)]; }

  bool congruent(const ParamSet& other) const;
  // Throws CongruenceError naming the first mismatching tensor.
  void require_congruent(const ParamSet& other, std::string_view context) const;

  bool bit_equal(const ParamSet& other) const;
  bool all_finite() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

// theta_pre - theta_ft, kept as a distinct type so the compact representation
// cannot be confused with an ordinary parameter set.
class ParamDelta : public ParamSet {
 public:
  ParamDelta() = default;
  explicit ParamDelta(ParamSet p) : ParamSet(std::move(p)) {}
};

struct ParamCounts {
  std::vector<std::size_t> per_tensor;
  std::size_t total = 0;
};

ParamSet zeros_like(const ParamSet& p);

// Per tensor i: m[i] * pre_i + (1 - m[i]) * ft_i. Mask values of exactly 0 or 1
// copy the source tensor bit for bit.
ParamSet blend(const ParamSet& pre, const ParamSet& ft, std::span<const double> m);

// a - b as a delta.
ParamDelta difference(const ParamSet& a, const ParamSet& b);

// Frobenius inner product of tensor i of a and b.
double tensor_dot(const ParamSet& a, const ParamSet& b, std::size_t i);

// target_i += coeff * g
void axpy_tensor(ParamSet& target, std::size_t i, double coeff, const Tensor& g);

// target += coeff * g over every tensor.
void axpy_all(ParamSet& target, double coeff, const ParamSet& g);

ParamCounts param_counts(const ParamSet& p);

double max_abs_diff(const ParamSet& a, const ParamSet& b);

}  // namespace fzg
