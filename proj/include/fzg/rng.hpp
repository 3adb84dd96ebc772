#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <optional>
#include <string_view>

namespace fzg {

// Counter-based generator (Philox4x32-10). Every draw is a pure function of
// (key, stream, counter), so a stream can be reconstructed from its seed and
// position alone. No global state.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  // Independent stream keyed by `seed` and a stable hash of `name`.
  static Rng named(std::uint64_t seed, std::string_view name);

  // Child stream derived from this generator's key; does not advance *this.
  Rng fork(std::string_view name) const;

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }
  result_type operator()() { return next_u64(); }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Unbiased integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  // Standard normal via Box-Muller; the second variate is cached.
  double normal();

  std::uint64_t counter() const { return counter_; }

 private:
  std::array<std::uint32_t, 4> block(std::uint64_t ctr) const;

  std::uint64_t key_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
  std::array<std::uint32_t, 4> buf_{};
  int buf_pos_ = 4;
  std::optional<double> spare_normal_;
};

// 64-bit FNV-1a; stable across platforms, used to turn stream names into keys.
std::uint64_t hash_name(std::string_view name);

}  // namespace fzg
