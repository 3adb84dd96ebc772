#pragma once

// Data-parallel inner loops used by the parameter store, the denoiser and the
// optimizers. Each instruction set provides the same table of entry points;
// the active table is chosen once at runtime from CPU features and can be
// overridden with FZG_KERNELS=scalar|avx2|neon or kernels::select().
//
// Contract across ISAs:
//   - elementwise kernels (axpy, blend, adam, matvec_t_acc, outer_acc) are
//     bit-identical to the scalar reference;
//   - reductions (dot, sq_dist, matvec) may reassociate and agree with the
//     scalar reference to a few ulps of the summed magnitudes.

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace fzg::kernels {

enum class Isa { kScalar, kAvx2, kNeon };

struct AdamCoeffs {
  double lr;
  double beta1;
  double beta2;
  double eps;
  double bias1;  // 1 - beta1^t
  double bias2;  // 1 - beta2^t
};

struct KernelTable {
  Isa isa;
  const char* name;
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sq_dist)(const double* a, const double* b, std::size_t n);
  // y += alpha * x
  void (*axpy)(double* y, double alpha, const double* x, std::size_t n);
  // out = m * pre + (1 - m) * ft
  void (*blend)(double* out, const double* pre, const double* ft, double m, std::size_t n);
  // y[r] = bias[r] + <w[r, :], x>; bias may be null.
  void (*matvec)(double* y, const double* w, const double* x, const double* bias,
                 std::size_t rows, std::size_t cols);
  // xg[c] += sum_r w[r, c] * dy[r]
  void (*matvec_t_acc)(double* xg, const double* w, const double* dy, std::size_t rows,
                       std::size_t cols);
  // wg[r, c] += dy[r] * x[c]
  void (*outer_acc)(double* wg, const double* dy, const double* x, std::size_t rows,
                    std::size_t cols);
  void (*adam)(double* p, double* m, double* v, const double* g, std::size_t n,
               const AdamCoeffs& c);
};

const KernelTable& scalar_table();
#if defined(FZG_HAVE_AVX2)
const KernelTable& avx2_table();
#endif
#if defined(FZG_HAVE_NEON)
const KernelTable& neon_table();
#endif

// Whether the ISA is compiled in and supported by the running CPU.
bool supported(Isa isa);
std::vector<Isa> available();
const KernelTable& table(Isa isa);

const KernelTable& active();
// Throws ConfigError if the ISA is unavailable.
void select(Isa isa);
Isa parse_isa(std::string_view name);
std::string_view isa_name(Isa isa);

inline double dot(std::span<const double> a, std::span<const double> b) {
  return active().dot(a.data(), b.data(), a.size());
}

inline void axpy(std::span<double> y, double alpha, std::span<const double> x) {
  active().axpy(y.data(), alpha, x.data(), y.size());
}

}  // namespace fzg::kernels
