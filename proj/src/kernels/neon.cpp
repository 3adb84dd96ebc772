// AArch64 Advanced SIMD; NEON is architecturally guaranteed there, so no
// runtime probe is needed.
#include <arm_neon.h>

#include <cmath>

#include "fzg/kernels.hpp"

namespace fzg::kernels {

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  float64x2_t acc0 = vdupq_n_f64(0.0);
  float64x2_t acc1 = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 = vfmaq_f64(acc0, vld1q_f64(a + i), vld1q_f64(b + i));
    acc1 = vfmaq_f64(acc1, vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
  }
  double s = vaddvq_f64(vaddq_f64(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sq_dist(const double* a, const double* b, std::size_t n) {
  float64x2_t acc = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t d = vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
    acc = vfmaq_f64(acc, d, d);
  }
  double s = vaddvq_f64(acc);
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void axpy(double* y, double alpha, const double* x, std::size_t n) {
  const float64x2_t va = vdupq_n_f64(alpha);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, vld1q_f64(x + i))));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void blend(double* out, const double* pre, const double* ft, double m, std::size_t n) {
  const double r = 1.0 - m;
  const float64x2_t vm = vdupq_n_f64(m);
  const float64x2_t vr = vdupq_n_f64(r);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(out + i, vaddq_f64(vmulq_f64(vm, vld1q_f64(pre + i)),
                                 vmulq_f64(vr, vld1q_f64(ft + i))));
  }
  for (; i < n; ++i) out[i] = m * pre[i] + r * ft[i];
}

void matvec(double* y, const double* w, const double* x, const double* bias, std::size_t rows,
            std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double acc = dot(w + r * cols, x, cols);
    y[r] = bias ? bias[r] + acc : acc;
  }
}

void matvec_t_acc(double* xg, const double* w, const double* dy, std::size_t rows,
                  std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) axpy(xg, dy[r], w + r * cols, cols);
}

void outer_acc(double* wg, const double* dy, const double* x, std::size_t rows,
               std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) axpy(wg + r * cols, dy[r], x, cols);
}

void adam(double* p, double* m, double* v, const double* g, std::size_t n,
          const AdamCoeffs& c) {
  const double a1 = 1.0 - c.beta1;
  const double a2 = 1.0 - c.beta2;
  const float64x2_t b1 = vdupq_n_f64(c.beta1);
  const float64x2_t b2 = vdupq_n_f64(c.beta2);
  const float64x2_t va1 = vdupq_n_f64(a1);
  const float64x2_t va2 = vdupq_n_f64(a2);
  const float64x2_t bc1 = vdupq_n_f64(c.bias1);
  const float64x2_t bc2 = vdupq_n_f64(c.bias2);
  const float64x2_t lr = vdupq_n_f64(c.lr);
  const float64x2_t eps = vdupq_n_f64(c.eps);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t gi = vld1q_f64(g + i);
    const float64x2_t mi = vaddq_f64(vmulq_f64(b1, vld1q_f64(m + i)), vmulq_f64(va1, gi));
    const float64x2_t vi =
        vaddq_f64(vmulq_f64(b2, vld1q_f64(v + i)), vmulq_f64(va2, vmulq_f64(gi, gi)));
    vst1q_f64(m + i, mi);
    vst1q_f64(v + i, vi);
    const float64x2_t mhat = vdivq_f64(mi, bc1);
    const float64x2_t vhat = vdivq_f64(vi, bc2);
    const float64x2_t step =
        vdivq_f64(vmulq_f64(lr, mhat), vaddq_f64(vsqrtq_f64(vhat), eps));
    vst1q_f64(p + i, vsubq_f64(vld1q_f64(p + i), step));
  }
  for (; i < n; ++i) {
    m[i] = c.beta1 * m[i] + a1 * g[i];
    v[i] = c.beta2 * v[i] + a2 * (g[i] * g[i]);
    const double mhat = m[i] / c.bias1;
    const double vhat = v[i] / c.bias2;
    p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

}  // namespace

const KernelTable& neon_table() {
  static const KernelTable t{Isa::kNeon, "neon", dot,          sq_dist,   axpy,
                             blend,      matvec, matvec_t_acc, outer_acc, adam};
  return t;
}

}  // namespace fzg::kernels
