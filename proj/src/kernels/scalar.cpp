#include <cmath>

#include "fzg/kernels.hpp"

namespace fzg::kernels {

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double sq_dist(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

void axpy(double* y, double alpha, const double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void blend(double* out, const double* pre, const double* ft, double m, std::size_t n) {
  const double r = 1.0 - m;
  for (std::size_t i = 0; i < n; ++i) out[i] = m * pre[i] + r * ft[i];
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
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = c.beta1 * m[i] + a1 * g[i];
    v[i] = c.beta2 * v[i] + a2 * (g[i] * g[i]);
    const double mhat = m[i] / c.bias1;
    const double vhat = v[i] / c.bias2;
    p[i] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t{Isa::kScalar, "scalar", dot,          sq_dist,   axpy,
                             blend,        matvec,   matvec_t_acc, outer_acc, adam};
  return t;
}

}  // namespace fzg::kernels
