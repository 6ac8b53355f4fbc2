#include "ecac/kernels.hpp"

namespace ecac::kernels::detail {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double sum_scalar(const double* x, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale_scalar(double alpha, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void mul_scalar(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void add_scalar(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

// i-k-j order keeps the inner loop a contiguous axpy over rows of b and c.
void matmul_scalar(const double* a, const double* b, double* c, std::size_t p,
                   std::size_t q, std::size_t r, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < p * r; ++i) c[i] = 0.0;
  }
  for (std::size_t i = 0; i < p; ++i) {
    double* crow = c + i * r;
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = a[i * q + k];
      if (aik == 0.0) continue;
      axpy_scalar(aik, b + k * r, crow, r);
    }
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t{dot_scalar, sum_scalar, axpy_scalar, scale_scalar,
                             mul_scalar, add_scalar, matmul_scalar};
  return t;
}

}  // namespace ecac::kernels::detail
