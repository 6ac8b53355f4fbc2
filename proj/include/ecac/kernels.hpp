#pragma once

// Dense double-precision inner loops.
//
// Every kernel has a portable scalar reference implementation and, on x86-64,
// an AVX2+FMA variant compiled in its own translation unit. The variant is
// picked once at startup from CPUID; tests may pin either one with set_isa().

#include <cstddef>
#include <span>
#include <string_view>

namespace ecac::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

/// True when the running CPU (and the build) can execute `isa`.
bool isa_available(Isa isa);

/// The ISA used by the free functions below.
Isa active_isa();

/// Pins the dispatch target. Throws ContractError if unavailable.
void set_isa(Isa isa);

/// Function table filled by each ISA translation unit.
struct KernelTable {
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  // y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // x *= alpha
  void (*scale)(double alpha, double* x, std::size_t n);
  // out = a * b (elementwise)
  void (*mul)(const double* a, const double* b, double* out, std::size_t n);
  // out = a + b
  void (*add)(const double* a, const double* b, double* out, std::size_t n);
  // c[p x r] (+)= a[p x q] * b[q x r], row-major
  void (*matmul)(const double* a, const double* b, double* c, std::size_t p,
                 std::size_t q, std::size_t r, bool accumulate);
};

const KernelTable& table(Isa isa);

double dot(std::span<const double> a, std::span<const double> b);
double sum(std::span<const double> x);
void axpy(double alpha, std::span<const double> x, std::span<double> y);
void scale(double alpha, std::span<double> x);
void mul(std::span<const double> a, std::span<const double> b, std::span<double> out);
void add(std::span<const double> a, std::span<const double> b, std::span<double> out);
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t p, std::size_t q, std::size_t r, bool accumulate = false);

namespace detail {
const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in
}  // namespace detail

}  // namespace ecac::kernels
