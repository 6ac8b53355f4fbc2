#include <atomic>
#include <string>

#include "ecac/errors.hpp"
#include "ecac/kernels.hpp"

namespace ecac::kernels {
namespace {

bool cpu_has_avx2() {
#if defined(ECAC_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa detect() { return cpu_has_avx2() ? Isa::avx2 : Isa::scalar; }

std::atomic<Isa>& current() {
  static std::atomic<Isa> isa{detect()};
  return isa;
}

void check_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": length " + std::to_string(a) + " vs " +
                         std::to_string(b));
  }
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool isa_available(Isa isa) {
  if (isa == Isa::scalar) return true;
  return detail::avx2_table() != nullptr && cpu_has_avx2();
}

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
  if (!isa_available(isa)) {
    throw ContractError("kernel ISA '" + std::string(isa_name(isa)) + "' not available");
  }
  current().store(isa, std::memory_order_relaxed);
}

const KernelTable& table(Isa isa) {
  if (isa == Isa::avx2) {
    if (const auto* t = detail::avx2_table()) return *t;
  }
  return detail::scalar_table();
}

static const KernelTable& active() { return table(active_isa()); }

double dot(std::span<const double> a, std::span<const double> b) {
  check_same(a.size(), b.size(), "dot");
  return active().dot(a.data(), b.data(), a.size());
}

double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_same(x.size(), y.size(), "axpy");
  active().axpy(alpha, x.data(), y.data(), x.size());
}

void scale(double alpha, std::span<double> x) { active().scale(alpha, x.data(), x.size()); }

void mul(std::span<const double> a, std::span<const double> b, std::span<double> out) {
  check_same(a.size(), b.size(), "mul");
  check_same(a.size(), out.size(), "mul");
  active().mul(a.data(), b.data(), out.data(), a.size());
}

void add(std::span<const double> a, std::span<const double> b, std::span<double> out) {
  check_same(a.size(), b.size(), "add");
  check_same(a.size(), out.size(), "add");
  active().add(a.data(), b.data(), out.data(), a.size());
}

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c,
            std::size_t p, std::size_t q, std::size_t r, bool accumulate) {
  check_same(a.size(), p * q, "matmul lhs");
  check_same(b.size(), q * r, "matmul rhs");
  check_same(c.size(), p * r, "matmul out");
  active().matmul(a.data(), b.data(), c.data(), p, q, r, accumulate);
}

}  // namespace ecac::kernels
