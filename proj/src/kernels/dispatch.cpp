#include <cstdlib>
#include <stdexcept>
#include <string>

#include "gex/kernels/kernels.hpp"

namespace gex::kernels {
namespace {

bool cpu_has_avx2() {
#if GEX_HAVE_AVX2
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Isa initial_isa() {
  const char* env = std::getenv("GEX_ISA");
  if (env != nullptr && std::string(env) == "scalar") return Isa::scalar;
  return detected_isa();
}

Isa& current() {
  static Isa isa = initial_isa();
  return isa;
}

}  // namespace

#if !GEX_HAVE_AVX2
namespace avx2 {
void gemm(bool ta, bool tb, int64_t m, int64_t n, int64_t k, const float* a, int64_t lda,
          const float* b, int64_t ldb, float beta, float* c, int64_t ldc) {
  scalar::gemm<float>(ta, tb, m, n, k, a, lda, b, ldb, beta, c, ldc);
}
float dot(const float* x, const float* y, int64_t n) { return scalar::dot<float>(x, y, n); }
void axpy(float alpha, const float* x, float* y, int64_t n) { scalar::axpy<float>(alpha, x, y, n); }
void add(const float* x, const float* y, float* out, int64_t n) { scalar::add<float>(x, y, out, n); }
void mul(const float* x, const float* y, float* out, int64_t n) { scalar::mul<float>(x, y, out, n); }
void leaky_relu(const float* x, float slope, float* out, int64_t n) {
  scalar::leaky_relu<float>(x, slope, out, n);
}
}  // namespace avx2
#endif

std::string_view name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

Isa detected_isa() {
  static const Isa isa = cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
  return isa;
}

Isa active_isa() { return current(); }

void set_active_isa(Isa isa) {
  if (isa == Isa::avx2 && detected_isa() != Isa::avx2) {
    throw std::invalid_argument("kernels: CPU does not support AVX2/FMA");
  }
  current() = isa;
}

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const float* a,
          int64_t lda, const float* b, int64_t ldb, float beta, float* c, int64_t ldc) {
  if (current() == Isa::avx2) {
    avx2::gemm(trans_a, trans_b, m, n, k, a, lda, b, ldb, beta, c, ldc);
  } else {
    scalar::gemm<float>(trans_a, trans_b, m, n, k, a, lda, b, ldb, beta, c, ldc);
  }
}

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const double* a,
          int64_t lda, const double* b, int64_t ldb, double beta, double* c, int64_t ldc) {
  scalar::gemm<double>(trans_a, trans_b, m, n, k, a, lda, b, ldb, beta, c, ldc);
}

float dot(const float* x, const float* y, int64_t n) {
  return current() == Isa::avx2 ? avx2::dot(x, y, n) : scalar::dot<float>(x, y, n);
}
double dot(const double* x, const double* y, int64_t n) { return scalar::dot<double>(x, y, n); }

void axpy(float alpha, const float* x, float* y, int64_t n) {
  if (current() == Isa::avx2) {
    avx2::axpy(alpha, x, y, n);
  } else {
    scalar::axpy<float>(alpha, x, y, n);
  }
}
void axpy(double alpha, const double* x, double* y, int64_t n) {
  scalar::axpy<double>(alpha, x, y, n);
}

void add(const float* x, const float* y, float* out, int64_t n) {
  if (current() == Isa::avx2) {
    avx2::add(x, y, out, n);
  } else {
    scalar::add<float>(x, y, out, n);
  }
}
void add(const double* x, const double* y, double* out, int64_t n) {
  scalar::add<double>(x, y, out, n);
}

void mul(const float* x, const float* y, float* out, int64_t n) {
  if (current() == Isa::avx2) {
    avx2::mul(x, y, out, n);
  } else {
    scalar::mul<float>(x, y, out, n);
  }
}
void mul(const double* x, const double* y, double* out, int64_t n) {
  scalar::mul<double>(x, y, out, n);
}

void leaky_relu(const float* x, float slope, float* out, int64_t n) {
  if (current() == Isa::avx2) {
    avx2::leaky_relu(x, slope, out, n);
  } else {
    scalar::leaky_relu<float>(x, slope, out, n);
  }
}
void leaky_relu(const double* x, double slope, double* out, int64_t n) {
  scalar::leaky_relu<double>(x, slope, out, n);
}

}  // namespace gex::kernels
