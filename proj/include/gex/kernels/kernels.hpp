#pragma once

// Inner-loop arithmetic used by the graph evaluator. Every kernel has a
// portable scalar reference; float kernels additionally have an AVX2/FMA
// variant chosen at runtime. Double precision always runs the reference.

#include <cstdint>
#include <string_view>

namespace gex::kernels {

enum class Isa { scalar, avx2 };

std::string_view name(Isa isa);

// Best instruction set this CPU supports.
Isa detected_isa();

// Instruction set currently used for float kernels. Starts at detected_isa()
// unless the environment variable GEX_ISA=scalar is set.
Isa active_isa();

// Throws std::invalid_argument if the CPU cannot run `isa`.
void set_active_isa(Isa isa);

// C[m x n] = beta * C + op(A) * op(B), op(X) = X or X^T. Row-major with
// leading dimensions. beta == 0 overwrites C without reading it.
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const float* a,
          int64_t lda, const float* b, int64_t ldb, float beta, float* c, int64_t ldc);
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const double* a,
          int64_t lda, const double* b, int64_t ldb, double beta, double* c, int64_t ldc);

float dot(const float* x, const float* y, int64_t n);
double dot(const double* x, const double* y, int64_t n);

// y += alpha * x
void axpy(float alpha, const float* x, float* y, int64_t n);
void axpy(double alpha, const double* x, double* y, int64_t n);

// out = x + y, out = x * y (out may alias x or y)
void add(const float* x, const float* y, float* out, int64_t n);
void add(const double* x, const double* y, double* out, int64_t n);
void mul(const float* x, const float* y, float* out, int64_t n);
void mul(const double* x, const double* y, double* out, int64_t n);

// out = x >= 0 ? x : slope * x
void leaky_relu(const float* x, float slope, float* out, int64_t n);
void leaky_relu(const double* x, double slope, double* out, int64_t n);

// Explicit per-ISA entry points, used by the equivalence tests.
namespace scalar {
template <class T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const T* a, int64_t lda,
          const T* b, int64_t ldb, T beta, T* c, int64_t ldc);
template <class T>
T dot(const T* x, const T* y, int64_t n);
template <class T>
void axpy(T alpha, const T* x, T* y, int64_t n);
template <class T>
void add(const T* x, const T* y, T* out, int64_t n);
template <class T>
void mul(const T* x, const T* y, T* out, int64_t n);
template <class T>
void leaky_relu(const T* x, T slope, T* out, int64_t n);
}  // namespace scalar

namespace avx2 {
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const float* a,
          int64_t lda, const float* b, int64_t ldb, float beta, float* c, int64_t ldc);
float dot(const float* x, const float* y, int64_t n);
void axpy(float alpha, const float* x, float* y, int64_t n);
void add(const float* x, const float* y, float* out, int64_t n);
void mul(const float* x, const float* y, float* out, int64_t n);
void leaky_relu(const float* x, float slope, float* out, int64_t n);
}  // namespace avx2

}  // namespace gex::kernels
