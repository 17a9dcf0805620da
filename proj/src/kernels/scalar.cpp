#include "gex/kernels/kernels.hpp"

namespace gex::kernels::scalar {

template <class T>
void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const T* a, int64_t lda,
          const T* b, int64_t ldb, T beta, T* c, int64_t ldc) {
  for (int64_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    if (beta == T(0)) {
      for (int64_t j = 0; j < n; ++j) crow[j] = T(0);
    } else if (beta != T(1)) {
      for (int64_t j = 0; j < n; ++j) crow[j] *= beta;
    }
    for (int64_t p = 0; p < k; ++p) {
      const T av = trans_a ? a[p * lda + i] : a[i * lda + p];
      if (av == T(0)) continue;
      if (trans_b) {
        for (int64_t j = 0; j < n; ++j) crow[j] += av * b[j * ldb + p];
      } else {
        const T* brow = b + p * ldb;
        for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <class T>
T dot(const T* x, const T* y, int64_t n) {
  T s = 0;
  for (int64_t i = 0; i < n; ++i) s += x[i] * y[i];
  return s;
}

template <class T>
void axpy(T alpha, const T* x, T* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void add(const T* x, const T* y, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] + y[i];
}

template <class T>
void mul(const T* x, const T* y, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] * y[i];
}

template <class T>
void leaky_relu(const T* x, T slope, T* out, int64_t n) {
  for (int64_t i = 0; i < n; ++i) out[i] = x[i] >= T(0) ? x[i] : slope * x[i];
}

#define GEX_INSTANTIATE(T)                                                                      \
  template void gemm<T>(bool, bool, int64_t, int64_t, int64_t, const T*, int64_t, const T*,     \
                        int64_t, T, T*, int64_t);                                               \
  template T dot<T>(const T*, const T*, int64_t);                                               \
  template void axpy<T>(T, const T*, T*, int64_t);                                              \
  template void add<T>(const T*, const T*, T*, int64_t);                                        \
  template void mul<T>(const T*, const T*, T*, int64_t);                                        \
  template void leaky_relu<T>(const T*, T, T*, int64_t);

GEX_INSTANTIATE(float)
GEX_INSTANTIATE(double)
#undef GEX_INSTANTIATE

}  // namespace gex::kernels::scalar
