// Compiled with -mavx2 -mfma; only reached when the CPU reports both.
#include <immintrin.h>

#include <algorithm>
#include <cstring>
#include <vector>

#include "gex/kernels/kernels.hpp"

namespace gex::kernels::avx2 {
namespace {

constexpr int64_t kMR = 6;
constexpr int64_t kNR = 16;
constexpr int64_t kKC = 256;
constexpr int64_t kMC = 96;
constexpr int64_t kNC = 2048;

void pack_a(bool ta, const float* a, int64_t lda, int64_t i0, int64_t mc, int64_t p0,
            int64_t kc, float* out) {
  for (int64_t ir = 0; ir < mc; ir += kMR) {
    const int64_t rows = std::min(kMR, mc - ir);
    if (ta) {
      for (int64_t p = 0; p < kc; ++p) {
        const float* src = a + (p0 + p) * lda + i0 + ir;
        for (int64_t i = 0; i < kMR; ++i) out[i] = i < rows ? src[i] : 0.f;
        out += kMR;
      }
    } else {
      for (int64_t p = 0; p < kc; ++p) {
        for (int64_t i = 0; i < kMR; ++i) {
          out[i] = i < rows ? a[(i0 + ir + i) * lda + p0 + p] : 0.f;
        }
        out += kMR;
      }
    }
  }
}

void pack_b(bool tb, const float* b, int64_t ldb, int64_t p0, int64_t kc, int64_t j0,
            int64_t nc, float* out) {
  for (int64_t jr = 0; jr < nc; jr += kNR) {
    const int64_t cols = std::min(kNR, nc - jr);
    if (tb) {
      for (int64_t j = 0; j < kNR; ++j) {
        if (j < cols) {
          const float* src = b + (j0 + jr + j) * ldb + p0;
          for (int64_t p = 0; p < kc; ++p) out[p * kNR + j] = src[p];
        } else {
          for (int64_t p = 0; p < kc; ++p) out[p * kNR + j] = 0.f;
        }
      }
    } else {
      for (int64_t p = 0; p < kc; ++p) {
        const float* src = b + (p0 + p) * ldb + j0 + jr;
        if (cols == kNR) {
          std::memcpy(out + p * kNR, src, kNR * sizeof(float));
        } else {
          for (int64_t j = 0; j < kNR; ++j) out[p * kNR + j] = j < cols ? src[j] : 0.f;
        }
      }
    }
    out += kNR * kc;
  }
}

// acc[6][16] = sum_p ap[p][0..6) (x) bp[p][0..16)
inline void micro_6x16(int64_t kc, const float* ap, const float* bp, float* c, int64_t ldc) {
  __m256 c00 = _mm256_setzero_ps(), c01 = _mm256_setzero_ps();
  __m256 c10 = _mm256_setzero_ps(), c11 = _mm256_setzero_ps();
  __m256 c20 = _mm256_setzero_ps(), c21 = _mm256_setzero_ps();
  __m256 c30 = _mm256_setzero_ps(), c31 = _mm256_setzero_ps();
  __m256 c40 = _mm256_setzero_ps(), c41 = _mm256_setzero_ps();
  __m256 c50 = _mm256_setzero_ps(), c51 = _mm256_setzero_ps();
  for (int64_t p = 0; p < kc; ++p) {
    const __m256 b0 = _mm256_loadu_ps(bp);
    const __m256 b1 = _mm256_loadu_ps(bp + 8);
    __m256 a = _mm256_broadcast_ss(ap + 0);
    c00 = _mm256_fmadd_ps(a, b0, c00);
    c01 = _mm256_fmadd_ps(a, b1, c01);
    a = _mm256_broadcast_ss(ap + 1);
    c10 = _mm256_fmadd_ps(a, b0, c10);
    c11 = _mm256_fmadd_ps(a, b1, c11);
    a = _mm256_broadcast_ss(ap + 2);
    c20 = _mm256_fmadd_ps(a, b0, c20);
    c21 = _mm256_fmadd_ps(a, b1, c21);
    a = _mm256_broadcast_ss(ap + 3);
    c30 = _mm256_fmadd_ps(a, b0, c30);
    c31 = _mm256_fmadd_ps(a, b1, c31);
    a = _mm256_broadcast_ss(ap + 4);
    c40 = _mm256_fmadd_ps(a, b0, c40);
    c41 = _mm256_fmadd_ps(a, b1, c41);
    a = _mm256_broadcast_ss(ap + 5);
    c50 = _mm256_fmadd_ps(a, b0, c50);
    c51 = _mm256_fmadd_ps(a, b1, c51);
    ap += kMR;
    bp += kNR;
  }
  auto acc = [](float* row, __m256 lo, __m256 hi) {
    _mm256_storeu_ps(row, _mm256_add_ps(_mm256_loadu_ps(row), lo));
    _mm256_storeu_ps(row + 8, _mm256_add_ps(_mm256_loadu_ps(row + 8), hi));
  };
  acc(c + 0 * ldc, c00, c01);
  acc(c + 1 * ldc, c10, c11);
  acc(c + 2 * ldc, c20, c21);
  acc(c + 3 * ldc, c30, c31);
  acc(c + 4 * ldc, c40, c41);
  acc(c + 5 * ldc, c50, c51);
}

}  // namespace

void gemm(bool trans_a, bool trans_b, int64_t m, int64_t n, int64_t k, const float* a,
          int64_t lda, const float* b, int64_t ldb, float beta, float* c, int64_t ldc) {
  for (int64_t i = 0; i < m; ++i) {
    float* row = c + i * ldc;
    if (beta == 0.f) {
      std::fill(row, row + n, 0.f);
    } else if (beta != 1.f) {
      for (int64_t j = 0; j < n; ++j) row[j] *= beta;
    }
  }
  if (m == 0 || n == 0 || k == 0) return;

  thread_local std::vector<float> a_buf;
  thread_local std::vector<float> b_buf;
  a_buf.resize(static_cast<size_t>((kMC + kMR) * kKC));
  b_buf.resize(static_cast<size_t>((kNC + kNR) * kKC));
  alignas(32) float edge[kMR * kNR];

  for (int64_t jc = 0; jc < n; jc += kNC) {
    const int64_t nc = std::min(kNC, n - jc);
    for (int64_t pc = 0; pc < k; pc += kKC) {
      const int64_t kc = std::min(kKC, k - pc);
      pack_b(trans_b, b, ldb, pc, kc, jc, nc, b_buf.data());
      for (int64_t ic = 0; ic < m; ic += kMC) {
        const int64_t mc = std::min(kMC, m - ic);
        pack_a(trans_a, a, lda, ic, mc, pc, kc, a_buf.data());
        for (int64_t jr = 0; jr < nc; jr += kNR) {
          const int64_t cols = std::min(kNR, nc - jr);
          const float* bp = b_buf.data() + (jr / kNR) * kNR * kc;
          for (int64_t ir = 0; ir < mc; ir += kMR) {
            const int64_t rows = std::min(kMR, mc - ir);
            const float* ap = a_buf.data() + (ir / kMR) * kMR * kc;
            float* ct = c + (ic + ir) * ldc + jc + jr;
            if (rows == kMR && cols == kNR) {
              micro_6x16(kc, ap, bp, ct, ldc);
            } else {
              std::fill(std::begin(edge), std::end(edge), 0.f);
              micro_6x16(kc, ap, bp, edge, kNR);
              for (int64_t i = 0; i < rows; ++i) {
                for (int64_t j = 0; j < cols; ++j) ct[i * ldc + j] += edge[i * kNR + j];
              }
            }
          }
        }
      }
    }
  }
}

float dot(const float* x, const float* y, int64_t n) {
  __m256 s0 = _mm256_setzero_ps();
  __m256 s1 = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 16 <= n; i += 16) {
    s0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), s0);
    s1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), s1);
  }
  alignas(32) float lanes[8];
  _mm256_store_ps(lanes, _mm256_add_ps(s0, s1));
  float s = 0.f;
  for (float v : lanes) s += v;
  for (; i < n; ++i) s += x[i] * y[i];
  return s;
}

void axpy(float alpha, const float* x, float* y, int64_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void add(const float* x, const float* y, float* out, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void mul(const float* x, const float* y, float* out, int64_t n) {
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void leaky_relu(const float* x, float slope, float* out, int64_t n) {
  const __m256 vs = _mm256_set1_ps(slope);
  const __m256 zero = _mm256_setzero_ps();
  int64_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 neg = _mm256_cmp_ps(v, zero, _CMP_LT_OQ);
    _mm256_storeu_ps(out + i, _mm256_blendv_ps(v, _mm256_mul_ps(v, vs), neg));
  }
  for (; i < n; ++i) out[i] = x[i] >= 0.f ? x[i] : slope * x[i];
}

}  // namespace gex::kernels::avx2
