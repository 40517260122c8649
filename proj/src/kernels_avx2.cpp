#include "moco/kernels.hpp"

#if MOCO_HAVE_AVX2_BUILD

#include <immintrin.h>

#include <cstddef>

namespace moco::kern::avx2 {

namespace {

inline float hsum256(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

}  // namespace

void gemm(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<size_t>(i) * n;
    if (!accumulate) {
      int j = 0;
      __m256 z = _mm256_setzero_ps();
      for (; j + 8 <= n; j += 8) _mm256_storeu_ps(crow + j, z);
      for (; j < n; ++j) crow[j] = 0.0f;
    }
    const float* arow = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      float aip = arow[p];
      if (aip == 0.0f) continue;
      __m256 va = _mm256_set1_ps(aip);
      const float* brow = b + static_cast<size_t>(p) * n;
      int j = 0;
      for (; j + 8 <= n; j += 8) {
        __m256 vc = _mm256_loadu_ps(crow + j);
        vc = _mm256_fmadd_ps(va, _mm256_loadu_ps(brow + j), vc);
        _mm256_storeu_ps(crow + j, vc);
      }
      for (; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

void axpy(int n, float alpha, const float* x, float* y) {
  __m256 va = _mm256_set1_ps(alpha);
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 vy = _mm256_loadu_ps(y + i);
    vy = _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), vy);
    _mm256_storeu_ps(y + i, vy);
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

float dot(int n, const float* a, const float* b) {
  __m256 acc = _mm256_setzero_ps();
  int i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
  float s = hsum256(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

float sum(int n, const float* x) {
  __m256 acc = _mm256_setzero_ps();
  int i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float s = hsum256(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

float asum(int n, const float* x) {
  const __m256 signmask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
  __m256 acc = _mm256_setzero_ps();
  int i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_add_ps(acc, _mm256_and_ps(signmask, _mm256_loadu_ps(x + i)));
  float s = hsum256(acc);
  for (; i < n; ++i) s += x[i] < 0.0f ? -x[i] : x[i];
  return s;
}

float sqdist(int n, const float* a, const float* b) {
  __m256 acc = _mm256_setzero_ps();
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 d = _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i));
    acc = _mm256_fmadd_ps(d, d, acc);
  }
  float s = hsum256(acc);
  for (; i < n; ++i) {
    float d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::pair<int, float> nearest_row(const float* v, const float* rows, int k, int d) {
  // vectorize the per-row distance; keep the scalar argmin scan so tie-breaks
  // match the reference exactly
  int best = 0;
  float best_d = sqdist(d, v, rows);
  for (int i = 1; i < k; ++i) {
    float di = sqdist(d, v, rows + static_cast<size_t>(i) * d);
    if (di < best_d) {
      best_d = di;
      best = i;
    }
  }
  return {best, best_d};
}

}  // namespace moco::kern::avx2

#endif  // MOCO_HAVE_AVX2_BUILD
