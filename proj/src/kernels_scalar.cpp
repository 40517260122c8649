#include "moco/kernels.hpp"

#include <cstddef>

namespace moco::kern {

namespace {

template <typename T>
void gemm_impl(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    T* crow = c + static_cast<size_t>(i) * n;
    if (!accumulate)
      for (int j = 0; j < n; ++j) crow[j] = T(0);
    for (int p = 0; p < k; ++p) {
      T aip = a[static_cast<size_t>(i) * k + p];
      if (aip == T(0)) continue;
      const T* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <typename T>
void axpy_impl(int n, T alpha, const T* x, T* y) {
  for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T dot_impl(int n, const T* a, const T* b) {
  T s = T(0);
  for (int i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <typename T>
T sum_impl(int n, const T* x) {
  T s = T(0);
  for (int i = 0; i < n; ++i) s += x[i];
  return s;
}

template <typename T>
T asum_impl(int n, const T* x) {
  T s = T(0);
  for (int i = 0; i < n; ++i) s += x[i] < T(0) ? -x[i] : x[i];
  return s;
}

template <typename T>
T sqdist_impl(int n, const T* a, const T* b) {
  T s = T(0);
  for (int i = 0; i < n; ++i) {
    T d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

template <typename T>
std::pair<int, T> nearest_row_impl(const T* v, const T* rows, int k, int d) {
  int best = 0;
  T best_d = sqdist_impl(d, v, rows);
  for (int i = 1; i < k; ++i) {
    T di = sqdist_impl(d, v, rows + static_cast<size_t>(i) * d);
    if (di < best_d) {
      best_d = di;
      best = i;
    }
  }
  return {best, best_d};
}

}  // namespace

namespace scalar {
void gemm(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate) {
  gemm_impl(m, n, k, a, b, c, accumulate);
}
void axpy(int n, float alpha, const float* x, float* y) { axpy_impl(n, alpha, x, y); }
float dot(int n, const float* a, const float* b) { return dot_impl(n, a, b); }
float sum(int n, const float* x) { return sum_impl(n, x); }
float asum(int n, const float* x) { return asum_impl(n, x); }
float sqdist(int n, const float* a, const float* b) { return sqdist_impl(n, a, b); }
std::pair<int, float> nearest_row(const float* v, const float* rows, int k, int d) {
  return nearest_row_impl(v, rows, k, d);
}
}  // namespace scalar

// double builds route straight to the reference loops
void gemm(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate) {
  gemm_impl(m, n, k, a, b, c, accumulate);
}
void axpy(int n, double alpha, const double* x, double* y) { axpy_impl(n, alpha, x, y); }
double dot(int n, const double* a, const double* b) { return dot_impl(n, a, b); }
double sum(int n, const double* x) { return sum_impl(n, x); }
double asum(int n, const double* x) { return asum_impl(n, x); }
double sqdist(int n, const double* a, const double* b) { return sqdist_impl(n, a, b); }
std::pair<int, double> nearest_row(const double* v, const double* rows, int k, int d) {
  return nearest_row_impl(v, rows, k, d);
}

}  // namespace moco::kern
