#pragma once

#include <cstdint>
#include <utility>

// Data-parallel inner loops used by the conv/linear layers and the vector
// quantizer. Each float kernel has a scalar reference implementation and an
// AVX2 variant; the dispatched entry points pick one at runtime. Double
// variants always run the scalar path (they back the finite-difference
// oracles, where reproducibility beats throughput).

namespace moco::kern {

enum class Mode { Auto, Scalar, Avx2 };

// Runtime selection. set_mode(Auto) re-probes the CPU; requesting Avx2 on a
// CPU without it throws. MOCO_KERNEL_MODE=scalar|avx2 overrides at startup.
void set_mode(Mode m);
Mode active_mode();  // resolved mode, never Auto
bool cpu_has_avx2();

// ---- dispatched float kernels ----------------------------------------------
// C[MxN] (+)= A[MxK] * B[KxN], row-major
void gemm(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
void axpy(int n, float alpha, const float* x, float* y);
float dot(int n, const float* a, const float* b);
float sum(int n, const float* x);
float asum(int n, const float* x);
float sqdist(int n, const float* a, const float* b);
// argmin over the k rows of a row-major kxd matrix; ties -> lowest index
std::pair<int, float> nearest_row(const float* v, const float* rows, int k, int d);

// ---- double: scalar reference only -----------------------------------------
void gemm(int m, int n, int k, const double* a, const double* b, double* c, bool accumulate);
void axpy(int n, double alpha, const double* x, double* y);
double dot(int n, const double* a, const double* b);
double sum(int n, const double* x);
double asum(int n, const double* x);
double sqdist(int n, const double* a, const double* b);
std::pair<int, double> nearest_row(const double* v, const double* rows, int k, int d);

// ---- scalar reference entry points (equivalence tests) ---------------------
namespace scalar {
void gemm(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
void axpy(int n, float alpha, const float* x, float* y);
float dot(int n, const float* a, const float* b);
float sum(int n, const float* x);
float asum(int n, const float* x);
float sqdist(int n, const float* a, const float* b);
std::pair<int, float> nearest_row(const float* v, const float* rows, int k, int d);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define MOCO_HAVE_AVX2_BUILD 1
namespace avx2 {
void gemm(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate);
void axpy(int n, float alpha, const float* x, float* y);
float dot(int n, const float* a, const float* b);
float sum(int n, const float* x);
float asum(int n, const float* x);
float sqdist(int n, const float* a, const float* b);
std::pair<int, float> nearest_row(const float* v, const float* rows, int k, int d);
}  // namespace avx2
#else
#define MOCO_HAVE_AVX2_BUILD 0
#endif

}  // namespace moco::kern
