#include <cstdlib>
#include <cstring>
#include <stdexcept>

#include "moco/kernels.hpp"

namespace moco::kern {

namespace {

bool probe_avx2() {
#if MOCO_HAVE_AVX2_BUILD
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Mode env_mode() {
  const char* e = std::getenv("MOCO_KERNEL_MODE");
  if (!e) return Mode::Auto;
  if (std::strcmp(e, "scalar") == 0) return Mode::Scalar;
  if (std::strcmp(e, "avx2") == 0) return Mode::Avx2;
  return Mode::Auto;
}

Mode resolve(Mode m) {
  if (m == Mode::Auto) m = probe_avx2() ? Mode::Avx2 : Mode::Scalar;
  if (m == Mode::Avx2 && !probe_avx2())
    throw std::runtime_error("kernels: AVX2 requested but not available on this CPU");
  return m;
}

Mode g_mode = resolve(env_mode());

}  // namespace

void set_mode(Mode m) { g_mode = resolve(m); }
Mode active_mode() { return g_mode; }
bool cpu_has_avx2() { return probe_avx2(); }

#if MOCO_HAVE_AVX2_BUILD
#define MOCO_DISPATCH(fn, ...) \
  return g_mode == Mode::Avx2 ? avx2::fn(__VA_ARGS__) : scalar::fn(__VA_ARGS__)
#else
#define MOCO_DISPATCH(fn, ...) return scalar::fn(__VA_ARGS__)
#endif

void gemm(int m, int n, int k, const float* a, const float* b, float* c, bool accumulate) {
  MOCO_DISPATCH(gemm, m, n, k, a, b, c, accumulate);
}
void axpy(int n, float alpha, const float* x, float* y) { MOCO_DISPATCH(axpy, n, alpha, x, y); }
float dot(int n, const float* a, const float* b) { MOCO_DISPATCH(dot, n, a, b); }
float sum(int n, const float* x) { MOCO_DISPATCH(sum, n, x); }
float asum(int n, const float* x) { MOCO_DISPATCH(asum, n, x); }
float sqdist(int n, const float* a, const float* b) { MOCO_DISPATCH(sqdist, n, a, b); }
std::pair<int, float> nearest_row(const float* v, const float* rows, int k, int d) {
  MOCO_DISPATCH(nearest_row, v, rows, k, d);
}

}  // namespace moco::kern
