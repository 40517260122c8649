#include "moco/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace moco::metrics {

namespace {

void check_shapes(const ImageSlice& a, const ImageSlice& b) {
  if (a.h != b.h || a.w != b.w) throw std::invalid_argument("metrics: shape mismatch");
}

}  // namespace

double psnr(const ImageSlice& a, const ImageSlice& b, double peak) {
  check_shapes(a, b);
  if (peak <= 0.0) throw std::invalid_argument("psnr: peak must be positive");
  double mse = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const double d = static_cast<double>(a.v[i]) - static_cast<double>(b.v[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(a.v.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

double ssim(const ImageSlice& a, const ImageSlice& b, double peak) {
  check_shapes(a, b);
  constexpr int kWin = 8;
  if (a.h < kWin || a.w < kWin) throw std::invalid_argument("ssim: image smaller than the window");
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  const double inv_n = 1.0 / (kWin * kWin);

  double acc = 0.0;
  int windows = 0;
  for (int r0 = 0; r0 + kWin <= a.h; ++r0) {
    for (int c0 = 0; c0 + kWin <= a.w; ++c0) {
      double sa = 0.0, sb = 0.0, saa = 0.0, sbb = 0.0, sab = 0.0;
      for (int r = r0; r < r0 + kWin; ++r)
        for (int c = c0; c < c0 + kWin; ++c) {
          const double x = a.at(r, c), y = b.at(r, c);
          sa += x;
          sb += y;
          saa += x * x;
          sbb += y * y;
          sab += x * y;
        }
      const double ma = sa * inv_n, mb = sb * inv_n;
      const double va = saa * inv_n - ma * ma;
      const double vb = sbb * inv_n - mb * mb;
      const double cov = sab * inv_n - ma * mb;
      acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++windows;
    }
  }
  return acc / windows;
}

}  // namespace moco::metrics
