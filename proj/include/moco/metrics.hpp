#pragma once

#include "moco/motion_sim.hpp"

namespace moco::metrics {

// 10*log10(peak^2 / MSE); returns +infinity when MSE is exactly zero
double psnr(const ImageSlice& a, const ImageSlice& b, double peak);

// single-scale SSIM with uniform 8x8 sliding windows,
// C1 = (0.01*peak)^2, C2 = (0.03*peak)^2
double ssim(const ImageSlice& a, const ImageSlice& b, double peak = 1.0);

}  // namespace moco::metrics
